"""
Edge map -> lineament polylines.

Pixel-connectivity edge linking in four stages: trace 8-connected chains,
drop short chains, fit Douglas-Peucker polylines, then greedily link
polylines whose end tangents agree and whose end points are close.

Coordinates are pixel coordinates ``(x, y) = (col, row)`` of pixel centres;
azimuths are degrees clockwise from grid north, folded into [0, 180).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

from . import enhance
from .detect import CannyParams, EdgeMap, canny, check_range
from .raster import GeoRef, MultibandRaster

CURVE_LENGTH_RANGE = (10, 50)
LINE_FITTING_ERROR_RANGE = (2, 5)
ANGULAR_DIFFERENCE_RANGE = (3, 20)
LINKING_DISTANCE_RANGE = (10, 50)

_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class ExtractionParams:
    filter_radius: int = 5
    edge_gradient: float = 50.0
    curve_length: int = 50
    line_fitting_error: float = 5.0
    angular_difference: float = 10.0
    linking_distance: float = 50.0
    force: bool = False

    def __post_init__(self):
        check_range("curve_length", self.curve_length, *CURVE_LENGTH_RANGE, self.force)
        check_range("line_fitting_error", self.line_fitting_error, *LINE_FITTING_ERROR_RANGE, self.force)
        check_range("angular_difference", self.angular_difference, *ANGULAR_DIFFERENCE_RANGE, self.force)
        check_range("linking_distance", self.linking_distance, *LINKING_DISTANCE_RANGE, self.force)
        self.canny  # validates the detector half

    @property
    def canny(self) -> CannyParams:
        return CannyParams(self.filter_radius, self.edge_gradient, self.force)


def azimuth(dx, dy):
    """Azimuth of pixel-space displacement(s), folded into [0, 180).

    ``dy`` is in row units (pointing south), hence the sign flip.
    """
    a = np.degrees(np.arctan2(dx, -np.asarray(dy, dtype=np.float64))) % 180.0
    return np.where(a >= 180.0, 0.0, a)


def axial_mean(angles, weights) -> float:
    """Weighted mean of undirected angles (degrees mod 180)."""
    angles = np.radians(np.asarray(angles, dtype=np.float64) * 2.0)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.sum() <= 0:
        return 0.0
    m = math.degrees(math.atan2(np.sum(weights * np.sin(angles)), np.sum(weights * np.cos(angles)))) / 2.0
    m %= 180.0
    return 0.0 if m >= 180.0 else m


def angle_difference(a, b):
    """Smallest difference between undirected azimuths, in [0, 90]."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % 180.0
    return np.minimum(d, 180.0 - d)


@dataclass(frozen=True, eq=False)
class Lineament:
    vertices: np.ndarray
    id: int = 0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) > 1:
            keep = np.ones(len(v), dtype=bool)
            keep[1:] = np.any(v[1:] != v[:-1], axis=1)
            v = v[keep]
        if len(v) < 2:
            raise ValueError("a lineament needs at least two distinct vertices")
        if not np.isfinite(v).all():
            raise ValueError("lineament vertices must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)

    def segment_lengths(self) -> np.ndarray:
        return np.hypot(*np.diff(self.vertices, axis=0).T)

    def segment_azimuths(self) -> np.ndarray:
        d = np.diff(self.vertices, axis=0)
        return azimuth(d[:, 0], d[:, 1])

    def pixel_length(self) -> float:
        return float(self.segment_lengths().sum())

    def mean_azimuth(self) -> float:
        return axial_mean(self.segment_azimuths(), self.segment_lengths())

    def key(self) -> tuple:
        return tuple(self.vertices.ravel().tolist())


@dataclass(frozen=True, eq=False)
class LineamentSet:
    lineaments: tuple
    georef: GeoRef = GeoRef()
    provenance: str = ""

    def __post_init__(self):
        lins = tuple(self.lineaments)
        ids = [l.id for l in lins]
        if len(set(ids)) != len(ids):
            raise ValueError("lineament ids must be unique")
        object.__setattr__(self, "lineaments", lins)

    def __len__(self):
        return len(self.lineaments)

    def __iter__(self):
        return iter(self.lineaments)

    def total_length(self) -> float:
        return float(sum(l.pixel_length() for l in self.lineaments))

    def renumbered(self, start: int = 0) -> "LineamentSet":
        return LineamentSet(tuple(Lineament(l.vertices, start + i) for i, l in enumerate(self.lineaments)),
                            self.georef, self.provenance)


# ---------------------------------------------------------------------------
# tracing
# ---------------------------------------------------------------------------

def thin_edges(e: EdgeMap) -> EdgeMap:
    """Remove staircase corner pixels so each curve is a minimal 8-path."""
    return EdgeMap(thin(e.edges), e.georef)


def _degree(mask: np.ndarray) -> np.ndarray:
    k = np.ones((3, 3), dtype=np.int32)
    k[1, 1] = 0
    return ndimage.convolve(mask.astype(np.int32), k, mode="constant", cval=0) * mask


def trace_curves(e: EdgeMap) -> list:
    """Split an edge map into 8-connected pixel chains.

    Pixels with more than two edge neighbours are junctions: they are held
    back while the simple curves are traced, then appended to the end of an
    adjacent chain (lowest chain index first). Each edge pixel ends up in
    exactly one chain. Chains are lists of (row, col).
    """
    edges = np.asarray(e.edges, dtype=bool)
    h, w = edges.shape
    deg = _degree(edges)
    junction = edges & (deg > 2)
    simple = edges & ~junction
    sdeg = _degree(simple)
    visited = np.zeros_like(edges)
    chains: list = []

    def nbrs(r, c, mask):
        for dr, dc in _NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and mask[rr, cc]:
                yield rr, cc

    def walk(r, c):
        chain = [(r, c)]
        visited[r, c] = True
        while True:
            nxt = None
            for rr, cc in nbrs(r, c, simple):
                if not visited[rr, cc]:
                    nxt = (rr, cc)
                    break
            if nxt is None:
                return chain
            r, c = nxt
            visited[r, c] = True
            chain.append(nxt)

    # open curves start at end points, remaining pixels lie on closed loops
    for r, c in zip(*np.nonzero(simple & (sdeg <= 1))):
        if not visited[r, c]:
            chains.append(walk(r, c))
    for r, c in zip(*np.nonzero(simple)):
        if not visited[r, c]:
            chains.append(walk(r, c))

    pending = [tuple(p) for p in zip(*np.nonzero(junction))]
    owner = {}
    for i, ch in enumerate(chains):
        owner[ch[0]] = i
        owner[ch[-1]] = i

    def adjacent(p, q):
        return max(abs(p[0] - q[0]), abs(p[1] - q[1])) == 1

    progress = True
    while pending and progress:
        progress = False
        left = []
        for p in pending:
            target = None
            for rr, cc in nbrs(p[0], p[1], edges):
                i = owner.get((rr, cc))
                if i is not None and (target is None or i < target[0]):
                    target = (i, (rr, cc))
            if target is None:
                left.append(p)
                continue
            i, end = target
            ch = chains[i]
            if ch[-1] == end:
                if len(ch) > 1:
                    del owner[end]
                ch.append(p)
            else:
                del owner[end]
                ch.insert(0, p)
            owner[ch[0]] = i
            owner[ch[-1]] = i
            progress = True
        pending = left

    # isolated junction clusters become chains of their own
    if pending:
        rest = np.zeros_like(edges)
        for p in pending:
            rest[p] = True
        lab, n = ndimage.label(rest, structure=np.ones((3, 3)))
        for k in range(1, n + 1):
            pts = sorted(zip(*np.nonzero(lab == k)))
            chain = [pts.pop(0)]
            while pts:
                j = next((j for j, q in enumerate(pts) if adjacent(chain[-1], q)), 0)
                chain.append(pts.pop(j))
            chains.append([tuple(map(int, q)) for q in chain])
    return [[(int(r), int(c)) for r, c in ch] for ch in chains]


def drop_short(chains: Sequence, curve_length: int) -> list:
    return [ch for ch in chains if len(ch) >= curve_length]


# ---------------------------------------------------------------------------
# polyline fitting
# ---------------------------------------------------------------------------

def point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to segment ab."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def douglas_peucker(pts: np.ndarray, tolerance: float) -> np.ndarray:
    """Indices of the vertices kept by Douglas-Peucker simplification."""
    n = len(pts)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = point_segment_distance(pts[i + 1:j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] > tolerance:
            k += i + 1
            keep[k] = True
            stack.append((k, j))
            stack.append((i, k))
    return np.flatnonzero(keep)


def fit_polyline(chain, line_fitting_error: float, id: int = 0) -> Lineament:
    """Simplify a pixel chain [(row, col), ...] to a polyline in (x, y)."""
    if len(chain) < 2:
        raise ValueError("a chain needs at least two pixels")
    rc = np.asarray(chain, dtype=np.float64)
    pts = rc[:, ::-1]
    idx = douglas_peucker(pts, line_fitting_error)
    verts = pts[idx]
    if len(verts) == 2 and np.all(verts[0] == verts[1]):
        # closed loop: keep the farthest pixel so the polyline is not degenerate
        far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
        verts = np.vstack([pts[0], pts[far], pts[-1]])
    return Lineament(verts, id)


# ---------------------------------------------------------------------------
# linking
# ---------------------------------------------------------------------------

def _end_info(lin: Lineament):
    v = lin.vertices
    # (point, tangent azimuth of terminal segment) for start and end
    return ((v[0], float(azimuth(v[1, 0] - v[0, 0], v[1, 1] - v[0, 1]))),
            (v[-1], float(azimuth(v[-1, 0] - v[-2, 0], v[-1, 1] - v[-2, 1]))))


def link_candidates(lins: Sequence[Lineament], angular_difference: float, linking_distance: float) -> list:
    """Sorted merge candidates ``(gap, id_a, id_b, end_a, end_b, ea, eb)``.

    ``ea``/``eb`` index end points as ``2 * position + end`` (end 0 is the
    first vertex). The candidate set only grows when either threshold is
    raised; the greedy merge count built on it need not.
    """
    lins = list(lins)
    n = len(lins)
    ids = np.array([l.id for l in lins])
    pts = np.empty((2 * n, 2))
    az = np.empty(2 * n)
    for i, l in enumerate(lins):
        (p0, a0), (p1, a1) = _end_info(l)
        pts[2 * i], az[2 * i] = p0, a0
        pts[2 * i + 1], az[2 * i + 1] = p1, a1

    from scipy.spatial import cKDTree
    tree = cKDTree(pts)
    pairs = tree.query_pairs(linking_distance, output_type="ndarray")
    cand = []
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        ok = (a // 2 != b // 2)
        gap = np.hypot(*(pts[a] - pts[b]).T)
        ok &= gap <= linking_distance
        ok &= angle_difference(az[a], az[b]) <= angular_difference
        for ea, eb, g in zip(a[ok], b[ok], gap[ok]):
            if ids[ea // 2] > ids[eb // 2]:
                ea, eb = eb, ea
            # keyed by (id, end) so the result does not depend on input order
            cand.append((float(g), int(ids[ea // 2]), int(ids[eb // 2]), int(ea % 2), int(eb % 2),
                         int(ea), int(eb)))
    cand.sort()
    return cand


def link_polylines(lset, angular_difference: float = 10.0, linking_distance: float = 50.0,
                   georef: GeoRef | None = None, provenance: str = "") -> LineamentSet:
    """Greedy closest-first joining of polyline end points.

    A pair of end points (on different polylines) is a candidate when the
    gap is at most ``linking_distance`` and the terminal-segment azimuths
    differ by at most ``angular_difference`` (mod 180). Merging never
    changes the free ends of the pieces involved, so the candidate list is
    computed once and consumed in (gap, lower id, higher id) order. Each
    merge puts the piece owning the lower-id end point first.
    """
    if isinstance(lset, LineamentSet):
        lins = list(lset.lineaments)
        georef = lset.georef if georef is None else georef
        provenance = provenance or lset.provenance
    else:
        lins = list(lset)
    georef = georef or GeoRef()
    n = len(lins)
    if n < 2:
        return LineamentSet(tuple(lins), georef, provenance)

    cand = link_candidates(lins, angular_difference, linking_distance)

    # union-find over polylines; each group keeps its merged vertex array
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    verts = {i: lins[i].vertices.copy() for i in range(n)}
    free = [True] * (2 * n)
    # group -> (end-point id at vertex 0, end-point id at vertex -1)
    ends = {i: (2 * i, 2 * i + 1) for i in range(n)}

    for *_, ea, eb in cand:
        if not (free[ea] and free[eb]):
            continue
        ga, gb = find(ea // 2), find(eb // 2)
        if ga == gb:
            continue
        va, vb = verts[ga], verts[gb]
        sa, ta = ends[ga]
        sb, tb = ends[gb]
        # orient so that ea is the tail of A and eb the head of B
        if sa == ea:
            va, (sa, ta) = va[::-1], (ta, sa)
        if tb == eb:
            vb, (sb, tb) = vb[::-1], (tb, sb)
        merged = np.vstack([va, vb])
        keep_root, gone = (ga, gb) if lins[ga].id <= lins[gb].id else (gb, ga)
        parent[gone] = keep_root
        verts[keep_root] = merged
        ends[keep_root] = (sa, tb)
        del verts[gone], ends[gone]
        free[ea] = free[eb] = False

    out = [Lineament(verts[r], lins[r].id) for r in sorted(verts, key=lambda r: lins[r].id)]
    return LineamentSet(tuple(out), georef, provenance)


# ---------------------------------------------------------------------------
# full extraction
# ---------------------------------------------------------------------------

def extract_edges(e: EdgeMap, p: ExtractionParams, provenance: str = "") -> LineamentSet:
    chains = drop_short(trace_curves(thin_edges(e)), p.curve_length)
    polys = [fit_polyline(ch, p.line_fitting_error, i) for i, ch in enumerate(chains)]
    return link_polylines(polys, p.angular_difference, p.linking_distance, e.georef, provenance)


def extract_images(images: dict, p: ExtractionParams, workers: int = 1) -> list:
    """Run Canny and vectorization on each named image.

    Returns ``[(name, EdgeMap, LineamentSet), ...]`` in the order of ``images``.
    """

    def run(item):
        name, im = item
        e = canny(im, p.canny)
        return name, e, extract_edges(e, p, name)

    items = list(images.items())
    if workers > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(run, items))
    return [run(it) for it in items]


def extract(img: MultibandRaster, p: ExtractionParams = ExtractionParams(),
            mode: str | None = None, workers: int = 1) -> LineamentSet:
    """Canny -> trace -> drop_short -> fit -> link on one greyscale image.

    With ``mode`` set to ``"directional"`` or ``"laplacian"`` the image is
    first edge-enhanced; the four directional images are processed
    independently and their lineaments united (exact duplicates dropped).
    """
    images = {"": img} if mode is None else enhance.enhance(img, mode)
    parts = [lset for _, _, lset in extract_images(images, p, workers)]
    return union(parts, img.georef, mode or "")


def union(parts: Sequence[LineamentSet], georef: GeoRef, provenance: str = "") -> LineamentSet:
    seen = set()
    out = []
    for part in parts:
        for lin in part:
            k = lin.key()
            if k in seen:
                continue
            seen.add(k)
            out.append(Lineament(lin.vertices, len(out)))
    return LineamentSet(tuple(out), georef, provenance)
