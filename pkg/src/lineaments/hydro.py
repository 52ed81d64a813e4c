"""
Stream masking from a DEM.

Priority-flood sink filling, D8 flow directions and accumulation, stream
thresholding, Euclidean buffering and removal of lineaments that run
mostly inside the stream buffer.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import GeoRef, MultibandRaster
from .vectorize import LineamentSet

# ESRI D8 codes in tie-break order: E, SE, S, SW, W, NW, N, NE
D8_CODES = (1, 2, 4, 8, 16, 32, 64, 128)
D8_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
_CODE_TO_OFFSET = dict(zip(D8_CODES, D8_OFFSETS))
_DIST = tuple(math.sqrt(2.0) if dr and dc else 1.0 for dr, dc in D8_OFFSETS)


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowGrid:
    """D8 direction codes (0 = no outflow) and upslope cell counts.

    Cells on the border with no lower neighbour drain off the grid; their
    code points outward.
    """

    direction: np.ndarray
    accumulation: np.ndarray
    georef: GeoRef

    def downstream(self, r: int, c: int):
        """Receiving cell of (r, c), or None when flow leaves the grid."""
        code = int(self.direction[r, c])
        if code == 0:
            return None
        dr, dc = _CODE_TO_OFFSET[code]
        rr, cc = r + dr, c + dc
        h, w = self.direction.shape
        if 0 <= rr < h and 0 <= cc < w:
            return rr, cc
        return None


@dataclass(frozen=True, eq=False)
class StreamMask:
    mask: np.ndarray
    buffer_radius_px: int
    georef: GeoRef

    def as_raster(self) -> MultibandRaster:
        return MultibandRaster(self.mask.astype(np.float64)[None], None, self.georef)


def fill_sinks(dem: MultibandRaster) -> MultibandRaster:
    """Priority-flood depression filling (no epsilon; flats are resolved in D8)."""
    z = dem.plane
    valid = dem.valid
    if not valid.any():
        raise ValueError("DEM has no valid cells")
    h, w = z.shape
    filled = np.where(valid, z, np.nan).astype(np.float64)
    done = ~valid.copy()
    heap = []
    # seeds: valid cells on the grid border or next to nodata
    edge = np.zeros((h, w), dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    edge |= ndimage.binary_dilation(~valid, structure=np.ones((3, 3)))
    edge &= valid
    for r, c in zip(*np.nonzero(edge)):
        heapq.heappush(heap, (filled[r, c], int(r), int(c)))
        done[r, c] = True
    while heap:
        zc, r, c = heapq.heappop(heap)
        for dr, dc in D8_OFFSETS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and not done[rr, cc]:
                done[rr, cc] = True
                if filled[rr, cc] < zc:
                    filled[rr, cc] = zc
                heapq.heappush(heap, (filled[rr, cc], rr, cc))
    return dem.replace(samples=np.where(valid, filled, 0.0)[None])


def d8_flow(dem_filled: MultibandRaster) -> FlowGrid:
    """Steepest-descent D8 directions with flat resolution, plus accumulation.

    Off-grid neighbours take the linearly extrapolated elevation of the
    border, so a surface that keeps falling past the edge drains outward.
    """
    z = dem_filled.plane
    valid = dem_filled.valid
    h, w = z.shape
    zn = np.where(valid, z, np.nan)
    zp = np.pad(zn, 1, mode="reflect", reflect_type="odd") if min(h, w) > 1 else np.pad(zn, 1, mode="edge")
    best = np.zeros((h, w))
    code = np.zeros((h, w), dtype=np.int32)
    for k, (dr, dc) in enumerate(D8_OFFSETS):
        nb = zp[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        with np.errstate(invalid="ignore"):
            drop = (z - nb) / _DIST[k]
        better = np.nan_to_num(drop, nan=-np.inf) > best
        best = np.where(better, drop, best)
        code = np.where(better, D8_CODES[k], code)
    code[~valid] = 0

    # cells without a downhill neighbour: border cells drain outward,
    # interior flats flow toward the nearest resolved cell (BFS)
    unresolved = valid & (code == 0)
    queue = deque()
    for r, c in zip(*np.nonzero(unresolved)):
        for k, (dr, dc) in enumerate(D8_OFFSETS):
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w) or not valid[rr, cc]:
                code[r, c] = D8_CODES[k]
                break
    resolved = valid & (code != 0)
    for r, c in zip(*np.nonzero(resolved)):
        queue.append((int(r), int(c)))
    while queue:
        r, c = queue.popleft()
        for k, (dr, dc) in enumerate(D8_OFFSETS):
            rr, cc = r - dr, c - dc      # neighbour that would flow into (r, c) via code k
            if 0 <= rr < h and 0 <= cc < w and valid[rr, cc] and code[rr, cc] == 0 \
                    and z[rr, cc] == z[r, c]:
                code[rr, cc] = D8_CODES[k]
                queue.append((rr, cc))

    return FlowGrid(code, flow_accumulation(code, valid), dem_filled.georef)


def _receivers(code: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Flat index of the downstream cell, -1 where flow leaves the grid."""
    h, w = code.shape
    rec = np.full(h * w, -1, dtype=np.int64)
    rows, cols = np.nonzero(valid & (code != 0))
    for cd, (dr, dc) in _CODE_TO_OFFSET.items():
        sel = code[rows, cols] == cd
        rr, cc = rows[sel] + dr, cols[sel] + dc
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        inside[inside] &= valid[rr[inside], cc[inside]]
        src = rows[sel] * w + cols[sel]
        rec[src[inside]] = rr[inside] * w + cc[inside]
    return rec


def flow_accumulation(code: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Cells draining through each cell (itself included), in topological order."""
    h, w = code.shape
    rec = _receivers(code, valid)
    n = h * w
    acc = valid.ravel().astype(np.int64)
    indeg = np.bincount(rec[rec >= 0], minlength=n)
    stack = list(np.flatnonzero((indeg == 0) & valid.ravel())[::-1])
    seen = 0
    while stack:
        i = stack.pop()
        seen += 1
        j = rec[i]
        if j >= 0:
            acc[j] += acc[i]
            indeg[j] -= 1
            if indeg[j] == 0:
                stack.append(j)
    if seen != int(valid.sum()):
        raise RuntimeError("flow directions contain a cycle")
    return acc.reshape(h, w)


def streams(f: FlowGrid, min_cells: int = 1000) -> StreamMask:
    if min_cells < 1:
        raise ValueError("min_cells must be >= 1")
    return StreamMask(f.accumulation >= min_cells, 0, f.georef)


def buffer(mask: StreamMask, radius_px: int = 5) -> StreamMask:
    """Cells within Euclidean distance ``radius_px`` of a stream cell."""
    if radius_px < 0:
        raise ValueError("radius must be >= 0")
    m = mask.mask
    if radius_px == 0 or not m.any():
        return StreamMask(m.copy(), mask.buffer_radius_px + radius_px, mask.georef)
    r = int(radius_px)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = yy * yy + xx * xx <= r * r
    out = ndimage.binary_dilation(m, structure=disk)
    return StreamMask(out, mask.buffer_radius_px + radius_px, mask.georef)


def fraction_inside(vertices: np.ndarray, mask: np.ndarray, step: float = 0.5) -> float:
    """Share of a polyline's length inside ``mask`` (0.5-px sampling).

    Each segment is cut into pieces of at most ``step`` px and each piece is
    classified by the pixel containing its midpoint.
    """
    h, w = mask.shape
    inside = total = 0.0
    for a, b in zip(vertices[:-1], vertices[1:]):
        seg = float(np.hypot(*(b - a)))
        if seg == 0:
            continue
        n = max(1, int(math.ceil(seg / step)))
        t = (np.arange(n) + 0.5) / n
        pts = a + t[:, None] * (b - a)
        col = np.rint(pts[:, 0]).astype(int)
        row = np.rint(pts[:, 1]).astype(int)
        ok = (row >= 0) & (row < h) & (col >= 0) & (col < w)
        hit = np.zeros(n, dtype=bool)
        hit[ok] = mask[row[ok], col[ok]]
        inside += seg * hit.sum() / n
        total += seg
    return inside / total if total > 0 else 0.0


def remove_stream_lineaments(lset: LineamentSet, buf: StreamMask) -> LineamentSet:
    """Drop lineaments with more than half their length inside the buffer."""
    if not lset.georef.aligned(buf.georef):
        raise GridMismatchError("lineament set and stream mask have different georefs")
    kept = tuple(l for l in lset if fraction_inside(l.vertices, buf.mask) <= 0.5)
    return LineamentSet(kept, lset.georef, lset.provenance)


def stream_mask_from_dem(dem: MultibandRaster, min_cells: int = 1000, radius_px: int = 5):
    """fill -> D8 -> threshold -> buffer; returns (flow, streams, buffered)."""
    flow = d8_flow(fill_sinks(dem))
    s = streams(flow, min_cells)
    return flow, s, buffer(s, radius_px)
