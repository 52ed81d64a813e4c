"""
Lineament analyses: length density with fuzzy scaling, rose histograms,
occurrence/density association curves and FCC band-triplet ranking.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .raster import GeoRef, MultibandRaster, PointSet, write_ascii_grid
from .vectorize import LineamentSet

logger = logging.getLogger(__name__)

N_ROSE_BINS = 18
THRESHOLDS = tuple(k / 20 for k in range(21))


@dataclass(frozen=True, eq=False)
class DensityGrid:
    raw: np.ndarray             # summed length (world units) per coarse cell
    fuzzy: np.ndarray           # linear min-max scaling of raw into [0, 1]
    cell_size_px: int
    search_radius_px: float
    georef: GeoRef              # georef of the coarse grid

    def as_raster(self) -> MultibandRaster:
        return MultibandRaster(self.fuzzy[None], None, self.georef)

    def cell_of(self, x_world, y_world):
        """(row, col) of the coarse cell containing a world point (may be outside)."""
        g = self.georef
        col = np.floor((np.asarray(x_world) - g.origin_x) / g.pixel_size).astype(int)
        row = np.floor((g.origin_y - np.asarray(y_world)) / g.pixel_size).astype(int)
        return row, col


def fuzzify(raw: np.ndarray) -> np.ndarray:
    lo, hi = float(raw.min()), float(raw.max())
    if hi <= lo:
        return np.zeros_like(raw, dtype=np.float64)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def clipped_length(a: np.ndarray, b: np.ndarray, centres: np.ndarray, radius: float) -> np.ndarray:
    """Length of segment ab inside each disk (centre, radius), analytically."""
    d = b - a
    seg_len = math.hypot(*d)
    if seg_len == 0:
        return np.zeros(len(centres))
    u = d / seg_len
    # |a + t u - c|^2 = r^2  ->  t^2 + 2 t (u.(a-c)) + |a-c|^2 - r^2 = 0
    ac = a - centres
    bq = ac @ u
    cq = np.einsum("ij,ij->i", ac, ac) - radius * radius
    disc = bq * bq - cq
    out = np.zeros(len(centres))
    hit = disc > 0
    s = np.sqrt(disc[hit])
    t0 = np.clip(-bq[hit] - s, 0.0, seg_len)
    t1 = np.clip(-bq[hit] + s, 0.0, seg_len)
    out[hit] = t1 - t0
    return out


def density(lset: LineamentSet, shape: tuple, cell_size_px: int = 10,
            search_radius_px: float = 50.0, georef: GeoRef | None = None) -> DensityGrid:
    """Moving-window length density on a coarse grid over a raster of ``shape``.

    Each coarse cell sums the lineament length inside a disk of
    ``search_radius_px`` around its centre; lengths are in world units.
    """
    h, w = shape
    if h < 1 or w < 1:
        raise ValueError("empty raster extent")
    if cell_size_px < 1:
        raise ValueError("cell_size_px must be >= 1")
    if search_radius_px < cell_size_px:
        raise ValueError("search radius must be >= cell size")
    georef = georef or lset.georef
    nr, nc = math.ceil(h / cell_size_px), math.ceil(w / cell_size_px)
    cy = (np.arange(nr) + 0.5) * cell_size_px - 0.5
    cx = (np.arange(nc) + 0.5) * cell_size_px - 0.5
    centres = np.column_stack([np.repeat(cx[None], nr, 0).ravel(), np.repeat(cy[:, None], nc, 1).ravel()])
    raw = np.zeros(nr * nc)
    r = float(search_radius_px)
    for lin in lset:
        v = lin.vertices
        for a, b in zip(v[:-1], v[1:]):
            # only cells whose disks can touch the segment's bounding box
            lo = np.minimum(a, b) - r
            hi = np.maximum(a, b) + r
            near = np.flatnonzero((centres[:, 0] >= lo[0]) & (centres[:, 0] <= hi[0])
                                  & (centres[:, 1] >= lo[1]) & (centres[:, 1] <= hi[1]))
            if near.size:
                raw[near] += clipped_length(a, b, centres[near], r)
    raw = raw.reshape(nr, nc) * georef.pixel_size
    coarse = GeoRef(georef.origin_x, georef.origin_y, georef.pixel_size * cell_size_px, georef.epsg_hint)
    return DensityGrid(raw, fuzzify(raw), cell_size_px, r, coarse)


@dataclass(frozen=True, eq=False)
class RoseHistogram:
    length_sum: np.ndarray
    count: np.ndarray

    @property
    def empty(self) -> bool:
        return float(self.length_sum.sum()) == 0.0

    @property
    def length_pct(self) -> np.ndarray:
        t = self.length_sum.sum()
        return self.length_sum * (100.0 / t) if t > 0 else np.zeros(N_ROSE_BINS)

    @property
    def count_pct(self) -> np.ndarray:
        t = self.count.sum()
        return self.count * (100.0 / t) if t > 0 else np.zeros(N_ROSE_BINS)

    def dominant_bin(self) -> tuple:
        k = int(np.argmax(self.length_sum))
        return (10 * k, 10 * k + 10)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["bin_start_deg", "length_sum", "length_pct", "count", "count_pct"])
            lp, cp = self.length_pct, self.count_pct
            for k in range(N_ROSE_BINS):
                wr.writerow([10 * k, repr(float(self.length_sum[k])), repr(float(lp[k])),
                             int(self.count[k]), repr(float(cp[k]))])


def rose(lset: LineamentSet) -> RoseHistogram:
    """Length- and count-weighted azimuth histogram in 10-degree bins over [0, 180)."""
    lengths = np.zeros(N_ROSE_BINS)
    counts = np.zeros(N_ROSE_BINS, dtype=np.int64)
    for lin in lset:
        az = lin.segment_azimuths()
        ln = lin.segment_lengths()
        k = np.minimum((az // 10).astype(int), N_ROSE_BINS - 1)
        np.add.at(lengths, k, ln)
        np.add.at(counts, k, 1)
    return RoseHistogram(lengths, counts)


@dataclass(frozen=True)
class CorrelationCurve:
    thresholds: tuple
    pct_points: tuple
    auc: float
    n_points: int
    n_outside: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["threshold", "pct_points", "auc"])
            for t, p in zip(self.thresholds, self.pct_points):
                wr.writerow([repr(t), repr(p), ""])
            wr.writerow(["", "", repr(self.auc)])


def correlate_occurrences(d: DensityGrid, pts: PointSet) -> CorrelationCurve:
    """Share of occurrences in cells whose fuzzy density reaches each threshold.

    Points outside the grid count as below every threshold. AUC is the
    trapezoidal area under (threshold, share) with shares in [0, 1].
    """
    n = len(pts)
    row, col = d.cell_of(np.asarray(pts.xs, dtype=float), np.asarray(pts.ys, dtype=float))
    nr, nc = d.fuzzy.shape
    inside = (row >= 0) & (row < nr) & (col >= 0) & (col < nc)
    vals = np.full(n, -np.inf)
    vals[inside] = d.fuzzy[row[inside], col[inside]]
    n_out = int((~inside).sum())
    if n_out:
        logger.warning("%d occurrence point(s) fall outside the density grid", n_out)
    if n == 0:
        pct = [0.0] * len(THRESHOLDS)
    else:
        pct = [100.0 * float(np.sum(vals >= t)) / n for t in THRESHOLDS]
    frac = np.asarray(pct) / 100.0
    auc = float(np.sum((frac[1:] + frac[:-1]) / 2.0 * np.diff(THRESHOLDS)))
    return CorrelationCurve(THRESHOLDS, tuple(pct), auc, n, n_out)


@dataclass(frozen=True)
class TripletScore:
    bands: tuple        # 1-based band numbers
    score: float


def rank_fcc_triplets(r: MultibandRaster):
    """Band triplets ordered by summed pairwise |Pearson r| (lowest first).

    Returns ``(ranking, stddevs)``. A constant band is treated as perfectly
    correlated with everything.
    """
    if r.bands < 3:
        raise ValueError("need at least 3 bands to rank triplets")
    x = r.samples[:, r.valid]
    if x.shape[1] < 2:
        raise ValueError("need at least 2 valid pixels")
    xc = x - x.mean(axis=1, keepdims=True)
    sd = np.sqrt(np.mean(xc * xc, axis=1))
    corr = np.ones((r.bands, r.bands))
    for i in range(r.bands):
        for j in range(i + 1, r.bands):
            if sd[i] > 0 and sd[j] > 0:
                corr[i, j] = corr[j, i] = abs(float(np.mean(xc[i] * xc[j])) / (sd[i] * sd[j]))
    for i in np.flatnonzero(sd == 0):
        logger.warning("band %d is constant; treating it as fully correlated", i + 1)
    out = []
    for tri in itertools.combinations(range(r.bands), 3):
        a, b, c = tri
        out.append(TripletScore(tuple(t + 1 for t in tri), corr[a, b] + corr[a, c] + corr[b, c]))
    out.sort(key=lambda t: (t.score, t.bands))
    return out, sd


def write_density(d: DensityGrid, path) -> None:
    write_ascii_grid(d.as_raster(), path)
