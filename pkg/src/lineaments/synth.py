"""
Synthetic test scenes with known lineaments, and truth scoring.

A scene is a smooth, band-correlated background with fault-like contrast
features (a sharp step on one side that relaxes linearly over ``falloff_px``
on the other, tapered to zero over ``taper_px`` inside both ends), a dark
stream channel that is also carved into the DEM, per-band Gaussian noise,
and a set of occurrence points.

The gentle falloff and taper keep their gradients well below the step's,
so a fault yields one Canny edge along its trace and none across its ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .raster import GeoRef, MultibandRaster, PointSet
from .vectorize import Lineament, LineamentSet, angle_difference, point_segment_distance


@dataclass(frozen=True)
class LineSpec:
    x: float            # centre, pixel column
    y: float            # centre, pixel row
    azimuth: float      # degrees clockwise from north
    length: float       # pixels
    contrast: float     # reflectance step (band gain 1)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 512
    height: int = 512
    bands: int = 6
    lines: tuple = ()
    noise_sigma: float = 5 / 255
    band_gains: tuple = (1.0, 0.9, 0.8, 1.1, 0.7, 1.2)
    band_offsets: tuple = (0.10, 0.12, 0.14, 0.16, 0.18, 0.20)
    background_amplitude: float = 0.03
    falloff_px: float = 90.0
    plateau_px: float = 6.0
    taper_px: float = 20.0
    dem_tilt: float = 1.0            # elevation drop per pixel toward the south
    dem_side_slope: float = 1.0       # valley-side slope toward the stream
    dem_base: float = 1000.0
    stream: tuple | None = (330.0, 15.0, 400.0)   # (mean column, amplitude, wavelength), north->south
    stream_contrast: float = -0.08
    stream_width_px: float = 2.0
    n_occurrences: int = 40
    pixel_size: float = 30.0
    origin: tuple = (400000.0, 7200000.0)
    epsg_hint: str = "EPSG:32750"

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.bands < 1:
            raise ValueError("degenerate scene: width, height and bands must be >= 1")
        if len(self.band_gains) < self.bands or len(self.band_offsets) < self.bands:
            raise ValueError("need a gain and an offset for every band")


def default_lines() -> tuple:
    """Twelve faults; the 100-110 degree class dominates by length."""
    return (
        LineSpec(150, 80, 104, 220, 0.12),
        LineSpec(380, 150, 106, 200, 0.10),
        LineSpec(140, 200, 102, 180, -0.11),
        LineSpec(330, 420, 107, 200, 0.12),
        LineSpec(160, 470, 103, 190, -0.10),
        LineSpec(380, 270, 105, 170, 0.10),
        LineSpec(60, 330, 25, 120, 0.10),
        LineSpec(470, 330, 28, 110, -0.12),
        LineSpec(250, 330, 0, 110, 0.11),
        LineSpec(470, 60, 45, 90, 0.10),
        LineSpec(240, 40, 150, 90, -0.10),
        LineSpec(40, 100, 165, 110, 0.12),
    )


def default_scene() -> SceneSpec:
    return SceneSpec(lines=default_lines())


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    raster: MultibandRaster
    dem: MultibandRaster
    occurrences: PointSet
    truth: LineamentSet
    stream_path: np.ndarray         # (n, 2) pixel (x, y) along the channel
    albedo: np.ndarray              # noise-free single-band signal


def _line_endpoints(ls: LineSpec):
    a = math.radians(ls.azimuth)
    ux, uy = math.sin(a), -math.cos(a)      # row axis points south
    h = ls.length / 2
    return np.array([ls.x - h * ux, ls.y - h * uy]), np.array([ls.x + h * ux, ls.y + h * uy])


def _fault_field(spec: SceneSpec, ls: LineSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Contrast of one fault at sample positions (pixel coordinates)."""
    a = math.radians(ls.azimuth)
    ux, uy = math.sin(a), -math.cos(a)
    nx, ny = -uy, ux                        # right-hand normal
    dx, dy = xs - ls.x, ys - ls.y
    t = dx * ux + dy * uy                   # along-strike
    d = dx * nx + dy * ny                   # across-strike
    half = ls.length / 2
    tp = spec.taper_px
    along = np.clip((half - np.abs(t)) / tp, 0.0, 1.0)
    fall = np.clip((d - spec.plateau_px) / spec.falloff_px, 0.0, 1.0)
    across = np.where(d >= 0, 1.0 - fall, 0.0)
    return ls.contrast * along * across


def _stream_cols(spec: SceneSpec, y: np.ndarray) -> np.ndarray:
    mean, amp, wl = spec.stream
    return mean + amp * np.sin(2 * np.pi * y / wl)


def _background(spec: SceneSpec, rng_geom: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    bg = np.zeros((spec.height, spec.width))
    for _ in range(4):
        kx, ky = rng_geom.uniform(-1, 1, 2) * 2 * np.pi / max(spec.width, spec.height) * 1.5
        ph = rng_geom.uniform(0, 2 * np.pi)
        bg += np.cos(kx * xx + ky * yy + ph)
    return spec.background_amplitude * bg / 4


def make_synthetic(spec: SceneSpec, seed: int = 0, supersample: int = 4) -> SyntheticScene:
    """Build a scene. Geometry is fixed by ``spec``; ``seed`` drives the noise."""
    h, w = spec.height, spec.width
    geo_rng = np.random.default_rng(12345)
    rng = np.random.default_rng(seed)
    georef = GeoRef(spec.origin[0], spec.origin[1], spec.pixel_size, spec.epsg_hint)

    # supersampled positions for anti-aliased edges
    s = supersample
    off = (np.arange(s) + 0.5) / s - 0.5
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    albedo = _background(spec, geo_rng)
    feat = np.zeros((h, w))
    for oy in off:
        for ox in off:
            sx, sy = xx + ox, yy + oy
            acc = np.zeros((h, w))
            for ls in spec.lines:
                acc += _fault_field(spec, ls, sx, sy)
            if spec.stream is not None:
                dist = np.abs(sx - _stream_cols(spec, sy))
                acc += np.where(dist <= spec.stream_width_px / 2, spec.stream_contrast, 0.0)
            feat += acc
    albedo = albedo + feat / (s * s)

    planes = []
    for b in range(spec.bands):
        clean = spec.band_offsets[b] + spec.band_gains[b] * albedo
        noise = rng.normal(0.0, spec.noise_sigma, (h, w)) if spec.noise_sigma > 0 else 0.0
        planes.append(clean + noise)
    raster = MultibandRaster(np.stack(planes), None, georef)

    # DEM: southward tilt plus a V valley along the stream
    if spec.stream is not None:
        valley = np.abs(xx - _stream_cols(spec, yy))
    else:
        valley = np.zeros((h, w))
    dem = spec.dem_base - spec.dem_tilt * yy + spec.dem_side_slope * valley
    dem_r = MultibandRaster(dem[None], None, georef)

    sy = np.arange(h, dtype=np.float64)
    stream_path = (np.column_stack([_stream_cols(spec, sy), sy]) if spec.stream is not None
                   else np.zeros((0, 2)))

    truth = LineamentSet(tuple(Lineament(np.vstack(_line_endpoints(ls)), i)
                               for i, ls in enumerate(spec.lines)), georef, "truth")

    # occurrences: most near faults, the rest scattered
    pts = []
    n_near = int(round(spec.n_occurrences * 0.75)) if spec.lines else 0
    for k in range(spec.n_occurrences):
        if k < n_near:
            ls = spec.lines[k % len(spec.lines)]
            p0, p1 = _line_endpoints(ls)
            t = geo_rng.uniform(0.1, 0.9)
            px, py = p0 + t * (p1 - p0) + geo_rng.normal(0, 3, 2)
        else:
            px, py = geo_rng.uniform(0, w - 1), geo_rng.uniform(0, h - 1)
        px, py = float(np.clip(px, 0, w - 1)), float(np.clip(py, 0, h - 1))
        x, y = georef.to_world(px, py)
        pts.append((float(x), float(y), f"occ{k:03d}"))
    return SyntheticScene(raster, dem_r, PointSet.from_points(pts), truth, stream_path, albedo)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def _sample(lset: LineamentSet, step: float = 0.5):
    """Dense samples along every segment: points, segment lengths, azimuths."""
    pts, wts, az = [], [], []
    for lin in lset:
        v = lin.vertices
        for a, b, seg_az in zip(v[:-1], v[1:], lin.segment_azimuths()):
            seg = float(np.hypot(*(b - a)))
            n = max(1, int(math.ceil(seg / step)))
            t = (np.arange(n) + 0.5) / n
            pts.append(a + t[:, None] * (b - a))
            wts.append(np.full(n, seg / n))
            az.append(np.full(n, seg_az))
    if not pts:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
    return np.vstack(pts), np.concatenate(wts), np.concatenate(az)


def _nearest(pts: np.ndarray, lset: LineamentSet):
    """Distance from each point to the nearest segment and that segment's azimuth."""
    best = np.full(len(pts), np.inf)
    best_az = np.zeros(len(pts))
    for lin in lset:
        v = lin.vertices
        for a, b, seg_az in zip(v[:-1], v[1:], lin.segment_azimuths()):
            d = point_segment_distance(pts, a, b)
            better = d < best
            best[better] = d[better]
            best_az[better] = seg_az
    return best, best_az


@dataclass(frozen=True)
class TruthScore:
    recall_len: float
    precision_len: float
    azimuth_err: float

    def to_dict(self) -> dict:
        return {"recall_len": self.recall_len, "precision_len": self.precision_len,
                "azimuth_err": self.azimuth_err}


def score_against_truth(found: LineamentSet, truth: LineamentSet, tol_px: float = 3.0) -> TruthScore:
    """Length-weighted recall/precision of found geometry within ``tol_px`` of truth."""
    if not found.georef.aligned(truth.georef):
        raise ValueError("found and truth sets have different georefs")
    tp, tw, taz = _sample(truth)
    fp, fw, faz = _sample(found)
    recall = precision = 0.0
    az_err = 0.0
    if len(tp) and len(fp):
        d, _ = _nearest(tp, found)
        recall = float(tw[d <= tol_px].sum() / tw.sum())
        d2, near_az = _nearest(fp, truth)
        hit = d2 <= tol_px
        precision = float(fw[hit].sum() / fw.sum())
        if hit.any():
            az_err = float(np.sum(fw[hit] * angle_difference(faz[hit], near_az[hit])) / fw[hit].sum())
    return TruthScore(recall, precision, az_err)
