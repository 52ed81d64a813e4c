"""Canny edge detection producing one-pixel-wide binary edge maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import GeoRef, MultibandRaster

FILTER_RADIUS_RANGE = (3, 8)
EDGE_GRADIENT_RANGE = (10, 70)


class ParameterError(ValueError):
    """A threshold outside its validated range."""


def check_range(name: str, value, lo, hi, force: bool = False) -> None:
    if not force and not (lo <= value <= hi):
        raise ParameterError(f"{name}={value} outside the validated range [{lo}, {hi}] "
                             "(use force to override)")


@dataclass(frozen=True)
class CannyParams:
    filter_radius: int = 5
    edge_gradient: float = 50.0
    force: bool = False

    def __post_init__(self):
        if int(self.filter_radius) != self.filter_radius or self.filter_radius < 1:
            raise ParameterError(f"filter_radius must be a positive integer, got {self.filter_radius}")
        if not self.edge_gradient > 0:
            raise ParameterError(f"edge_gradient must be positive, got {self.edge_gradient}")
        check_range("filter_radius", self.filter_radius, *FILTER_RADIUS_RANGE, self.force)
        check_range("edge_gradient", self.edge_gradient, *EDGE_GRADIENT_RANGE, self.force)


@dataclass(frozen=True, eq=False)
class EdgeMap:
    edges: np.ndarray
    georef: GeoRef

    @property
    def height(self) -> int:
        return self.edges.shape[0]

    @property
    def width(self) -> int:
        return self.edges.shape[1]

    def count(self) -> int:
        return int(self.edges.sum())

    def as_raster(self) -> MultibandRaster:
        return MultibandRaster(self.edges.astype(np.float64)[None], None, self.georef)


def gaussian_kernel(radius: int) -> np.ndarray:
    sigma = radius / 2.0
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gradient_magnitude(plane: np.ndarray, radius: int):
    """Smoothed Sobel gradients; returns (magnitude, gx, gy)."""
    k = gaussian_kernel(radius)
    sm = ndimage.correlate1d(plane, k, axis=0, mode="nearest")
    sm = ndimage.correlate1d(sm, k, axis=1, mode="nearest")
    gx = ndimage.sobel(sm, axis=1, mode="nearest")
    gy = ndimage.sobel(sm, axis=0, mode="nearest")
    return np.hypot(gx, gy), gx, gy


# neighbour offsets (drow, dcol) along the gradient for each direction sector
_SECTOR_OFFSETS = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}


def non_maxima_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are ridge maxima across the quantized gradient direction.

    Ties are broken asymmetrically (>= behind, > ahead) so a plateau two
    pixels wide keeps exactly one pixel.
    """
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int8)
    sector[(ang >= 22.5) & (ang < 67.5)] = 1
    sector[(ang >= 67.5) & (ang < 112.5)] = 2
    sector[(ang >= 112.5) & (ang < 157.5)] = 3
    padded = np.pad(mag, 1, mode="constant", constant_values=0.0)
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dr, dc) in _SECTOR_OFFSETS.items():
        ahead = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        behind = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (sector == s) & (mag >= behind) & (mag > ahead)
    return keep & (mag > 0)


def hysteresis(mag: np.ndarray, high: float, low: float) -> np.ndarray:
    """8-connected components of ``mag >= low`` that contain a pixel ``>= high``."""
    weak = mag >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(mag.shape, dtype=bool)
    strong_labels = np.unique(labels[mag >= high])
    strong_labels = strong_labels[strong_labels > 0]
    return np.isin(labels, strong_labels)


def canny(img: MultibandRaster, p: CannyParams = CannyParams()) -> EdgeMap:
    """Canny edges of a greyscale image scaled to [0, 255].

    The gradient magnitude is stretched so its maximum is 255 before the
    thresholds (high = edge_gradient, low = edge_gradient / 2) are applied.
    """
    plane = np.where(img.mask, 0.0, img.plane)
    mag, gx, gy = gradient_magnitude(plane, int(p.filter_radius))
    peak = mag.max()
    if not peak > 0:
        return EdgeMap(np.zeros(plane.shape, dtype=bool), img.georef)
    mag = mag * (255.0 / peak)
    thin = np.where(non_maxima_suppression(mag, gx, gy), mag, 0.0)
    edges = hysteresis(thin, p.edge_gradient, p.edge_gradient / 2.0)
    edges &= ~img.mask
    return EdgeMap(edges, img.georef)
