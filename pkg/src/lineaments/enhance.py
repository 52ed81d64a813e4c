"""Noise suppression (Lee, median) and 3x3 edge-enhancement kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .raster import MultibandRaster


@dataclass(frozen=True, eq=False)
class Kernel3x3:
    coeffs: np.ndarray
    name: str = ""

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64).reshape(3, 3)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)


# Prewitt compass set; azimuth = strike direction of the edges enhanced.
_DIRECTIONAL = {
    0: [[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]],
    45: [[0, 1, 1], [-1, 0, 1], [-1, -1, 0]],
    90: [[-1, -1, -1], [0, 0, 0], [1, 1, 1]],
    135: [[1, 1, 0], [1, 0, -1], [0, -1, -1]],
}
AZIMUTHS = (0, 45, 90, 135)


def directional_kernel(azimuth: int) -> Kernel3x3:
    if azimuth not in _DIRECTIONAL:
        raise ValueError(f"unsupported azimuth {azimuth}; choose from {AZIMUTHS}")
    return Kernel3x3(_DIRECTIONAL[azimuth], f"directional_{azimuth}")


def laplacian_kernel() -> Kernel3x3:
    return Kernel3x3([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], "laplacian")


def convolve(img: MultibandRaster, k: Kernel3x3) -> MultibandRaster:
    """3x3 correlation (no kernel flip) with replicate-edge padding.

    Masked pixels enter the sum as 0 and stay masked in the output.
    """
    src = np.where(img.mask, 0.0, img.plane)
    h, w = src.shape
    padded = np.pad(src, 1, mode="edge")
    pos, neg = [], []
    for dr in range(3):
        for dc in range(3):
            c = float(k.coeffs[dr, dc])
            if c != 0.0:
                term = abs(c) * padded[dr:dr + h, dc:dc + w]
                (pos if c > 0 else neg).append(term)
    # positive and negative weights are summed separately with the same
    # pairwise tree, so a flat neighbourhood cancels exactly to zero
    out = _pairwise_sum(pos, src.shape) - _pairwise_sum(neg, src.shape)
    out[img.mask] = 0.0
    return img.replace(samples=out[None])


def _pairwise_sum(terms: list, shape) -> np.ndarray:
    if not terms:
        return np.zeros(shape)
    while len(terms) > 1:
        terms = [terms[i] + terms[i + 1] if i + 1 < len(terms) else terms[i] for i in range(0, len(terms), 2)]
    return terms[0]


def _windows(plane: np.ndarray, valid: np.ndarray, window: int):
    """(H, W, window*window) views padded with NaN outside the image/mask."""
    r = window // 2
    padded = np.pad(np.where(valid, plane, np.nan), r, mode="constant", constant_values=np.nan)
    return sliding_window_view(padded, (window, window)).reshape(*plane.shape, window * window)


def _local_stats(plane, valid, window):
    """Mean and population variance over valid pixels of each window."""
    vf = valid.astype(np.float64)
    x = np.where(valid, plane, 0.0)
    # uniform_filter averages; multiply back to window sums
    size = window * window
    kw = dict(size=window, mode="constant", cval=0.0)
    n = np.rint(ndimage.uniform_filter(vf, **kw) * size)
    s1 = ndimage.uniform_filter(x, **kw) * size
    s2 = ndimage.uniform_filter(x * x, **kw) * size
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.where(n > 0, s1 / n, 0.0)
        v = np.where(n > 0, s2 / n - m * m, 0.0)
    return m, np.maximum(v, 0.0), n


def estimate_noise_sigma(img: MultibandRaster) -> float:
    """Noise standard deviation from the flattest decile of 3x3 windows."""
    _, v, n = _local_stats(img.plane, img.valid, 3)
    sel = v[img.valid & (n >= 2)]
    if sel.size == 0:
        return 0.0
    cut = np.quantile(sel, 0.1)
    return float(np.sqrt(np.mean(sel[sel <= cut])))


def lee_filter(img: MultibandRaster, window: int = 3, sigma_noise: float | None = None) -> MultibandRaster:
    """Additive-noise Lee filter: out = m + k (x - m), k = v / (v + sigma^2)."""
    if window not in (3, 5, 7):
        raise ValueError(f"Lee window must be 3, 5 or 7, got {window}")
    if sigma_noise is None:
        sigma_noise = estimate_noise_sigma(img)
    if sigma_noise < 0:
        raise ValueError("sigma_noise must be >= 0")
    x = img.plane
    m, v, n = _local_stats(x, img.valid, window)
    s2 = sigma_noise * sigma_noise
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(v > 0, v / (v + s2), 1.0)
    out = m + k * (x - m)
    # v == 0 means every valid pixel in the window equals m
    out = np.where(v > 0, out, x)
    out = np.where(n > 0, out, x)
    # keep inside the window range despite rounding
    win = _windows(x, img.valid, window)
    nan = np.isnan(win)
    lo = np.where(nan, np.inf, win).min(axis=-1)
    hi = np.where(nan, -np.inf, win).max(axis=-1)
    out = np.where(img.valid, np.clip(out, np.minimum(lo, x), np.maximum(hi, x)), 0.0)
    return img.replace(samples=out[None])


def median_filter(img: MultibandRaster, window: int = 3) -> MultibandRaster:
    """Median over valid in-window pixels; windows are truncated at the border."""
    if window not in (3, 5):
        raise ValueError(f"median window must be 3 or 5, got {window}")
    win = _windows(img.plane, img.valid, window)
    srt = np.sort(np.where(np.isnan(win), np.inf, win), axis=-1)
    n = np.sum(~np.isnan(win), axis=-1)
    lo_i = np.maximum((n - 1) // 2, 0)
    hi_i = np.maximum(n // 2, 0)
    lo = np.take_along_axis(srt, lo_i[..., None], axis=-1)[..., 0]
    hi = np.take_along_axis(srt, hi_i[..., None], axis=-1)[..., 0]
    with np.errstate(invalid="ignore"):
        med = (lo + hi) / 2.0
    out = np.where(img.valid & (n > 0), med, 0.0)
    return img.replace(samples=out[None])


def denoise(img: MultibandRaster, lee_window: int = 3, sigma_noise: float | None = None,
            median_window: int = 3) -> MultibandRaster:
    """Lee then median, in that order."""
    return median_filter(lee_filter(img, lee_window, sigma_noise), median_window)


def enhance(img: MultibandRaster, mode: str) -> dict:
    """Edge-enhanced images keyed by name.

    ``directional`` yields four images (one per azimuth), ``laplacian`` one.
    """
    if mode == "directional":
        return {f"directional_{az}": convolve(img, directional_kernel(az)) for az in AZIMUTHS}
    if mode == "laplacian":
        return {"laplacian": convolve(img, laplacian_kernel())}
    raise ValueError(f"unknown enhancement mode {mode!r}")
