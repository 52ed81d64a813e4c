"""Shared fixtures and brute-force oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np

from lineaments import synth
from lineaments.hydro import D8_CODES, D8_OFFSETS
from lineaments.raster import GeoRef, gray


def sym3_eigenvalues(a: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues of a symmetric 3x3 matrix (trigonometric solution
    of the characteristic polynomial), descending."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = np.trace(a) / 3.0
    if p1 == 0:
        return np.sort(np.diag(a))[::-1]
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2 * p1
    p = math.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = np.linalg.det(b) / 2.0
    phi = math.acos(min(1.0, max(-1.0, r))) / 3.0
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    return np.array([e1, 3 * q - e1 - e3, e3])


def sym2_eigenvalues(a: np.ndarray) -> np.ndarray:
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] ** 2
    disc = math.sqrt(max(tr * tr / 4 - det, 0.0))
    return np.array([tr / 2 + disc, tr / 2 - disc])


def brute_accumulation(code: np.ndarray) -> np.ndarray:
    """Follow directions from every cell and count visits (no shared state)."""
    h, w = code.shape
    off = dict(zip(D8_CODES, D8_OFFSETS))
    acc = np.zeros((h, w), dtype=np.int64)
    for r0 in range(h):
        for c0 in range(w):
            r, c = r0, c0
            steps = 0
            while True:
                acc[r, c] += 1
                cd = int(code[r, c])
                if cd == 0:
                    break
                dr, dc = off[cd]
                r, c = r + dr, c + dc
                if not (0 <= r < h and 0 <= c < w):
                    break
                steps += 1
                assert steps <= h * w, "cycle in flow directions"
    return acc


def smooth_random_image(seed: int, n: int = 64, sigma: float = 2.0) -> np.ndarray:
    from scipy import ndimage
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((n, n)), sigma)
    img -= img.min()
    return img * (255.0 / img.max())


def line_image(lines, shape=(128, 128), noise=0.0, seed=0, supersample=4):
    """Grey 0..255 image with anti-aliased one-sided steps along the given lines.

    ``lines`` holds LineSpec items; contrast is in 0..1 units of the range.
    """
    spec = synth.SceneSpec(width=shape[1], height=shape[0], bands=1, lines=tuple(lines),
                           noise_sigma=0.0, background_amplitude=0.0, stream=None,
                           n_occurrences=0, band_gains=(1.0,), band_offsets=(0.0,))
    sc = synth.make_synthetic(spec, seed=seed, supersample=supersample)
    plane = sc.albedo * 255.0
    if noise > 0:
        plane = plane + np.random.default_rng(seed).normal(0, noise, plane.shape)
    return gray(plane, GeoRef(0.0, float(shape[0]), 1.0)), sc.truth


def fixture_lines():
    """Four faults on a 192x192 scene used for threshold sweeps."""
    L = synth.LineSpec
    return (L(60, 50, 100, 90, 0.5), L(140, 60, 20, 70, -0.5),
            L(96, 130, 105, 120, 0.4), L(40, 150, 160, 50, 0.45))
