"""
Dimension reduction of multiband rasters: PCA, FastICA and MNF.

All transforms operate on the centred pixel-by-band data matrix and yield a
``ComponentStack`` whose planes are ordered by a ranking score (variance,
noise-normalised variance, or non-Gaussianity).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import GeoRef, MultibandRaster

logger = logging.getLogger(__name__)

PCA, ICA, MNF = "pca", "ica_unmixing", "mnf"
SCORE_KINDS = {PCA: "eigenvalue_variance", MNF: "snr_eigenvalue", ICA: "abs_kurtosis"}


class ConvergenceError(RuntimeError):
    pass


class DimredError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Centred samples (one row per valid pixel) plus what is needed to
    put components back on the raster grid."""

    values: np.ndarray          # (n_samples, n_vars), centred
    means: np.ndarray           # (n_vars,)
    index: np.ndarray           # flat pixel index of each row
    shape: tuple                # (height, width)
    source: MultibandRaster | None = None

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    matrix: np.ndarray
    kind: str
    scores: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimredError(f"projection matrix must be square, got {m.shape}")
        if not np.isfinite(m).all():
            raise DimredError("projection matrix has non-finite entries")
        if self.kind not in SCORE_KINDS:
            raise DimredError(f"unknown projection kind {self.kind!r}")
        object.__setattr__(self, "matrix", m)


@dataclass
class TransformReport:
    method: str
    scores: list
    score_kind: str
    converged: bool = True
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "scores": [float(s) for s in self.scores],
                "score_kind": self.score_kind, "converged": self.converged,
                "iterations": self.iterations, **self.extra}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class ComponentStack:
    raster: MultibandRaster
    scores: np.ndarray
    score_kind: str
    projection: ProjectionMatrix | None = None
    report: TransformReport | None = None

    def __len__(self):
        return self.raster.bands


# ---------------------------------------------------------------------------
# linear algebra helpers
# ---------------------------------------------------------------------------

def covariance(x: np.ndarray) -> np.ndarray:
    """Sample covariance (ddof=1) of centred columns.

    Each entry is a numpy pairwise sum over the sample axis, so the result
    does not depend on BLAS threading.
    """
    n, p = x.shape
    cov = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            cov[i, j] = cov[j, i] = np.sum(x[:, i] * x[:, j]) / (n - 1)
    return cov


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, vectors)`` with eigenvalues in descending order
    and eigenvectors in the *columns* of ``vectors``. Converged when the
    off-diagonal Frobenius norm drops below ``tol * |trace|``.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise DimredError("jacobi_eigh needs a square symmetric matrix")
    a = (a + a.T) / 2
    v = np.eye(n)
    scale = abs(np.trace(a)) or np.abs(a).max()
    thresh = tol * scale

    offdiag = ~np.eye(n, dtype=bool)

    def off(m):
        return math.sqrt(np.sum(m[offdiag] ** 2))

    sweeps = 0
    while off(a) > thresh:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi eigen-solver did not converge in {sweeps} sweeps")
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], _fix_signs(v[:, order].T).T


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    rows = rows.copy()
    for i in range(rows.shape[0]):
        k = int(np.argmax(np.abs(rows[i])))
        if rows[i, k] < 0:
            rows[i] = -rows[i]
    return rows


def _inv_sqrt_sym(a: np.ndarray) -> np.ndarray:
    w, v = jacobi_eigh(a)
    if w[-1] <= 0:
        raise DimredError("matrix is not positive definite")
    return (v / np.sqrt(w)) @ v.T


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def to_data_matrix(r: MultibandRaster) -> DataMatrix:
    valid = r.valid.ravel()
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        raise DimredError("no valid samples")
    if idx.size < 2:
        raise DimredError(f"too few valid pixels ({idx.size}); need at least 2")
    if idx.size <= r.bands:
        logger.warning("only %d valid pixels for %d bands; the covariance is rank deficient",
                       idx.size, r.bands)
    x = r.samples.reshape(r.bands, -1)[:, idx].T.copy()
    means = np.array([np.sum(x[:, j]) / x.shape[0] for j in range(x.shape[1])])
    x -= means
    # second pass removes the residual rounding of the first mean
    x -= np.array([np.sum(x[:, j]) / x.shape[0] for j in range(x.shape[1])])
    return DataMatrix(x, means, idx, (r.height, r.width), r)


def pca(d: DataMatrix) -> tuple[ProjectionMatrix, np.ndarray]:
    """Principal axes of the sample covariance; rows of P are unit eigenvectors."""
    cov = covariance(d.values)
    if not np.isfinite(cov).all():
        raise DimredError("covariance matrix is not finite")
    w, v = jacobi_eigh(cov)
    w = np.maximum(w, 0.0)
    return ProjectionMatrix(v.T, PCA, w), w


@dataclass
class ICAResult:
    projection: ProjectionMatrix
    converged: bool
    iterations: int
    final_delta: float


def fast_ica(d: DataMatrix, max_iter: int = 200, tol: float = 1e-4, seed: int = 42,
             full_output: bool = False):
    """Symmetric FastICA with the log-cosh contrast (g = tanh).

    Data are PCA-whitened first. Returns the unmixing matrix W expressed on
    the centred input, i.e. ``s = W @ x``, with rows ordered by absolute
    excess kurtosis of the recovered components. A run that hits
    ``max_iter`` returns the best iterate and is flagged non-converged.
    """
    if max_iter < 1:
        raise DimredError("max_iter must be >= 1")
    x = d.values
    n, p = x.shape
    w_eig, v = jacobi_eigh(covariance(x))
    if w_eig[-1] <= 1e-12 * max(w_eig[0], 1e-300):
        raise DimredError("data covariance is singular; ICA needs full-rank input")
    whiten = (v / np.sqrt(w_eig)).T          # K: z = K x
    z = x @ whiten.T                           # (n, p), unit covariance

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((p, p)))
    best_w, best_delta = w, math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = z @ w.T                            # (n, p)
        g = np.tanh(u)
        g_prime = 1.0 - g * g
        w_new = (g.T @ z) / n - g_prime.mean(axis=0)[:, None] * w
        w_new = _sym_decorrelate(w_new)
        delta = float(np.max(np.abs(1.0 - np.abs(np.sum(w_new * w, axis=1)))))
        w = w_new
        if delta < best_delta:
            best_w, best_delta = w, delta
        if delta < tol:
            converged = True
            break
    if not converged:
        logger.warning("FastICA did not converge in %d iterations (delta %.3g)", it, best_delta)
        w = best_w

    unmix = w @ whiten
    s = x @ unmix.T
    kurt = _abs_excess_kurtosis(s)
    order = np.argsort(-kurt, kind="stable")
    unmix = _fix_signs(unmix[order])
    proj = ProjectionMatrix(unmix, ICA, kurt[order])
    if full_output:
        return ICAResult(proj, converged, it, best_delta if not converged else delta)
    return proj


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    return _inv_sqrt_sym(w @ w.T) @ w


def _abs_excess_kurtosis(s: np.ndarray) -> np.ndarray:
    s = s - s.mean(axis=0)
    m2 = np.mean(s * s, axis=0)
    m4 = np.mean(s ** 4, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(m2 > 0, m4 / (m2 * m2) - 3.0, 0.0)
    return np.abs(k)


def estimate_noise_covariance(r: MultibandRaster) -> np.ndarray:
    """Shift-difference noise estimate from horizontally adjacent pixel pairs."""
    if r.width < 2:
        raise DimredError("noise estimation needs width >= 2")
    pair_ok = r.valid[:, :-1] & r.valid[:, 1:]
    if not pair_ok.any():
        raise DimredError("no adjacent valid pixel pairs for noise estimation")
    diff = (r.samples[:, :, :-1] - r.samples[:, :, 1:])[:, pair_ok].T
    if diff.shape[0] < 2:
        raise DimredError("need at least two adjacent valid pixel pairs")
    diff = diff - np.array([np.sum(diff[:, j]) / diff.shape[0] for j in range(diff.shape[1])])
    return covariance(diff) / 2.0


RIDGE = 1e-10
MAX_CONDITION = 1e15


def mnf(r: MultibandRaster, noise_cov: np.ndarray | None = None) -> ComponentStack:
    """Minimum noise fraction: noise whitening followed by PCA."""
    d = to_data_matrix(r)
    cov = covariance(d.values)
    sn = estimate_noise_covariance(r) if noise_cov is None else np.asarray(noise_cov, float)
    ridge = RIDGE * np.trace(cov)
    sn = sn + ridge * np.eye(sn.shape[0])
    wn, vn = jacobi_eigh(sn)
    cond = wn[0] / wn[-1] if wn[-1] > 0 else math.inf
    if not (wn[-1] > 0) or cond > MAX_CONDITION:
        raise DimredError(f"noise covariance is singular after ridge (condition number {cond:.3g})")
    f = (vn / np.sqrt(wn)).T                      # noise-whitening rows
    cw = f @ cov @ f.T
    cw = (cw + cw.T) / 2
    mu, v = jacobi_eigh(cw)
    mu = np.maximum(mu, 0.0)
    proj = ProjectionMatrix(_fix_signs(v.T @ f), MNF, mu)
    report = TransformReport("mnf", list(mu), SCORE_KINDS[MNF],
                             extra={"noise_condition_number": float(cond)})
    cs = transform(d, proj)
    return ComponentStack(cs.raster, cs.scores, cs.score_kind, proj, report)


def transform(source, proj: ProjectionMatrix) -> ComponentStack:
    """Apply a projection to every valid pixel of a DataMatrix or raster."""
    d = to_data_matrix(source) if isinstance(source, MultibandRaster) else source
    p = proj.matrix
    if p.shape[1] != d.n_vars:
        raise DimredError(f"dimension mismatch: projection {p.shape} vs {d.n_vars} bands")
    comps = d.values @ p.T
    if proj.scores is not None:
        scores = np.asarray(proj.scores, dtype=np.float64)
    elif proj.kind == ICA:
        scores = _abs_excess_kurtosis(comps)
    else:
        scores = np.array([np.sum(comps[:, k] ** 2) / (d.n_samples - 1) for k in range(comps.shape[1])])
    h, w = d.shape
    planes = np.zeros((p.shape[0], h * w))
    planes[:, d.index] = comps.T
    mask = np.ones(h * w, dtype=bool)
    mask[d.index] = False
    georef = d.source.georef if d.source is not None else GeoRef()
    raster = MultibandRaster(planes.reshape(-1, h, w), mask.reshape(h, w), georef)
    return ComponentStack(raster, scores, SCORE_KINDS[proj.kind], proj)


def reduce(r: MultibandRaster, method: str = "mnf", *, max_iter: int = 200,
           tol: float = 1e-4, seed: int = 42) -> ComponentStack:
    """Run one of pca / ica / mnf on a raster and attach a TransformReport."""
    if method == "pca":
        d = to_data_matrix(r)
        proj, w = pca(d)
        cs = transform(d, proj)
        rep = TransformReport("pca", list(w), cs.score_kind)
    elif method == "ica":
        d = to_data_matrix(r)
        res = fast_ica(d, max_iter=max_iter, tol=tol, seed=seed, full_output=True)
        cs = transform(d, res.projection)
        rep = TransformReport("ica", list(cs.scores), cs.score_kind, res.converged, res.iterations,
                              extra={"final_delta": res.final_delta, "seed": seed})
    elif method == "mnf":
        cs = mnf(r)
        rep = cs.report
    else:
        raise DimredError(f"unknown dimension-reduction method {method!r}")
    return ComponentStack(cs.raster, cs.scores, cs.score_kind, cs.projection, rep)


def rescale_255(plane: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Linear stretch of valid pixels to [0, 255]; constant input -> zeros."""
    out = np.zeros_like(plane, dtype=np.float64)
    if not valid.any():
        return out
    v = plane[valid]
    lo, hi = v.min(), v.max()
    if hi > lo:
        out[valid] = ((v - lo) / (hi - lo)) * 255.0
    return out


def select_component(cs: ComponentStack, index: int | None = None) -> MultibandRaster:
    n = cs.raster.bands
    if n == 0:
        raise DimredError("empty component stack")
    k = 0 if index is None else index
    if not 0 <= k < n:
        raise DimredError(f"component index {k} out of range (0..{n - 1})")
    plane = rescale_255(cs.raster.samples[k], cs.raster.valid)
    return MultibandRaster(plane[None], cs.raster.mask, cs.raster.georef)
