import json
import math

import numpy as np
import pytest

from helpers import sym2_eigenvalues, sym3_eigenvalues
from lineaments import dimred
from lineaments.dimred import (DimredError, ProjectionMatrix, covariance, estimate_noise_covariance,
                               fast_ica, jacobi_eigh, mnf, pca, reduce, rescale_255,
                               select_component, to_data_matrix, transform)
from lineaments.raster import GeoRef, MultibandRaster


def raster_from_columns(cols, h, w, mask=None):
    x = np.asarray(cols, dtype=np.float64)
    return MultibandRaster(x.reshape(-1, h, w), mask, GeoRef())


# ---------------------------------------------------------------- data matrix

def test_to_data_matrix_centering_example():
    r = MultibandRaster(np.array([[[1.0, 3.0]], [[2.0, 4.0]]]), None)
    d = to_data_matrix(r)
    assert d.values.tolist() == [[-1.0, -1.0], [1.0, 1.0]]
    assert d.means.tolist() == [2.0, 3.0]


def test_to_data_matrix_errors():
    r = MultibandRaster(np.zeros((2, 2, 2)), np.ones((2, 2), bool))
    with pytest.raises(DimredError, match="no valid samples"):
        to_data_matrix(r)
    mask = np.ones((1, 3), bool)
    mask[0, 0] = False
    r = MultibandRaster(np.zeros((3, 1, 3)), mask)
    with pytest.raises(DimredError, match="too few valid pixels"):
        to_data_matrix(r)


def test_to_data_matrix_zero_column_means():
    rng = np.random.default_rng(3)
    r = MultibandRaster(rng.normal(1e3, 5.0, (4, 30, 30)), None)
    d = to_data_matrix(r)
    assert np.all(np.abs(d.values.mean(axis=0)) < 1e-9)


# ---------------------------------------------------------------- eigen-solver

def test_jacobi_matches_closed_form_3x3():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.normal(size=(3, 3))
        a = m @ m.T
        w, v = jacobi_eigh(a)
        assert np.allclose(w, sym3_eigenvalues(a), rtol=1e-10, atol=1e-12)
        assert np.allclose(v.T @ v, np.eye(3), atol=1e-12)
        assert np.allclose(a @ v, v * w, atol=1e-10)


def test_jacobi_sign_convention_and_order():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(6, 6))
    w, v = jacobi_eigh(m @ m.T)
    assert np.all(np.diff(w) <= 0)
    for k in range(6):
        col = v[:, k]
        assert col[np.argmax(np.abs(col))] > 0


def test_jacobi_rejects_asymmetric():
    with pytest.raises(DimredError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_covariance_is_ddof1():
    x = np.array([[-1.0, 2.0], [1.0, -2.0]])
    assert covariance(x).tolist() == [[2.0, -4.0], [-4.0, 8.0]]


# ---------------------------------------------------------------- PCA

def test_pca_perfectly_correlated_bands():
    rng = np.random.default_rng(5)
    b1 = rng.normal(size=100)
    r = raster_from_columns([b1, 2 * b1], 10, 10)
    proj, w = pca(to_data_matrix(r))
    assert w[1] <= 1e-9
    assert np.allclose(proj.matrix[0], np.array([1.0, 2.0]) / math.sqrt(5), atol=1e-12)


def test_pca_isotropic_orthonormal():
    # exactly identity covariance: +-1 on both axes independently
    b1 = np.array([1, -1, 1, -1], float)
    b2 = np.array([1, 1, -1, -1], float)
    proj, w = pca(to_data_matrix(raster_from_columns([b1, b2], 2, 2)))
    assert w[0] == pytest.approx(w[1])
    assert np.allclose(proj.matrix.T @ proj.matrix, np.eye(2), atol=1e-12)


def test_pca_small_rasters_match_closed_form():
    rng = np.random.default_rng(11)
    for trial in range(10):
        h, w = rng.integers(3, 9, 2)
        b = int(rng.integers(2, 4))
        r = MultibandRaster(rng.normal(size=(b, h, w)) * rng.uniform(0.1, 10, (b, 1, 1)), None)
        d = to_data_matrix(r)
        proj, lam = pca(d)
        cov = np.cov(d.values.T)
        oracle = sym3_eigenvalues(cov) if b == 3 else sym2_eigenvalues(cov)
        assert np.allclose(lam, oracle, rtol=1e-6)
        p = proj.matrix
        assert np.allclose(p.T @ p, np.eye(b), atol=1e-8)
        assert abs(lam.sum() - np.trace(cov)) < 1e-8


def test_pca_component_variance_and_decorrelation():
    rng = np.random.default_rng(12)
    mix = rng.normal(size=(3, 3))
    r = MultibandRaster((mix @ rng.normal(size=(3, 400))).reshape(3, 20, 20), None)
    d = to_data_matrix(r)
    proj, lam = pca(d)
    cs = transform(d, proj)
    comps = cs.raster.samples.reshape(3, -1)
    assert np.allclose(comps.var(axis=1, ddof=1), lam, rtol=0, atol=1e-8)
    c = np.corrcoef(comps)
    assert np.all(np.abs(c[~np.eye(3, dtype=bool)]) < 1e-6)
    assert cs.score_kind == "eigenvalue_variance"


# ---------------------------------------------------------------- transform

def test_transform_identity_gives_centred_bands():
    rng = np.random.default_rng(13)
    r = MultibandRaster(rng.normal(size=(2, 5, 5)), None)
    cs = transform(r, ProjectionMatrix(np.eye(2), "pca"))
    centred = r.samples - r.samples.reshape(2, -1).mean(axis=1)[:, None, None]
    assert np.allclose(cs.raster.samples, centred, atol=1e-12)


def test_transform_is_linear():
    rng = np.random.default_rng(14)
    p = ProjectionMatrix(rng.normal(size=(3, 3)), "ica_unmixing")
    x = MultibandRaster(rng.normal(size=(3, 6, 6)), None)
    y = MultibandRaster(rng.normal(size=(3, 6, 6)), None)
    a, b = 1.7, -0.4
    xy = MultibandRaster(a * x.samples + b * y.samples, None)
    lhs = transform(xy, p).raster.samples
    rhs = a * transform(x, p).raster.samples + b * transform(y, p).raster.samples
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_transform_dimension_mismatch():
    r = MultibandRaster(np.zeros((2, 3, 3)), None)
    with pytest.raises(DimredError, match="dimension mismatch"):
        transform(r, ProjectionMatrix(np.eye(3), "pca"))


# ---------------------------------------------------------------- FastICA

def _mixed(seed, a, n=10_000):
    rng = np.random.default_rng(seed)
    s = np.vstack([rng.uniform(-1, 1, n), rng.laplace(size=n), rng.uniform(-1, 1, n) ** 3][:a.shape[0]])
    s = (s - s.mean(axis=1, keepdims=True)) / s.std(axis=1, keepdims=True)
    x = a @ s
    return MultibandRaster(x.reshape(a.shape[0], 100, n // 100), None), s


def test_ica_recovers_two_uniform_sources():
    rng = np.random.default_rng(0)
    n = 10_000
    s = rng.uniform(-1, 1, (2, n))
    a = np.array([[1.0, 0.5], [0.5, 1.0]])
    r = MultibandRaster((a @ s).reshape(2, 100, 100), None)
    cs = reduce(r, "ica")
    rec = cs.raster.samples.reshape(2, -1)
    c = np.abs(np.corrcoef(np.vstack([rec, s]))[:2, 2:])
    assert np.all(c.max(axis=1) > 0.95)
    assert sorted(c.argmax(axis=1).tolist()) == [0, 1]


def test_ica_identity_mixing_is_signed_permutation():
    a = np.eye(3)
    r, _ = _mixed(1, a)
    wmat = fast_ica(to_data_matrix(r)).matrix
    m = wmat @ a       # sources have unit variance, so this is a signed permutation
    assert np.all(np.abs(np.abs(m) - np.round(np.abs(m))) < 0.05)
    assert np.array_equal(np.round(np.abs(m)).sum(axis=0), np.ones(3))


def test_ica_deterministic_given_seed():
    r, _ = _mixed(2, np.array([[1.0, 0.3, 0.2], [0.1, 1.0, 0.4], [0.3, 0.2, 1.0]]))
    d = to_data_matrix(r)
    assert np.array_equal(fast_ica(d, seed=7).matrix, fast_ica(d, seed=7).matrix)


def test_ica_non_convergence_is_flagged_not_raised():
    r, _ = _mixed(3, np.array([[1.0, 0.6], [0.4, 1.0]]))
    res = fast_ica(to_data_matrix(r), max_iter=1, tol=1e-12, full_output=True)
    assert res.converged is False and res.iterations == 1
    assert np.isfinite(res.projection.matrix).all()
    with pytest.raises(DimredError):
        fast_ica(to_data_matrix(r), max_iter=0)


def test_ica_ranks_by_kurtosis():
    r, _ = _mixed(4, np.array([[1.0, 0.2, 0.1], [0.3, 1.0, 0.2], [0.1, 0.4, 1.0]]))
    cs = reduce(r, "ica")
    assert cs.score_kind == "abs_kurtosis"
    assert np.all(np.diff(cs.scores) <= 0)
    assert cs.report.converged


# ---------------------------------------------------------------- noise / MNF

def test_noise_covariance_constant_is_zero():
    r = MultibandRaster(np.full((2, 8, 8), 3.0), None)
    assert np.array_equal(estimate_noise_covariance(r), np.zeros((2, 2)))


def test_noise_covariance_iid_monte_carlo():
    rng = np.random.default_rng(21)
    sig = np.array([0.5, 1.0, 2.0])
    r = MultibandRaster(rng.normal(size=(3, 256, 256)) * sig[:, None, None], None)
    est = estimate_noise_covariance(r)
    assert np.all(np.abs(np.diag(est) / sig ** 2 - 1) < 0.1)
    assert np.all(np.abs(est[~np.eye(3, dtype=bool)]) < 0.05)


def test_noise_covariance_ramp_is_bounded_by_step():
    step = 0.7
    ramp = np.tile(np.arange(16) * step, (16, 1))
    r = MultibandRaster(np.stack([ramp, 2 * ramp]), None)
    est = estimate_noise_covariance(r)
    assert np.all(np.abs(est) <= (2 * step) ** 2 / 2)


def test_noise_covariance_needs_adjacent_pairs():
    r = MultibandRaster(np.zeros((1, 3, 1)), None)
    with pytest.raises(DimredError):
        estimate_noise_covariance(r)
    m = np.zeros((2, 2), bool)
    m[:, 1] = True
    with pytest.raises(DimredError, match="adjacent"):
        estimate_noise_covariance(MultibandRaster(np.zeros((1, 2, 2)), m))


def _signal_noise_stack(seed, h=96, w=96, sigmas=(0.05, 0.2, 0.5, 1.0)):
    from scipy import ndimage
    rng = np.random.default_rng(seed)
    sig = ndimage.gaussian_filter(rng.normal(size=(h, w)), 4)
    sig /= sig.std()
    gains = np.array([1.0, 0.8, 1.2, 0.9])[:len(sigmas)]
    planes = [g * sig + s * rng.normal(size=(h, w)) for g, s in zip(gains, sigmas)]
    return MultibandRaster(np.stack(planes), None), sig


def test_mnf_orders_by_snr_and_recovers_signal():
    r, sig = _signal_noise_stack(0)
    cs = mnf(r)
    assert np.all(np.diff(cs.scores) < 0)
    rho = np.corrcoef(cs.raster.samples[0].ravel(), sig.ravel())[0, 1]
    assert abs(rho) > 0.9
    assert cs.score_kind == "snr_eigenvalue"


def test_mnf_noise_free_matches_pca_ordering():
    rng = np.random.default_rng(8)
    mix = rng.normal(size=(3, 3))
    r = MultibandRaster((mix @ rng.normal(size=(3, 900))).reshape(3, 30, 30), None)
    cs = mnf(r, noise_cov=np.zeros((3, 3)))
    pc = reduce(r, "pca")
    for k in range(3):
        rho = np.corrcoef(cs.raster.samples[k].ravel(), pc.raster.samples[k].ravel())[0, 1]
        assert abs(rho) > 1 - 1e-9


def test_mnf_affine_band_rescale_keeps_ordering():
    r, _ = _signal_noise_stack(1)
    scaled = MultibandRaster(r.samples * np.array([2.0, 0.5, 10.0, 1.0])[:, None, None] + 7.0, None)
    a, b = mnf(r), mnf(scaled)
    for k in range(4):
        rho = np.corrcoef(a.raster.samples[k].ravel(), b.raster.samples[k].ravel())[0, 1]
        assert abs(rho) > 0.999


def test_mnf_masks_propagate():
    r, _ = _signal_noise_stack(2, 32, 32)
    mask = np.zeros((32, 32), bool)
    mask[5:9, 10:12] = True
    cs = mnf(MultibandRaster(r.samples, mask))
    assert np.array_equal(cs.raster.mask, mask)
    assert np.all(cs.raster.samples[:, mask] == 0)


def test_mnf_singular_noise_reports_condition():
    r, _ = _signal_noise_stack(3, 32, 32)
    bad = np.diag([1.0, 1.0, 1.0, -1.0])
    with pytest.raises(DimredError, match="condition number"):
        mnf(r, noise_cov=bad)


# ---------------------------------------------------------------- selection

def test_select_component_default_is_top_score_and_rescaled():
    rng = np.random.default_rng(30)
    r = MultibandRaster(rng.normal(size=(3, 10, 10)) * np.array([1.0, 5.0, 2.0])[:, None, None], None)
    cs = reduce(r, "pca")
    g = select_component(cs)
    top = cs.raster.samples[0]
    assert np.allclose(g.plane, rescale_255(top, np.ones_like(top, bool)))
    assert g.plane.min() == 0.0 and g.plane.max() == 255.0
    assert np.var(top) == max(np.var(p) for p in cs.raster.samples)


def test_select_component_explicit_index_and_errors():
    rng = np.random.default_rng(31)
    cs = reduce(MultibandRaster(rng.normal(size=(2, 6, 6)), None), "pca")
    g = select_component(cs, 1)
    assert np.corrcoef(g.plane.ravel(), cs.raster.samples[1].ravel())[0, 1] > 0.999999
    with pytest.raises(DimredError, match="out of range"):
        select_component(cs, 2)


def test_rescale_constant_is_zero():
    assert np.array_equal(rescale_255(np.full((3, 3), 4.0), np.ones((3, 3), bool)), np.zeros((3, 3)))


def test_reduce_unknown_method_and_report(tmp_path):
    r, _ = _signal_noise_stack(4, 24, 24)
    with pytest.raises(DimredError, match="unknown"):
        reduce(r, "svd")
    cs = reduce(r, "mnf")
    cs.report.write(tmp_path / "rep.json")
    doc = json.loads((tmp_path / "rep.json").read_text())
    assert doc["method"] == "mnf" and len(doc["scores"]) == 4
    assert doc["noise_condition_number"] > 1


def test_covariance_is_order_deterministic():
    rng = np.random.default_rng(40)
    x = rng.normal(size=(5000, 4))
    assert np.array_equal(covariance(x), covariance(x.copy()))
    assert dimred.SCORE_KINDS["pca"] == "eigenvalue_variance"
