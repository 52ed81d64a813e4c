import logging

import numpy as np
import pytest

from lineaments.analyze import (N_ROSE_BINS, THRESHOLDS, DensityGrid, clipped_length, correlate_occurrences,
                                density, fuzzify, rank_fcc_triplets, rose)
from lineaments.raster import GeoRef, MultibandRaster, PointSet
from lineaments.vectorize import Lineament, LineamentSet

G = GeoRef(0.0, 100.0, 1.0)


def _set(*polys, georef=G):
    return LineamentSet(tuple(Lineament(np.asarray(p, float), i) for i, p in enumerate(polys)), georef)


# ---------------------------------------------------------------- density

def test_density_single_support():
    # 10-px cells, radius 10: the segment lies in the disk of cell (0, 0)
    # only, whose centre is (4.5, 4.5); other centres are over 10 px away
    d = density(_set([[2.0, 4.5], [3.0, 4.5]]), (100, 100), 10, 10.0)
    assert d.fuzzy.shape == (10, 10)
    assert d.fuzzy[0, 0] == 1.0
    assert np.count_nonzero(d.fuzzy) == 1
    assert d.raw[0, 0] == pytest.approx(1.0)


def test_density_empty_set_is_all_zero():
    d = density(_set(), (40, 60), 10, 20.0)
    assert d.raw.shape == (4, 6)
    assert not d.raw.any() and not d.fuzzy.any()


def test_density_preconditions():
    with pytest.raises(ValueError):
        density(_set(), (0, 10))
    with pytest.raises(ValueError):
        density(_set(), (10, 10), 0, 5.0)
    with pytest.raises(ValueError):
        density(_set(), (10, 10), 10, 5.0)


def test_density_uses_world_units_and_coarse_georef():
    g = GeoRef(500.0, 900.0, 30.0)
    d = density(_set([[2.0, 4.5], [3.0, 4.5]], georef=g), (20, 20), 10, 10.0)
    assert d.raw[0, 0] == pytest.approx(30.0)
    assert d.georef == GeoRef(500.0, 900.0, 300.0)
    assert d.as_raster().samples.shape == (1, 2, 2)


def _dense_clip(a, b, c, r, step=0.01):
    n = int(np.ceil(np.hypot(*(b - a)) / step))
    t = (np.arange(n) + 0.5) / n
    pts = a + t[:, None] * (b - a)
    inside = np.hypot(*(pts - c).T) <= r
    return np.hypot(*(b - a)) * inside.mean()


def test_clipped_length_matches_dense_sampling():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.uniform(0, 100, 2), rng.uniform(0, 100, 2)
        c = rng.uniform(0, 100, (1, 2))
        r = rng.uniform(5, 50)
        exact = clipped_length(a, b, c, r)[0]
        approx = _dense_clip(a, b, c[0], r)
        assert exact == pytest.approx(approx, abs=0.01 * max(exact, 1.0))


def test_segment_crossing_two_disks_contributes_to_both():
    a, b = np.array([0.0, 4.5]), np.array([99.0, 4.5])
    d = density(_set([a, b]), (10, 100), 10, 10.0)
    # interior cells see a full 20-px chord, the two end cells a clipped one
    assert d.raw[0, 1:-1] == pytest.approx(20.0)
    assert d.raw[0, 0] == pytest.approx(14.5) and d.raw[0, -1] == pytest.approx(14.5)
    for k in range(10):
        ref = _dense_clip(a, b, np.array([10 * k + 4.5, 4.5]), 10.0)
        assert d.raw[0, k] == pytest.approx(ref, rel=0.01)


def test_density_translation_invariance():
    lines = ([[3.0, 7.0], [60.0, 40.0]], [[10.0, 80.0], [90.0, 75.0], [95.0, 20.0]])
    a = density(_set(*lines), (100, 100), 10, 30.0)
    shifted = [np.asarray(p) + [20.0, 30.0] for p in lines]
    b = density(_set(*shifted, georef=GeoRef(-20.0, 70.0, 1.0)), (100, 100), 10, 30.0)
    # the grid moves with the lines: shift of (2, 3) coarse cells
    assert np.allclose(a.fuzzy[:7, :8], b.fuzzy[3:, 2:])


def test_duplicates_double_raw_and_keep_fuzzy():
    poly = [[3.0, 7.0], [60.0, 40.0]]
    a = density(_set(poly), (80, 80), 10, 25.0)
    b = density(_set(poly, poly), (80, 80), 10, 25.0)
    assert np.allclose(b.raw, 2 * a.raw)
    assert np.allclose(b.fuzzy, a.fuzzy)


def test_fuzzify_bounds():
    assert fuzzify(np.array([2.0, 4.0, 6.0])).tolist() == [0.0, 0.5, 1.0]
    assert fuzzify(np.full(3, 7.0)).tolist() == [0.0, 0.0, 0.0]


# ---------------------------------------------------------------- rose

def test_rose_due_east():
    h = rose(_set([[0.0, 5.0], [10.0, 5.0]]))
    assert h.length_pct[9] == 100.0 and h.dominant_bin() == (90, 100)


def test_rose_two_equal_segments():
    # azimuth 15 and 105 with equal lengths
    a15 = np.radians(15)
    a105 = np.radians(105)
    p1 = [[0.0, 0.0], [10 * np.sin(a15), -10 * np.cos(a15)]]
    p2 = [[0.0, 0.0], [10 * np.sin(a105), -10 * np.cos(a105)]]
    h = rose(_set(p1, p2))
    assert h.length_pct[1] == pytest.approx(50.0)
    assert h.length_pct[10] == pytest.approx(50.0)
    assert h.count.tolist()[1] == 1 and h.count_pct[10] == pytest.approx(50.0)


def test_rose_empty_and_percentage_sum():
    h = rose(_set())
    assert h.empty and not h.length_pct.any()
    rng = np.random.default_rng(1)
    polys = [rng.uniform(0, 100, (4, 2)) for _ in range(10)]
    h = rose(_set(*polys))
    assert len(h.length_sum) == N_ROSE_BINS
    assert h.length_pct.sum() == pytest.approx(100.0, abs=1e-6)


def test_rose_reversal_invariance():
    rng = np.random.default_rng(2)
    polys = [rng.uniform(0, 100, (5, 2)) for _ in range(8)]
    a = rose(_set(*polys))
    b = rose(_set(*[p[::-1] for p in polys]))
    assert np.allclose(a.length_sum, b.length_sum)
    assert np.array_equal(a.count, b.count)


def test_rose_csv(tmp_path):
    p = tmp_path / "rose.csv"
    rose(_set([[0.0, 5.0], [10.0, 5.0]])).write_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "bin_start_deg,length_sum,length_pct,count,count_pct"
    assert len(rows) == 19 and rows[10].startswith("90,10.0,100.0,1,100.0")


# ---------------------------------------------------------------- correlation

def _grid(values):
    v = np.asarray(values, float)
    return DensityGrid(v, v, 10, 50.0, GeoRef(0.0, 10.0 * v.shape[0], 10.0))


def _pts_in(cells, georef):
    pts = []
    for i, (r, c) in enumerate(cells):
        x, y = georef.to_world(c, r)
        pts.append((x, y, f"p{i}"))
    return PointSet.from_points(pts)


def test_correlation_all_in_top_cells():
    d = _grid([[1.0, 0.0]])
    c = correlate_occurrences(d, _pts_in([(0, 0)] * 5, d.georef))
    assert all(p == 100.0 for p in c.pct_points)
    assert c.auc == pytest.approx(1.0)


def test_correlation_all_in_zero_cells():
    d = _grid([[1.0, 0.0]])
    c = correlate_occurrences(d, _pts_in([(0, 1)] * 5, d.georef))
    assert c.pct_points[0] == 100.0 and all(p == 0.0 for p in c.pct_points[1:])


def test_correlation_split_case():
    d = _grid([[0.2, 0.8], [0.0, 1.0]])
    c = correlate_occurrences(d, _pts_in([(0, 0), (0, 1)] * 3, d.georef))
    for t, p in zip(THRESHOLDS, c.pct_points):
        if t <= 0.2 + 1e-12:
            assert p == 100.0
        elif t <= 0.8 + 1e-12:
            assert p == 50.0
        else:
            assert p == 0.0


def test_correlation_outside_points_reported(caplog):
    d = _grid([[1.0, 1.0]])
    pts = PointSet.from_points([(5.0, 5.0, "in"), (500.0, 5.0, "out")])
    with caplog.at_level(logging.WARNING):
        c = correlate_occurrences(d, pts)
    assert c.n_outside == 1 and c.pct_points[0] == 50.0
    assert "outside" in caplog.text


def test_correlation_non_increasing_and_auc_range():
    rng = np.random.default_rng(3)
    d = _grid(rng.random((10, 10)))
    pts = PointSet.from_points([(float(x), float(y), "p") for x, y in rng.uniform(0, 100, (50, 2))])
    c = correlate_occurrences(d, pts)
    assert all(a >= b for a, b in zip(c.pct_points, c.pct_points[1:]))
    assert 0.0 <= c.auc <= 1.0


def test_correlation_csv(tmp_path):
    d = _grid([[1.0]])
    c = correlate_occurrences(d, _pts_in([(0, 0)], d.georef))
    p = tmp_path / "c.csv"
    c.write_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "threshold,pct_points,auc"
    assert len(rows) == 23 and rows[-1] == ",,1.0"


# ---------------------------------------------------------------- FCC

def _stack(bands):
    b = np.asarray(bands, float)
    return MultibandRaster(b.reshape(b.shape[0], 1, -1), None)


def test_fcc_identical_bands_score_three():
    x = np.random.default_rng(4).normal(size=1000)
    ranking, sd = rank_fcc_triplets(_stack([x, x, x]))
    assert len(ranking) == 1 and ranking[0].score == pytest.approx(3.0)
    assert ranking[0].bands == (1, 2, 3)


def test_fcc_independent_bands_score_small():
    x = np.random.default_rng(5).normal(size=(3, 10000))
    ranking, _ = rank_fcc_triplets(_stack(x))
    assert ranking[0].score < 0.1


def test_fcc_constructed_seven_band_stack():
    rng = np.random.default_rng(6)
    n = 20000
    # bands 2, 5, 7 are independent; the others mix all three
    chosen = {k: rng.normal(size=n) for k in (1, 4, 6)}
    mix = sum(chosen.values())
    bands = [chosen[k] if k in chosen else mix + 0.3 * rng.normal(size=n) for k in range(7)]
    ranking, _ = rank_fcc_triplets(_stack(bands))
    assert ranking[0].bands == (2, 5, 7)
    assert len(ranking) == 35
    assert all(a.score <= b.score for a, b in zip(ranking, ranking[1:]))


def test_fcc_constant_band_warns_and_counts_as_correlated(caplog):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 500))
    x[1] = 4.0
    with caplog.at_level(logging.WARNING):
        ranking, sd = rank_fcc_triplets(_stack(x))
    assert "constant" in caplog.text
    assert sd[1] == 0.0
    assert ranking[0].score >= 2.0


def test_fcc_needs_three_bands():
    with pytest.raises(ValueError):
        rank_fcc_triplets(_stack(np.zeros((2, 10))))
