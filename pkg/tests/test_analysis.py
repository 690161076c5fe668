import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.interpolate import PchipInterpolator

from codeclab.analysis import (
    AnalysisError, Pchip, adaptive_simpson, bd_metric, build_curve, correlation_matrix,
    gap_decompose, overlap, pearson_corr, psnr, read_curve_csv, write_curve_csv,
)
from codeclab.codecs import RawImage

# Table 5 rows: uncompressed, then (compressed, finetuned) per codec JPEG/ELIC/ILLM
PUBLISHED_ROWS = {
    "SEEDBench": (73.81, [(60.56, 64.31), (65.28, 69.48), (56.13, 58.55)]),
    "POPE": (86.21, [(49.92, 79.40), (76.41, 82.31), (61.4, 74.02)]),
}
PUBLISHED_GAPS = {
    "SEEDBench": [(13.25, 9.5, 3.75), (8.53, 4.33, 4.2), (17.68, 15.26, 2.42)],
    "POPE": [(36.29, 6.81, 29.48), (9.8, 3.9, 5.9), (24.81, 12.19, 12.62)],
}

ANCHOR = [(0.05, 60), (0.1, 65), (0.2, 70), (0.3, 72)]
TEST = [(0.06, 63), (0.12, 69), (0.22, 73), (0.31, 74)]


def trapezoid_oracle(a, b, n=10_000):
    # independent: library PCHIP, fine grid, trapezoid rule
    lo, hi = overlap(a, b)
    t = np.linspace(lo, hi, n)
    fa = PchipInterpolator(np.log10(a.bpp), a.metric)(t)
    fb = PchipInterpolator(np.log10(b.bpp), b.metric)(t)
    return np.trapezoid(fb - fa, t) / (hi - lo)


def random_curve(r, label):
    bpp = np.sort(r.uniform(0.02, 1.0, size=r.integers(3, 7)))
    bpp = np.unique(np.round(bpp, 4))
    while len(bpp) < 3:
        bpp = np.unique(np.append(bpp, r.uniform(0.02, 1.0)))
    metric = np.cumsum(r.uniform(-1, 6, size=len(bpp))) + 40
    return build_curve(list(zip(bpp, metric)), label)


@pytest.mark.parametrize("bench", sorted(PUBLISHED_ROWS))
def test_published_gaps(bench):
    u, rows = PUBLISHED_ROWS[bench]
    for (c, f), expect in zip(rows, PUBLISHED_GAPS[bench]):
        assert gap_decompose(u, c, f).rounded(2) == expect


def test_gap_trivial_and_negative():
    g = gap_decompose(50.0, 50.0, 50.0)
    assert (g.performance_gap, g.information_gap, g.generalization_gap) == (0, 0, 0)
    g = gap_decompose(80.0, 70.0, 65.0)
    assert g.generalization_gap == -5.0


def test_gap_rejects_non_finite():
    with pytest.raises(AnalysisError):
        gap_decompose(1.0, float("nan"), 2.0)


@settings(max_examples=200, deadline=None)
@given(*[st.floats(-1e6, 1e6, allow_nan=False) for _ in range(3)])
def test_gap_identity_exact(u, c, f):
    g = gap_decompose(u, c, f)
    assert g.information_gap + g.generalization_gap - g.performance_gap == 0.0
    assert g.information_gap == u - f and g.generalization_gap == f - c


def test_gap_json_fields():
    import json
    d = json.loads(gap_decompose(3, 1, 2).to_json())
    assert set(d) == {"uncompressed", "compressed", "finetuned", "performance_gap", "information_gap",
                      "generalization_gap"}


def test_bd_identical_is_zero():
    a = build_curve(ANCHOR)
    assert bd_metric(a, a) == 0.0


def test_bd_constant_offset():
    a = build_curve(ANCHOR)
    b = build_curve([(x, y + 2.0) for x, y in ANCHOR])
    assert abs(bd_metric(a, b) - 2.0) <= 1e-9


def test_bd_matches_trapezoid_oracle():
    a, b = build_curve(ANCHOR, "a"), build_curve(TEST, "t")
    assert abs(bd_metric(a, b) - trapezoid_oracle(a, b)) <= 1e-6
    assert bd_metric(a, b) > 0


def test_bd_antisymmetric_and_order_invariant():
    a, b = build_curve(ANCHOR), build_curve(TEST)
    assert abs(bd_metric(a, b) + bd_metric(b, a)) <= 1e-9
    shuffled = build_curve(list(reversed(TEST)))
    assert bd_metric(a, shuffled) == bd_metric(a, b)


def test_bd_no_overlap():
    a = build_curve([(0.01, 1), (0.02, 2), (0.03, 3)])
    b = build_curve([(0.1, 1), (0.2, 2), (0.3, 3)])
    with pytest.raises(AnalysisError):
        bd_metric(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_bd_random_pairs(seed):
    r = np.random.default_rng(seed)
    a, b = random_curve(r, "a"), random_curve(r, "b")
    try:
        lo, hi = overlap(a, b)
    except AnalysisError:
        return
    assume(hi - lo > 1e-3)
    v = bd_metric(a, b)
    assert abs(v + bd_metric(b, a)) <= 1e-9
    assert abs(v - trapezoid_oracle(a, b)) <= 1e-6


def test_pchip_matches_library(rng):
    x = np.sort(rng.uniform(0, 5, 7))
    y = rng.normal(size=7)
    ours, ref = Pchip(x, y), PchipInterpolator(x, y)
    t = np.linspace(x[0], x[-1], 101)
    assert np.allclose([ours(v) for v in t], ref(t), atol=1e-12)


def test_pchip_is_monotone_on_monotone_data():
    x = np.array([0.0, 1.0, 1.5, 4.0])
    y = np.array([0.0, 0.1, 5.0, 5.2])
    f = Pchip(x, y)
    vals = [f(t) for t in np.linspace(0, 4, 400)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_simpson_polynomial():
    assert abs(adaptive_simpson(lambda t: 3 * t * t, 0.0, 2.0) - 8.0) < 1e-12
    assert abs(adaptive_simpson(math.sin, 0.0, math.pi) - 2.0) < 1e-9


def test_build_curve_rules():
    c = build_curve([(0.3, 3), (0.1, 1), (0.2, 2)])
    assert c.bpp == (0.1, 0.2, 0.3) and c.metric == (1.0, 2.0, 3.0)
    d = build_curve([(0.1, 60), (0.1, 62), (0.2, 70), (0.4, 80)])
    assert d.points[0] == (0.1, 61.0) and len(d.warnings) == 1
    with pytest.raises(AnalysisError):
        build_curve([(0.1, 1), (0.1, 2), (0.2, 3)])
    with pytest.raises(AnalysisError):
        build_curve([(0.1, 1), (0.2, 2)])
    with pytest.raises(AnalysisError):
        build_curve([(0.0, 1), (0.1, 2), (0.2, 3)])


def test_curve_csv_round_trip(tmp_path):
    c = build_curve(TEST, "t")
    write_curve_csv(c, tmp_path / "c.csv")
    back = read_curve_csv(tmp_path / "c.csv", "t")
    assert back == c


def test_psnr_values():
    a = RawImage(np.zeros((8, 8), dtype=np.uint8))
    b = RawImage(np.full((8, 8), 16, dtype=np.uint8))
    assert psnr(a, a) == math.inf
    assert psnr(a, b) == pytest.approx(20 * math.log10(255 / 16), abs=1e-12)
    assert round(psnr(a, b), 2) == 24.05
    with pytest.raises(AnalysisError):
        psnr(a, RawImage(np.zeros((8, 16), dtype=np.uint8)))


def test_psnr_symmetric(rng):
    for _ in range(10):
        a = RawImage(rng.integers(0, 256, (16, 16), dtype=np.uint8))
        b = RawImage(rng.integers(0, 256, (16, 16), dtype=np.uint8))
        assert psnr(a, b) == psnr(b, a)


def test_pearson_values():
    x = np.arange(5.0)
    assert pearson_corr(x, 2 * x) == pytest.approx(1.0, abs=1e-15)
    assert pearson_corr(x, -x) == pytest.approx(-1.0, abs=1e-15)
    assert abs(pearson_corr([1, 2, 3], [1, 3, 2]) - 0.5) <= 1e-12
    with pytest.raises(AnalysisError):
        pearson_corr([1, 1, 1], [1, 2, 3])
    with pytest.raises(AnalysisError):
        pearson_corr([1, 2], [2, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine_invariance(seed, scale, shift):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=10), r.normal(size=10)
    assert abs(pearson_corr(x, y) - pearson_corr(scale * x + shift, y)) <= 1e-12


def test_correlation_matrix_properties(rng):
    series = {k: rng.normal(size=12) for k in "abcd"}
    names, m = correlation_matrix(series)
    assert names == list("abcd")
    assert np.array_equal(np.diag(m), np.ones(4))
    assert np.array_equal(m, m.T)
    assert np.all(np.abs(m) <= 1)
