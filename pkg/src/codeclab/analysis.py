"""Gap decomposition, rate-metric curves, BD metric, PSNR and correlation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .codecs import RawImage


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------- gaps

@dataclass(frozen=True)
class GapReport:
    uncompressed: float
    compressed: float
    finetuned: float
    performance_gap: float
    information_gap: float
    generalization_gap: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def rounded(self, digits: int = 2) -> tuple[float, float, float]:
        return (round(self.performance_gap, digits), round(self.information_gap, digits),
                round(self.generalization_gap, digits))


def gap_decompose(u: float, c: float, f: float) -> GapReport:
    """Split the drop u - c into an information part (u - f) and a
    generalization part (f - c).  No clamping."""
    vals = [float(v) for v in (u, c, f)]
    if not all(math.isfinite(v) for v in vals):
        raise AnalysisError(f"gap inputs must be finite, got {vals}")
    u, c, f = vals
    info = u - f
    gen = f - c
    # Defined as the sum so the identity holds bit-exactly; u - c can differ
    # from it in the last ulp.
    return GapReport(u, c, f, info + gen, info, gen)


# ---------------------------------------------------------------- curves

@dataclass(frozen=True)
class RateMetricCurve:
    label: str
    bpp: tuple
    metric: tuple
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.bpp) != len(self.metric):
            raise AnalysisError("bpp and metric lengths differ")
        if len(self.bpp) < 3:
            raise AnalysisError(f"curve {self.label!r} needs at least 3 points, got {len(self.bpp)}")
        b = np.asarray(self.bpp, dtype=np.float64)
        if not np.all(b > 0) or not np.all(np.isfinite(b)):
            raise AnalysisError("bpp values must be positive and finite")
        if not np.all(np.diff(b) > 0):
            raise AnalysisError("bpp values must be strictly increasing")
        if not np.all(np.isfinite(self.metric)):
            raise AnalysisError("metric values must be finite")

    @property
    def points(self):
        return list(zip(self.bpp, self.metric))


def build_curve(rows, label: str = "") -> RateMetricCurve:
    """Sort by bpp, averaging the metric over duplicate bpp values."""
    rows = [(float(b), float(m)) for b, m in rows]
    if len(rows) < 3:
        raise AnalysisError(f"need at least 3 records, got {len(rows)}")
    groups: dict[float, list[float]] = {}
    for b, m in rows:
        groups.setdefault(b, []).append(m)
    warnings = tuple(f"bpp {b:g}: {len(ms)} duplicate points averaged"
                     for b, ms in sorted(groups.items()) if len(ms) > 1)
    if len(groups) < 3:
        raise AnalysisError(f"need at least 3 distinct bpp values, got {len(groups)}")
    bpp = tuple(sorted(groups))
    metric = tuple(float(np.mean(groups[b])) for b in bpp)
    return RateMetricCurve(label, bpp, metric, warnings)


def read_curve_csv(path, label: str | None = None) -> RateMetricCurve:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"bpp", "metric"} <= set(reader.fieldnames):
            raise AnalysisError(f"{path}: expected header bpp,metric")
        rows = [(r["bpp"], r["metric"]) for r in reader]
    return build_curve(rows, label if label is not None else str(path))


def write_curve_csv(curve: RateMetricCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bpp", "metric"])
        for b, m in curve.points:
            w.writerow([repr(b), repr(m)])


# ---------------------------------------------------------------- BD metric

def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Fritsch-Carlson derivatives (same end-point rule as the usual library routine)."""
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    for k in range(1, n - 1):
        if delta[k - 1] * delta[k] > 0:
            w1 = 2 * h[k] + h[k - 1]
            w2 = h[k] + 2 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])

    def end(h0, h1, m0, m1):
        s = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
        if np.sign(s) != np.sign(m0):
            return 0.0
        if np.sign(m0) != np.sign(m1) and abs(s) > abs(3 * m0):
            return 3 * m0
        return s

    if n == 2:
        d[:] = delta[0]
    else:
        d[0] = end(h[0], h[1], delta[0], delta[1])
        d[-1] = end(h[-1], h[-2], delta[-1], delta[-2])
    return d


class Pchip:
    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.d = pchip_slopes(self.x, self.y)

    def __call__(self, t: float) -> float:
        x, y, d = self.x, self.y, self.d
        k = int(np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2))
        h = x[k + 1] - x[k]
        s = (t - x[k]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return float(h00 * y[k] + h10 * h * d[k] + h01 * y[k + 1] + h11 * h * d[k + 1])


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-9, max_depth: int = 50) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6 * (fa + 4 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15
        return (rec(a, m, fa, flm, fm, left, tol / 2, depth - 1)
                + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1))

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def overlap(anchor: RateMetricCurve, test: RateMetricCurve) -> tuple[float, float]:
    lo = max(math.log10(anchor.bpp[0]), math.log10(test.bpp[0]))
    hi = min(math.log10(anchor.bpp[-1]), math.log10(test.bpp[-1]))
    if not hi > lo:
        raise AnalysisError(f"curves {anchor.label!r} and {test.label!r} have no overlapping rate range")
    return lo, hi


def bd_metric(anchor: RateMetricCurve, test: RateMetricCurve, tol: float = 1e-9) -> float:
    """Mean of test - anchor over the shared log10(bpp) range (positive = test better)."""
    for c in (anchor, test):
        if len(c.bpp) < 3:
            raise AnalysisError("bd_metric needs at least 3 points per curve")
    lo, hi = overlap(anchor, test)
    fa = Pchip(np.log10(anchor.bpp), anchor.metric)
    ft = Pchip(np.log10(test.bpp), test.metric)
    # Integrate each interpolant piecewise between the union of knots so every
    # Simpson panel sees a single cubic.
    knots = np.unique(np.concatenate([[lo, hi], fa.x, ft.x]))
    knots = knots[(knots >= lo) & (knots <= hi)]
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        total += adaptive_simpson(lambda t: ft(t) - fa(t), a, b, tol)
    return total / (hi - lo)


# ---------------------------------------------------------------- image / series metrics

def psnr(a: RawImage, b: RawImage) -> float:
    """PSNR in dB; identical images give ``math.inf``."""
    if a.dims != b.dims:
        raise AnalysisError(f"dimension mismatch {a.dims} vs {b.dims}")
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def pearson_corr(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalysisError("series must be 1-D and of equal length")
    if len(x) < 3:
        raise AnalysisError("need at least 3 samples")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise AnalysisError("correlation undefined for a zero-variance series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def correlation_matrix(series: dict) -> tuple[list, np.ndarray]:
    """Pairwise Pearson over named series; diagonal is exactly 1."""
    names = list(series)
    k = len(names)
    m = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            m[i, j] = m[j, i] = pearson_corr(series[names[i]], series[names[j]])
    return names, m
