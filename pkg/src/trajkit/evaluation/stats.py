"""Paired model comparison: Shapiro-Wilk normality check routing to a paired t-test or Wilcoxon."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri, stdtr

PAIRED_T = "paired-t"
WILCOXON = "wilcoxon"
EXACT_MAX = 15

# Royston's polynomial approximations for the coefficients and the null distribution of W
_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


class DegenerateStatsError(ValueError):
    """Test undefined for the given input (e.g. identical results)."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float
    degenerate: bool = False
    method: str = ""

    def __iter__(self):
        return iter((self.statistic, self.pvalue))


def _poly(c: Sequence[float], x: float) -> float:
    out = 0.0
    for coef in reversed(c):
        out = out * x + coef
    return out


def _sw_coefficients(n: int) -> np.ndarray:
    """Antisymmetric weights a_1..a_n for the ordered sample."""
    half = n // 2
    if n == 3:
        upper = np.array([math.sqrt(0.5)])
    else:
        m = -ndtri((np.arange(1, half + 1) - 0.375) / (n + 0.25))
        summ2 = 2.0 * float(np.dot(m, m))
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_C1, rsn) + m[0] / ssumm2
        upper = np.empty(half)
        if n > 5:
            a2 = m[1] / ssumm2 + _poly(_C2, rsn)
            fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1 ** 2 - 2 * a2 ** 2))
            upper[1] = a2
            start = 2
        else:
            fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1 ** 2))
            start = 1
        upper[0] = a1
        upper[start:] = m[start:] / fac
    a = np.zeros(n)
    a[:half] = -upper
    a[n - half:] = upper[::-1]
    return a


def shapiro_wilk(sample: Sequence[float]) -> TestResult:
    """W statistic and p-value from Royston's approximation (valid for 3 <= n <= 5000)."""
    x = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    n = len(x)
    if n < 3:
        raise ValueError("Shapiro-Wilk needs at least 3 observations")
    if n > 5000:
        raise ValueError("Shapiro-Wilk approximation is only valid up to n = 5000")
    rng = x[-1] - x[0]
    if not rng > 0:
        raise DegenerateStatsError("Shapiro-Wilk is undefined for a zero-variance sample")
    a = _sw_coefficients(n)
    xs = (x - x[n // 2]) / rng
    ac = a - a.mean()
    xc = xs - xs.mean()
    ssa, ssx, sax = float(ac @ ac), float(xc @ xc), float(ac @ xc)
    w1 = (ssa * ssx - sax * sax) / (ssa * ssx)  # 1 - W without cancellation
    w = 1.0 - w1
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return TestResult(w, max(p, 0.0), method="shapiro-wilk")
    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return TestResult(w, 1e-99, method="shapiro-wilk")
        y = -math.log(gamma - y)
        mu, sigma = _poly(_C3, n), math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu, sigma = _poly(_C5, ln), math.exp(_poly(_C6, ln))
    return TestResult(w, float(ndtr(-(y - mu) / sigma)), method="shapiro-wilk")


def _differences(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    return a - b


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Two-sided paired t-test on a - b with n - 1 degrees of freedom.

    Constant nonzero differences give t = +/-inf and p = 0, flagged degenerate.
    """
    d = _differences(a, b)
    n = len(d)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    if not np.any(d):
        raise DegenerateStatsError("identical results: all paired differences are zero")
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        return TestResult(math.copysign(math.inf, mean), 0.0, degenerate=True, method=PAIRED_T)
    t = float(mean / (sd / math.sqrt(n)))
    p = float(2.0 * stdtr(n - 1, -abs(t)))
    return TestResult(t, min(p, 1.0), method=PAIRED_T)


def _signed_ranks(d: np.ndarray) -> np.ndarray:
    """Average ranks of |d| (ties share the mean rank)."""
    absd = np.abs(d)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(len(d))
    sorted_abs = absd[order]
    i = 0
    while i < len(d):
        j = i
        while j + 1 < len(d) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_pvalue(ranks: np.ndarray, t_plus: float) -> float:
    """Two-sided p of T+ under random signs, by counting sign patterns via DP on doubled ranks."""
    r2 = np.rint(2 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:-r].copy()
    counts /= counts.sum()
    obs = int(round(2 * t_plus))
    cdf = counts[:obs + 1].sum()
    sf = counts[obs:].sum()
    return float(min(1.0, 2.0 * min(cdf, sf)))


def wilcoxon(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Wilcoxon signed-rank test on a - b; zero differences are dropped.

    The statistic is min(T+, T-). With m <= 15 nonzero differences the p-value
    is exact; above that the tie-corrected normal approximation is used.
    """
    d = _differences(a, b)
    d = d[d != 0]
    m = len(d)
    if m == 0:
        raise DegenerateStatsError("identical results: all paired differences are zero")
    ranks = _signed_ranks(d)
    t_plus = float(ranks[d > 0].sum())
    t_minus = float(ranks[d < 0].sum())
    stat = min(t_plus, t_minus)
    if m <= EXACT_MAX:
        return TestResult(stat, _exact_pvalue(ranks, t_plus), method=WILCOXON)
    mean = m * (m + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = m * (m + 1) * (2 * m + 1) / 24.0 - float((tie_counts ** 3 - tie_counts).sum()) / 48.0
    z = (t_plus - mean) / math.sqrt(var)
    return TestResult(stat, float(min(1.0, 2.0 * ndtr(-abs(z)))), method=WILCOXON)


@dataclass
class ComparisonResult:
    model_a: str
    model_b: str
    normality_p: float
    test: str
    statistic: float
    p_value: float
    alpha: float
    reject_null: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        verdict = "rejected" if self.reject_null else "accepted"
        return (f"{self.model_a} vs {self.model_b}: Shapiro-Wilk p={self.normality_p:.4g} -> {self.test}, "
                f"statistic={self.statistic:.4g}, p={self.p_value:.4g}; null {verdict} at alpha={self.alpha}")


def choose_test(normality_p: float, alpha: float = 0.05) -> str:
    """Normality p above alpha routes to the paired t-test, anything else to Wilcoxon."""
    return PAIRED_T if normality_p > alpha else WILCOXON


def compare_models(acc_a: Sequence[float], acc_b: Sequence[float], alpha: float = 0.05,
                   names: tuple[str, str] = ("A", "B")) -> ComparisonResult:
    """Compare two models' per-fold accuracies on the equal-distribution null."""
    d = _differences(acc_a, acc_b)
    try:
        normality = shapiro_wilk(d)
    except DegenerateStatsError:
        # constant differences: normality test undefined, fall back to the rank test
        if not np.any(d):
            raise DegenerateStatsError(f"{names[0]} vs {names[1]}: identical results in every fold") from None
        normality = TestResult(0.0, 0.0, degenerate=True)
    except ValueError as exc:
        raise ValueError(f"{names[0]} vs {names[1]}: {exc}") from None
    test = choose_test(normality.pvalue, alpha)
    try:
        res = paired_ttest(acc_a, acc_b) if test == PAIRED_T else wilcoxon(acc_a, acc_b)
    except ValueError as exc:
        raise type(exc)(f"{names[0]} vs {names[1]} ({test}): {exc}") from None
    return ComparisonResult(names[0], names[1], float(normality.pvalue), test, float(res.statistic),
                            float(res.pvalue), alpha, bool(res.pvalue < alpha),
                            res.degenerate or normality.degenerate)
