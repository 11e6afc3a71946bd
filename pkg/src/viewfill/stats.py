"""Paired t-test on fold-level metrics, with its own Student-t tail machinery.

The two-sided p-value comes from the identity P(|T_df| > t) = I_x(df/2, 1/2)
with x = df / (df + t^2), where I is the regularized incomplete beta
function, evaluated here with a modified Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import LengthMismatch


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the continued fraction in the series
    # expansion of I_x(a, b); converges fast for x < (a + 1) / (a + b + 2).
    tiny = 1e-300
    eps = 1e-15
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        # even step
        numer = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + numer * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numer / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        # odd step
        numer = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + numer * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numer / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1], accurate to ~1e-14."""
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - log_beta(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability P(|T_df| >= |t|)."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 1.0
    if math.isinf(t):
        return 0.0
    # p = I_x(df/2, 1/2) at x = df/(df + t^2), but forming x directly rounds
    # to 1 for tiny t and the tail vanishes; the complement y = t^2/(df + t^2)
    # is exact there, and I_x(a, b) = 1 - I_y(b, a)
    y = (t * t) / (df + t * t)
    return 1.0 - regularized_incomplete_beta(0.5, df / 2.0, y)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool
    zero_variance: bool = False


def paired_t_test(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> TTestResult:
    """Two-sided paired t-test on per-fold metric values.

    Degenerate inputs where every difference is identical (zero variance)
    are reported rather than raised: all-zero differences give t=0, p=1,
    not significant; a constant nonzero shift is reported significant with
    p recorded as 0 and t as signed infinity.
    """
    if len(a) != len(b):
        raise LengthMismatch(f"paired samples differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError(f"paired t-test needs at least 2 pairs, got {n}")
    diffs = [float(x) - float(y) for x, y in zip(a, b)]
    mean = sum(diffs) / n
    ss = sum((d - mean) ** 2 for d in diffs)
    if ss == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, significant=False, zero_variance=True)
        t = math.copysign(math.inf, mean)
        return TTestResult(t=t, p=0.0, significant=True, zero_variance=True)
    sd = math.sqrt(ss / (n - 1))
    t = mean / (sd / math.sqrt(n))
    p = student_t_two_sided_p(t, n - 1)
    return TTestResult(t=t, p=p, significant=p < alpha)
