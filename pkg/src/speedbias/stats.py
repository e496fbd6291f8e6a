"""Distribution functions and test-result records.

Regularized incomplete gamma and beta functions are evaluated here with a
power series / continued fraction switchover (modified Lentz). ``math.lgamma``
and ``math.erfc`` come from the standard library, as does the inverse normal
CDF (``statistics.NormalDist``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000

#: p-values below this are reported as zero / "< 1e-300".
P_FLOOR = 1e-300

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class TestResult:
    """Outcome of a hypothesis test."""

    __test__ = False  # not a pytest class

    statistic: float
    df: float
    p_value: float
    kind: str  # "chi_square" | "two_sample_t"

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "kind": self.kind,
        }


def clamp_p(p: float) -> float:
    """Clip a p-value to [0, 1], flushing values below :data:`P_FLOOR` to 0."""
    if p < P_FLOOR:
        return 0.0
    return min(p, 1.0)


def format_p(p: float) -> str:
    if p < P_FLOOR:
        return "< 1e-300"
    return f"{p:.4g}"


# ---------------------------------------------------------------------------
# incomplete gamma


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x); converges fast for x < a + 1
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized Q(a, x) by Lentz's continued fraction; x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("gammainc_upper requires a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("gammainc_lower requires a > 0 and x >= 0")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


# ---------------------------------------------------------------------------
# incomplete beta


def _beta_cf(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta fraction did not converge (a={a}, b={b}, x={x})")


def _betainc_pair(a: float, b: float, x: float, y: float) -> float:
    # I_x(a, b) with y = 1 - x supplied separately to avoid cancellation
    if x <= 0:
        return 0.0
    if y <= 0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, y) / b


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc requires 0 <= x <= 1")
    return _betainc_pair(a, b, x, 1.0 - x)


# ---------------------------------------------------------------------------
# distributions


def chi_square_sf(x: float, df: float) -> float:
    """P[X > x] for X ~ chi-squared with ``df`` degrees of freedom."""
    if df <= 0 or math.isnan(df):
        raise ValueError(f"df must be positive, got {df}")
    if x < 0 or math.isnan(x):
        raise ValueError(f"x must be non-negative, got {x}")
    return gammainc_upper(0.5 * df, 0.5 * x)


def chi_square_cdf(x: float, df: float) -> float:
    if df <= 0 or math.isnan(df):
        raise ValueError(f"df must be positive, got {df}")
    if x < 0 or math.isnan(x):
        raise ValueError(f"x must be non-negative, got {x}")
    return gammainc_lower(0.5 * df, 0.5 * x)


def _t_tail(x: float, df: float) -> float:
    # P[T > |x|]
    t2 = x * x
    if math.isinf(t2):
        return 0.0
    return 0.5 * _betainc_pair(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2))


def student_t_sf(x: float, df: float) -> float:
    """P[T > x] for Student's t with ``df`` degrees of freedom."""
    if df <= 0 or math.isnan(df):
        raise ValueError(f"df must be positive, got {df}")
    if math.isnan(x):
        raise ValueError("x is NaN")
    tail = _t_tail(x, df)
    return tail if x > 0 else 1.0 - tail


def student_t_cdf(x: float, df: float) -> float:
    if df <= 0 or math.isnan(df):
        raise ValueError(f"df must be positive, got {df}")
    if math.isnan(x):
        raise ValueError("x is NaN")
    tail = _t_tail(x, df)
    return tail if x < 0 else 1.0 - tail


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF on the open interval (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


#: two-sided 95% normal critical value
Z975 = normal_quantile(0.975)
