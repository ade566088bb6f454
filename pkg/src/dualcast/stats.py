"""Small statistics kernels: regularized incomplete beta, Student-t tail, OLS slope test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_CF_MAX_ITER = 500
_CF_EPS = 3e-16
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < dof:
        # Near t = 0 the argument dof/(dof+t^2) rounds towards 1; use the mirrored form instead.
        return 1.0 - betainc(0.5, dof / 2.0, t2 / (dof + t2))
    return betainc(dof / 2.0, 0.5, dof / (dof + t2))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    p_value: float
    residual_mse: float


def ols_slope_test(y) -> SlopeFit:
    """Fit y ~ a + b*i on i = 0..n-1 and t-test b != 0 with n-2 dof.

    A zero-residual fit reports p = 0 for a nonzero slope and p = 1 for a
    flat line.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise ValueError("need at least two points")
    x = np.arange(n, dtype=np.float64)
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    slope = float(dx @ (y - ym)) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sse = float(resid @ resid)
    syy = float((y - ym) @ (y - ym))
    mse = sse / n
    if n == 2 or sse <= 1e-24 * max(syy, 1e-300) or sse == 0.0:
        p = 0.0 if slope != 0.0 and syy > 0.0 else 1.0
    else:
        se = math.sqrt(sse / (n - 2) / sxx)
        p = t_two_sided_p(slope / se, n - 2)
    return SlopeFit(slope, intercept, min(max(p, 0.0), 1.0), mse)
