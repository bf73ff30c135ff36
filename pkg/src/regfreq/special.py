"""Incomplete Beta function by continued fraction.

Scalar routines built on :mod:`math`; they are called inside per-site
fitting loops where numpy dispatch overhead would dominate.
"""

import math

_TINY = 1e-300


def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 1000) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
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
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _front(a: float, b: float, x: float) -> float:
    # x^a (1-x)^b / B(a, b)
    return math.exp(a * math.log(x) + b * math.log1p(-x) - log_beta(a, b))


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete Beta function I_x(a, b) for a, b > 0."""
    if a <= 0 or b <= 0:
        raise ValueError(f"betainc needs a, b > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"betainc needs 0 <= x <= 1, got {x}")
    if x == 0.0 or x == 1.0:
        return x
    if x < (a + 1.0) / (a + b + 2.0):
        return _front(a, b, x) * _betacf(a, b, x) / a
    return 1.0 - _front(a, b, x) * _betacf(b, a, 1.0 - x) / b


def betaincc(a: float, b: float, x: float) -> float:
    """Complement 1 - I_x(a, b), evaluated without cancellation."""
    if a <= 0 or b <= 0:
        raise ValueError(f"betaincc needs a, b > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"betaincc needs 0 <= x <= 1, got {x}")
    if x == 0.0 or x == 1.0:
        return 1.0 - x
    if x < (a + 1.0) / (a + b + 2.0):
        return 1.0 - _front(a, b, x) * _betacf(a, b, x) / a
    return _front(a, b, x) * _betacf(b, a, 1.0 - x) / b


def upper_beta(lower: float, a: float, b: float) -> float:
    """Unregularized tail integral of w^(a-1) (1-w)^(b-1) from ``lower`` to 1.

    This is B(a, b) * (1 - I_lower(a, b)).
    """
    return math.exp(log_beta(a, b)) * betaincc(a, b, lower)
