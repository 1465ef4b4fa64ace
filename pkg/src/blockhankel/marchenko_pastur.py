"""Closed-form Marchenko-Pastur quantities for unit-variance entries with ratio ``c``.

These are reference values for the all-white ensemble; nothing here calls
the fixed-point solver.
"""
from __future__ import annotations

import numpy as np
from scipy import integrate


def edges(c: float) -> tuple[float, float]:
    s = np.sqrt(c)
    return (1 - s) ** 2, (1 + s) ** 2


def stieltjes(z, c: float):
    """``m(z) = int dMP_c(x) / (x - z)`` via the root of ``c z m^2 - (1 - c - z) m + 1 = 0``.

    The product ``sqrt(z - a) sqrt(z - b)`` of principal roots selects the
    branch analytic off ``[a, b]`` with ``m(z) ~ -1/z`` at infinity.
    """
    z = np.asarray(z, dtype=complex)
    a, b = edges(c)
    root = np.sqrt(z - a) * np.sqrt(z - b)
    out = (1 - c - z + root) / (2 * c * z)
    return complex(out) if out.ndim == 0 else out


def density(x, c: float):
    """Absolutely continuous part of the law (the atom at 0 for ``c > 1`` excluded)."""
    x = np.asarray(x, dtype=float)
    a, b = edges(c)
    inside = (x > a) & (x < b)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2 * np.pi * c * xi)
    return float(out) if out.ndim == 0 else out


def atom(c: float) -> float:
    return max(0.0, 1.0 - 1.0 / c)


def cdf(x, c: float):
    """Distribution function, including the atom at 0 when ``c > 1``."""
    a, b = edges(c)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    for i, xv in enumerate(xs):
        base = atom(c) if xv >= 0 else 0.0
        if xv <= a:
            out[i] = base
        elif xv >= b:
            out[i] = 1.0
        else:
            out[i] = base + integrate.quad(density, a, xv, args=(c,), limit=200)[0]
    return out if np.ndim(x) else float(out[0])


def log_moment(c: float) -> float:
    """``int log(x) dMP_c(x)`` for ``0 < c < 1``: ``(c - 1)/c log(1 - c) - 1``."""
    if not 0 < c < 1:
        raise ValueError("log moment is finite only for 0 < c < 1")
    return (c - 1) / c * np.log1p(-c) - 1.0
