"""Legendre polynomials by upward three-term recurrence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LegendreTable", "legendre_all", "legendre_series", "legendre_derivative_bound_check"]


@dataclass(frozen=True)
class LegendreTable:
    argument: float
    max_degree: int
    values: np.ndarray


def _check_arg(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0) or np.any(np.isnan(x)):
        raise ValueError("Legendre argument outside [-1, 1]")
    return x


def legendre_all(x: float, L: int) -> LegendreTable:
    """P_0(x), ..., P_L(x)."""
    if L < 0:
        raise ValueError("degree must be nonnegative")
    x = float(_check_arg(x))
    vals = np.empty(L + 1)
    vals[0] = 1.0
    if L >= 1:
        vals[1] = x
    for l in range(1, L):
        vals[l + 1] = ((2 * l + 1) * x * vals[l] - l * vals[l - 1]) / (l + 1)
    return LegendreTable(x, L, vals)


def legendre_series(coeffs: np.ndarray, x) -> np.ndarray:
    """Evaluate sum_l coeffs[l] P_l(x) for an array of arguments without storing every P_l."""
    x = _check_arg(x)
    coeffs = np.asarray(coeffs, dtype=float)
    p_prev = np.ones_like(x)
    total = coeffs[0] * p_prev
    if len(coeffs) == 1:
        return total
    p = x.copy()
    total = total + coeffs[1] * p
    for l in range(1, len(coeffs) - 1):
        p_prev, p = p, ((2 * l + 1) * x * p - l * p_prev) / (l + 1)
        total += coeffs[l + 1] * p
    return total


def legendre_derivative_bound_check(L: int, samples: int = 1000) -> bool:
    """Check that secant slopes of P_1..P_L on a uniform mesh stay below l(l+1)/2.

    By the mean value theorem each secant slope equals P_l' somewhere in between, so this
    probes the derivative bound sup |P_l'| <= l(l+1)/2 without differentiating.
    """
    if L < 1:
        raise ValueError("need L >= 1")
    x = np.linspace(-1.0, 1.0, samples)
    dx = np.diff(x)
    p_prev, p = np.ones_like(x), x.copy()
    for l in range(1, L + 1):
        slope = np.abs(np.diff(p) / dx)
        if slope.max() > l * (l + 1) / 2 * (1 + 1e-6):
            return False
        p_prev, p = p, ((2 * l + 1) * x * p - l * p_prev) / (l + 1)
    return True
