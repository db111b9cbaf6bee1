"""Deterministic 1-D search used to fit curve normalizers.

The alignment objective ``u -> mean |observed * u - target|`` is convex in
``u = 1/L_T`` (a mean of absolute affine functions), so golden-section search
on ``u`` converges to the global minimum. Brackets extend adaptively when the
minimum lands on an edge.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_minimize(f: Callable[[float], float], lo: float, hi: float,
                    rel_tol: float = 1e-13, max_iter: int = 400) -> float:
    """Golden-section minimum of a unimodal function on [lo, hi]."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if (b - a) <= rel_tol * max(abs(a), abs(b), 1e-300):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_normalizer(observed: np.ndarray, target: np.ndarray,
                   lo: float, hi: float,
                   adaptive: bool = True, max_extensions: int = 60) -> float:
    """Normalizer L_T minimizing mean |observed / L_T - target|.

    Searches over ``u = 1/L_T`` where the objective is convex. ``lo``/``hi``
    bracket L_T; with ``adaptive`` the bracket doubles outward while the
    minimum sits on an edge.
    """
    if observed.size == 0:
        raise ValueError("no points to align on")
    if not 0.0 < lo < hi:
        raise ValueError("normalizer bracket must be positive with lo < hi")

    def obj_u(u: float) -> float:
        return float(np.mean(np.abs(observed * u - target)))

    u_lo, u_hi = 1.0 / hi, 1.0 / lo
    for _ in range(max_extensions):
        u_star = golden_minimize(obj_u, u_lo, u_hi)
        width = u_hi - u_lo
        edge = 1e-3 * width
        if not adaptive:
            break
        if u_star - u_lo < edge:
            u_lo = max(u_lo / 2.0, 1e-300)
            continue
        if u_hi - u_star < edge:
            u_hi = u_hi * 2.0
            continue
        break
    return 1.0 / u_star
