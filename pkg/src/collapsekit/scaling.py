"""Chinchilla-form loss laws, the constant-LR shape law, and compression costs.

The two-term law ``L(N, D) = E + A*N**-alpha + B*D**-beta`` is fit by
nonlinear least squares. With a shared exponent ``a = alpha = beta`` the
compute-optimal tokens-per-parameter ratio ``r`` satisfies ``B = A * r**a``,
which collapses intermediate losses of constant-LR runs onto a curve in
``(t_hat, k)`` alone and yields a closed-form compute cost for training a
smaller-than-optimal model to equal loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import InfeasibleError


@dataclass(frozen=True)
class ChinchillaFit:
    """Coefficients of ``L(N, D) = E + A*N**-alpha + B*D**-beta``."""

    E: float
    A: float
    alpha: float
    B: float
    beta: float

    def __post_init__(self):
        if self.E < 0.0 or not math.isfinite(self.E):
            raise ValueError("E must be finite and nonnegative")
        if self.A <= 0.0 or self.B <= 0.0:
            raise ValueError("A and B must be positive")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 2.0:
                raise ValueError(f"{name} must lie in (0, 2), got {v}")

    def evaluate(self, params: float, tokens: float) -> float:
        return self.E + self.A * params ** -self.alpha + self.B * tokens ** -self.beta

    @property
    def symmetric(self) -> bool:
        return self.alpha == self.beta


@dataclass(frozen=True)
class SymmetricLaw:
    """Shared-exponent law summarized by (a, r): exponent and optimal TPP.

    Implies ``B = A * r**a`` for any amplitude A.
    """

    a: float
    r: float

    def __post_init__(self):
        if self.a <= 0.0 or self.r <= 0.0:
            raise ValueError("a and r must be positive")

    def implied_b(self, A: float) -> float:
        return A * self.r ** self.a


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

_EXP_BOUNDS = (1e-3, 2.0 - 1e-9)


def _initializations(N, D, L) -> list[np.ndarray]:
    """16 deterministic starting points spanning plausible exponents and offsets."""
    lmin = float(np.min(L))
    inits = []
    for e_frac in (0.0, 0.8):
        for a0 in (0.2, 0.35, 0.5, 0.8):
            for scale in (1.0, 4.0):
                E0 = e_frac * lmin
                resid = np.maximum(L - E0, 1e-9)
                A0 = scale * float(np.median(resid * N**a0)) / 2.0
                B0 = scale * float(np.median(resid * D**a0)) / 2.0
                inits.append(np.array([E0, math.log(max(A0, 1e-12)), a0,
                                       math.log(max(B0, 1e-12)), a0]))
    return inits


def fit_chinchilla(points: Sequence[tuple[float, float, float]],
                   log_space: bool = False,
                   max_restarts: int = 16) -> tuple[ChinchillaFit, float]:
    """Fit the two-term law to (params, tokens, final_loss) observations.

    Least squares on loss-space residuals by default; ``log_space=True``
    switches to log-loss residuals (multiplicative noise). Runs 16
    deterministic initializations and keeps the best by residual norm,
    breaking ties by lexicographic parameter order. Returns the fit and the
    residual norm.
    """
    if len(points) < 5:
        raise ValueError("need at least 5 points to fit 5 parameters")
    N = np.array([p[0] for p in points], dtype=float)
    D = np.array([p[1] for p in points], dtype=float)
    L = np.array([p[2] for p in points], dtype=float)
    if np.unique(N).size < 2 or np.unique(D).size < 2:
        raise ValueError("degenerate design: need at least 2 distinct N and 2 distinct D")
    if np.any(L <= 0.0):
        raise ValueError("losses must be positive")

    def residuals(x):
        E, logA, a, logB, b = x
        pred = E + np.exp(logA) * N**-a + np.exp(logB) * D**-b
        if log_space:
            return np.log(np.maximum(pred, 1e-300)) - np.log(L)
        return pred - L

    lo = np.array([0.0, -60.0, _EXP_BOUNDS[0], -60.0, _EXP_BOUNDS[0]])
    hi = np.array([float(np.min(L)), 60.0, _EXP_BOUNDS[1], 60.0, _EXP_BOUNDS[1]])
    hi[0] = max(hi[0], 1e-12)

    best: tuple[float, np.ndarray] | None = None
    for x0 in _initializations(N, D, L)[:max_restarts]:
        x0 = np.clip(x0, lo + 1e-12, hi - 1e-12)
        try:
            res = least_squares(residuals, x0, bounds=(lo, hi),
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        except Exception:
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        norm = float(np.linalg.norm(residuals(res.x)))
        key = (norm, tuple(res.x))
        if best is None or key < (best[0], tuple(best[1])):
            best = (norm, res.x)
    if best is None:
        raise RuntimeError("fit did not converge from any initialization")
    norm, x = best
    fit = ChinchillaFit(E=float(x[0]), A=float(math.exp(x[1])), alpha=float(x[2]),
                        B=float(math.exp(x[3])), beta=float(x[4]))
    return fit, norm


# ---------------------------------------------------------------------------
# Shape laws
# ---------------------------------------------------------------------------


def normalized_tpp_curve(t_hat: float, v: float, a: float):
    """Normalized constant-LR loss as a function of overtraining factor.

    ``(1 + v**-a * t_hat**-a) / (1 + v**-a)`` where ``v`` is trained TPP over
    optimal TPP. Equals 1 exactly at ``t_hat = 1``; for fixed ``t_hat < 1``
    it falls toward 1 as ``v`` grows (overtrained runs gain early and
    flatten). Singular at ``t_hat = 0``.
    """
    t = np.asarray(t_hat, dtype=float)
    if np.any(t <= 0.0) or np.any(t > 1.0):
        raise ValueError("t_hat must lie in (0, 1]")
    if v <= 0.0 or a <= 0.0:
        raise ValueError("v and a must be positive")
    va = v ** -a
    out = (1.0 + va * t**-a) / (1.0 + va)
    return float(out) if np.ndim(t_hat) == 0 else out


def normalized_constant_lr_curve(t_hat: float, k: float, fit: ChinchillaFit):
    """Normalized constant-LR loss at tokens-per-parameter ``k``.

    ``(A + B * t_hat**-a * k**-a) / (A + B * k**-a)`` with the fit's shared
    exponent; model size cancels, so no N argument exists. Requires
    ``fit.alpha == fit.beta``. Reduces to :func:`normalized_tpp_curve` with
    ``v = k / r`` when ``B = A * r**a``.
    """
    if not fit.symmetric:
        raise ValueError("requires a fit with alpha == beta")
    t = np.asarray(t_hat, dtype=float)
    if np.any(t <= 0.0) or np.any(t > 1.0):
        raise ValueError("t_hat must lie in (0, 1]")
    if k <= 0.0:
        raise ValueError("k must be positive")
    a = fit.alpha
    ka = k ** -a
    out = (fit.A + fit.B * t**-a * ka) / (fit.A + fit.B * ka)
    return float(out) if np.ndim(t_hat) == 0 else out


# ---------------------------------------------------------------------------
# Compute vs compression trade-off
# ---------------------------------------------------------------------------


def parameter_wall(a: float) -> float:
    """Smallest feasible model-size fraction ``2**(-1/a)``.

    Below this fraction the token factor's argument ``2 - k_N**-a`` is
    nonpositive: no token budget reaches the target loss.
    """
    if a <= 0.0:
        raise ValueError("a must be positive")
    return 2.0 ** (-1.0 / a)


def compression_tokens_factor(k_n: float, a: float) -> float:
    """Extra-token factor ``k_D = (2 - k_N**-a)**(-1/a)`` for equal loss.

    ``k_n`` is the compressed model's fraction of the compute-optimal size.
    Feasible only on ``(parameter_wall(a), 1]``; diverges at the wall.
    """
    wall = parameter_wall(a)
    if k_n > 1.0:
        raise InfeasibleError(f"k_n = {k_n} exceeds 1: out of modeled range")
    if k_n <= wall:
        raise InfeasibleError(
            f"k_n = {k_n} is at or below the parameter wall {wall:.6g}: infeasible"
        )
    return (2.0 - k_n ** -a) ** (-1.0 / a)


def compression_cost(k_n: float, a: float) -> float:
    """Compute ratio ``C/C_opt = k_N * k_D`` of equal-loss compressed training."""
    return k_n * compression_tokens_factor(k_n, a)


def optimal_allocation(compute: float, law: SymmetricLaw,
                       A: float | None = None) -> tuple[float, float]:
    """Loss-optimal (N, D) split of a FLOP budget under ``C = 6*N*D``.

    With a symmetric law the split depends only on ``r``:
    ``N_opt = (C/6)**0.5 / r**0.5`` and ``D_opt = r**0.5 * (C/6)**0.5``,
    so ``D_opt / N_opt == r`` exactly. ``A`` is accepted for call-site
    symmetry with the full law; the allocation does not depend on it.
    """
    if compute <= 0.0:
        raise ValueError("compute must be positive")
    g = law.r ** -0.5
    half = (compute / 6.0) ** 0.5
    return g * half, half / g


def effective_tpp_moe(dense_tpp: float, experts: int) -> float:
    """Per-expert tokens-per-parameter when tokens are routed across experts."""
    if experts < 1:
        raise ValueError("experts must be >= 1")
    if dense_tpp <= 0.0:
        raise ValueError("dense_tpp must be positive")
    return dense_tpp / experts
