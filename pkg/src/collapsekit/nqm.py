"""Noisy quadratic model of optimizer dynamics as an EMA over updates.

A single quadratic mode with curvature ``h`` and optimum at zero is trained
by an exponential moving average of stochastic updates:

    theta_t = (1 - alpha_t) * theta_{t-1} + alpha_t * x_{t-1},

with smoothing ``alpha_t = eta(t_hat) / (tau * T)`` and i.i.d. zero-mean
Gaussian updates ``x_t``. The loss is ``L_t = h * theta_t**2 / 2``.

Noise calibration. The continuum model treats ``x`` as white noise of
variance ``sigma_x2`` in training-fraction time, which yields the stationary
variance ``sigma_x2 / (2 * tau)`` under a constant schedule. A discrete EMA
of i.i.d. noise with per-step variance ``v`` has stationary variance
``alpha * v / (2 - alpha)``; matching the two fixes the per-step draw
variance used here:

    v = sigma_x2 * T * (2 - alpha) / 2.

With this calibration the discrete recursion reproduces the closed-form
expected loss up to O(alpha) transient discrepancy (<0.2% for the step
counts used in the tests); ``expected_loss`` is the constant-schedule
closed form and ``simulate`` the Monte-Carlo estimate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .schedules import LrSchedule, constant, eta_at

DEFAULT_BLOCK = 4096


@dataclass(frozen=True)
class NqmConfig:
    curvature: float
    noise_var: float
    theta0: float
    tau: float
    total_steps: int
    schedule: LrSchedule = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.schedule is None:
            object.__setattr__(self, "schedule", constant())
        if self.curvature <= 0.0:
            raise ValueError("curvature must be positive")
        if self.noise_var < 0.0:
            raise ValueError("noise_var must be nonnegative")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.alpha_peak < 1.0:
            raise ValueError(
                f"peak smoothing alpha = 1/(tau*T) = {self.alpha_peak} is outside (0, 1)"
            )

    @property
    def alpha_peak(self) -> float:
        return 1.0 / (self.tau * self.total_steps)

    @property
    def step_noise_var(self) -> float:
        """Per-step draw variance matching the continuum stationary variance."""
        return self.noise_var * self.total_steps * (2.0 - self.alpha_peak) / 2.0


@dataclass(frozen=True)
class SimulatedCurve:
    """Across-seed mean loss per recorded step, with its standard error."""

    t_hat: np.ndarray
    mean_loss: np.ndarray
    sem: np.ndarray
    n_seeds: int


def _block_sums(config: NqmConfig, seed_seq: np.random.SeedSequence, n: int,
                alphas: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed_seq)
    theta = np.full(n, float(config.theta0))
    T = config.total_steps
    s2 = np.empty(T)
    s4 = np.empty(T)
    for t in range(T):
        x = rng.standard_normal(n) * sigma
        theta = (1.0 - alphas[t]) * theta + alphas[t] * x
        sq = theta * theta
        s2[t] = np.sum(sq)
        s4[t] = np.dot(sq, sq)
    return s2, s4


def simulate(config: NqmConfig, n_seeds: int, base_seed: int = 0,
             grid: Optional[Sequence[float]] = None,
             block_size: int = DEFAULT_BLOCK,
             threads: int = 1) -> SimulatedCurve:
    """Monte-Carlo mean loss curve over ``n_seeds`` independent trajectories.

    Seeds are partitioned into fixed-size blocks, each driven by its own
    generator spawned from ``base_seed``; block partial sums are reduced in
    block order, so results are bit-identical for any thread count.
    ``grid`` selects output fractions (nearest step); default is every step.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    T = config.total_steps
    fracs = np.arange(1, T + 1) / T
    alphas = config.alpha_peak * np.asarray(eta_at(config.schedule, fracs))
    if np.any(alphas >= 1.0):
        raise ValueError("schedule produces smoothing alpha >= 1")
    sigma = math.sqrt(config.step_noise_var)

    counts = [block_size] * (n_seeds // block_size)
    if n_seeds % block_size:
        counts.append(n_seeds % block_size)
    seqs = np.random.SeedSequence(base_seed).spawn(len(counts))

    if threads > 1 and len(counts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda args: _block_sums(config, *args),
                [(sq, n, alphas, sigma) for sq, n in zip(seqs, counts)],
            ))
    else:
        parts = [_block_sums(config, sq, n, alphas, sigma)
                 for sq, n in zip(seqs, counts)]

    tot2 = np.zeros(T)
    tot4 = np.zeros(T)
    for s2, s4 in parts:  # fixed reduction order
        tot2 += s2
        tot4 += s4

    half_h = 0.5 * config.curvature
    mean_sq = tot2 / n_seeds
    mean_loss = half_h * mean_sq
    var_sq = np.maximum(tot4 / n_seeds - mean_sq**2, 0.0)
    sem = half_h * np.sqrt(var_sq / n_seeds)

    if grid is not None:
        g = np.asarray(list(grid), dtype=float)
        idx = np.clip(np.rint(g * T).astype(int), 1, T) - 1
        return SimulatedCurve(fracs[idx], mean_loss[idx], sem[idx], n_seeds)
    return SimulatedCurve(fracs, mean_loss, sem, n_seeds)


def expected_loss(config: NqmConfig, t_hat):
    """Closed-form expected loss under a constant schedule.

    ``h*sigma_x2/(4*tau) * (1 - exp(-2*t_hat/tau))`` (variance rising to a
    floor proportional to ``1/tau``) plus the decaying initialization bias
    ``h/2 * exp(-2*t_hat/tau) * theta0**2``. Scheduled runs have no closed
    form here; use :func:`simulate`.
    """
    if not config.schedule.is_constant:
        raise ValueError("closed form requires a constant schedule; use simulate()")
    t = np.asarray(t_hat, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("t_hat must be nonnegative")
    decay = np.exp(-2.0 * t / config.tau)
    h = config.curvature
    out = h * config.noise_var / (4.0 * config.tau) * (1.0 - decay) \
        + 0.5 * h * decay * config.theta0**2
    if np.ndim(t_hat) == 0:
        return float(out)
    return out


def normalized_expected_curve(config: NqmConfig, grid) -> np.ndarray:
    """Closed-form curve divided by its end-of-training value.

    For ``theta0 == 0`` this equals ``(1-exp(-2*t/tau)) / (1-exp(-2/tau))``:
    both the curvature and the noise scale cancel, so the normalized shape
    depends only on ``(tau, t_hat)``.
    """
    final = expected_loss(config, 1.0)
    if final <= 0.0:
        raise ValueError("end-of-training expected loss is zero; cannot normalize")
    return np.asarray(expected_loss(config, grid)) / final


def kappa(config: NqmConfig) -> float:
    """Bias-to-variance ratio ``2*tau*theta0**2 / sigma_x2`` governing early shape."""
    if config.noise_var <= 0.0:
        raise ValueError("kappa requires positive noise variance")
    return 2.0 * config.tau * config.theta0**2 / config.noise_var
