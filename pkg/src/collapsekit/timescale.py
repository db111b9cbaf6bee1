"""AdamW timescale quantities and hyperparameter transfer rules.

AdamW parameters form an exponential moving average of weight updates with
smoothing ``alpha = eta * weight_decay`` per step. Normalizing the averaging
length ``1/alpha`` by the total step count gives the run-level timescale

    tau = 1 / (eta * lambda * T) = B / (eta * lambda * D),

computed from the peak *adjusted* learning rate (base LR times the width
multiplier). ``weight_decay == 0`` yields an infinite timescale (plain Adam
behaves like the zero-decay limit), reported as ``math.inf`` rather than an
error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .curves import RunConfig
from .schedules import LrSchedule, eta_at


@dataclass(frozen=True)
class TimescaleSummary:
    tau: float
    alpha: float
    tpp: float
    total_steps: int


def tau(config: RunConfig) -> TimescaleSummary:
    """Run-level timescale from the peak adjusted LR and weight decay."""
    eta_adj = config.adjusted_eta
    if eta_adj <= 0.0:
        raise ValueError("adjusted learning rate must be positive")
    alpha = eta_adj * config.weight_decay
    T = config.total_steps
    value = math.inf if alpha == 0.0 else 1.0 / (alpha * T)
    return TimescaleSummary(
        tau=value, alpha=alpha, tpp=config.tokens_per_param, total_steps=T
    )


def instantaneous_tau(config: RunConfig, t_hat: float) -> float:
    """Timescale at a point of training: 1 / (eta(t_hat) * eta_peak_adj * lambda * T).

    Under decaying schedules the smoothing shrinks over training, so the
    instantaneous timescale grows; it diverges at the end of a decay-to-zero
    run. Returns ``math.inf`` where the schedule multiplier (or weight decay)
    is zero.
    """
    if not 0.0 < t_hat <= 1.0:
        raise ValueError("t_hat must lie in (0, 1]")
    mult = eta_at(config.schedule, t_hat)
    base = tau(config)
    if mult == 0.0 or math.isinf(base.tau):
        return math.inf
    return base.tau / mult


def optimal_tau_for_tpp(tpp: float, ref_tau: float, ref_tpp: float,
                        exponent: float) -> float:
    """Transfer a tuned timescale across tokens-per-parameter by power law.

    The exponent is a fitted quantity supplied by the caller; anchoring at
    (ref_tpp, ref_tau) gives ``ref_tau * (tpp / ref_tpp) ** exponent``.
    """
    if tpp <= 0 or ref_tau <= 0 or ref_tpp <= 0:
        raise ValueError("tpp, ref_tau and ref_tpp must be positive")
    return ref_tau * (tpp / ref_tpp) ** exponent


def optimal_batch_for_data(dataset_tokens: float, ref_batch: float,
                           ref_dataset_tokens: float) -> float:
    """Square-root batch-size transfer: B_opt scales as D**0.5."""
    if dataset_tokens <= 0 or ref_batch <= 0 or ref_dataset_tokens <= 0:
        raise ValueError("inputs must be positive")
    return ref_batch * (dataset_tokens / ref_dataset_tokens) ** 0.5


__all__ = [
    "TimescaleSummary",
    "tau",
    "instantaneous_tau",
    "optimal_tau_for_tpp",
    "optimal_batch_for_data",
    "LrSchedule",
    "eta_at",
]
