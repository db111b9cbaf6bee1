"""Peak-normalized learning-rate schedules over training fraction.

A schedule maps training fraction ``t_hat`` in [0, 1] to a multiplier of the
peak learning rate, so the peak value is exactly 1.0. All schedules share a
linear warmup from 0 to 1 over the first ``warmup_frac`` of training; after
warmup, ``constant`` stays at 1.0 and ``linear_decay`` descends linearly to
``decay_ratio`` (final/peak) at the end of training. ``decay_ratio=0`` is the
decay-to-zero schedule, ``0.1`` a 10x decay, ``1.0`` constant-after-warmup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("constant", "linear_decay")


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "linear_decay"
    warmup_frac: float = 0.1
    decay_ratio: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if not 0.0 <= self.decay_ratio <= 1.0:
            raise ValueError("decay_ratio must lie in [0, 1]")

    @property
    def is_constant(self) -> bool:
        """True when the multiplier is 1.0 everywhere (no warmup, no decay)."""
        return self.warmup_frac == 0.0 and (
            self.kind == "constant" or self.decay_ratio == 1.0
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "warmup_frac": self.warmup_frac,
            "decay_ratio": self.decay_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LrSchedule":
        return cls(
            kind=d.get("kind", "linear_decay"),
            warmup_frac=float(d.get("warmup_frac", 0.0)),
            decay_ratio=float(d.get("decay_ratio", 0.0)),
        )


def constant(warmup_frac: float = 0.0) -> LrSchedule:
    return LrSchedule(kind="constant", warmup_frac=warmup_frac, decay_ratio=1.0)


def decay_to_zero(warmup_frac: float = 0.1) -> LrSchedule:
    return LrSchedule(kind="linear_decay", warmup_frac=warmup_frac, decay_ratio=0.0)


def eta_at(schedule: LrSchedule, t_hat):
    """Evaluate the peak-normalized LR multiplier at one or more fractions.

    Piecewise linear, exact at the breakpoints: eta(warmup_frac) == 1.0 and
    eta(1.0) == decay_ratio for decaying schedules. Accepts scalars or arrays.
    """
    t = np.asarray(t_hat, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t_hat must lie in [0, 1]")
    w = schedule.warmup_frac
    if w > 0.0:
        ramp = t / w
    else:
        ramp = np.ones_like(t)
    if schedule.kind == "constant":
        post = np.ones_like(t)
    else:
        # linear from 1.0 at t=w down to decay_ratio at t=1; endpoints exact
        r = schedule.decay_ratio
        denom = 1.0 - w
        post = 1.0 + (r - 1.0) * (t - w) / denom
        post = np.where(t == 1.0, r, post)
    out = np.where(t < w, ramp, post)
    if np.isscalar(t_hat) or np.ndim(t_hat) == 0:
        return float(out)
    return out
