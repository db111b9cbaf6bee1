"""Ranking in-progress hyperparameter sweeps by extrapolated final loss.

A partial run is aligned against the parametric curve prediction for its
(tau, tpp, schedule); the divisor that best aligns them is the inferred
final loss, and sweeps are ranked by it. Strategies compared: pick at
random, pick the lowest smoothed loss at the stop point, or pick the lowest
inferred final loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._align import fit_normalizer
from .curves import LossCurve, smooth
from .errors import CoverageError
from .predictor import CurveMeta, PredictorParams, predict

STRATEGIES = ("random", "current_best", "predicted_best")

ALIGN_LO = 0.2          # fractions below this are warmup-noisy; never aligned on
MIN_STOP_FRACTION = 0.25  # below this the alignment window is too thin


@dataclass(frozen=True)
class SweepEntry:
    run_id: str
    partial: LossCurve
    meta: CurveMeta
    true_final: Optional[float] = None

    def __post_init__(self):
        if self.true_final is not None and self.true_final <= 0.0:
            raise ValueError("true_final must be positive")

    @property
    def stop_fraction(self) -> float:
        return self.partial.samples[-1].step / self.partial.total_steps


@dataclass(frozen=True)
class StopDecision:
    chosen_run_id: str
    strategy: str
    predicted_finals: dict[str, float]

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")


def infer_final_loss(entry: SweepEntry, params: PredictorParams,
                     min_stop: float = MIN_STOP_FRACTION,
                     smooth_window: int = 1) -> float:
    """Final loss inferred by aligning the partial run to its prediction.

    Minimizes the mean absolute difference between ``partial / L_T`` and the
    predicted normalized curve over the partial's sample fractions in
    ``[0.2, stop]``; golden-section search over the normalizer, bracket
    ``[0.25, 4] x min(partial loss)`` extended adaptively.
    """
    stop = entry.stop_fraction
    if stop < min_stop - 1e-12:
        raise CoverageError(
            f"stop fraction {stop:.3g} below minimum {min_stop}: "
            "alignment window too thin"
        )
    sm = smooth(entry.partial, smooth_window)
    t = sm.fractions()
    if t[0] > ALIGN_LO + 1e-12:
        raise CoverageError(f"partial must cover t_hat down to {ALIGN_LO}")
    mask = (t >= ALIGN_LO) & (t <= stop + 1e-12)
    obs = sm.losses()[mask]
    target = predict(params, entry.meta, t[mask])
    min_loss = float(sm.losses().min())
    return fit_normalizer(obs, target, 0.25 * min_loss, 4.0 * min_loss,
                          adaptive=True)


def _check_common_stop(sweep: Sequence[SweepEntry], tol: float = 0.01) -> float:
    stops = [e.stop_fraction for e in sweep]
    if max(stops) - min(stops) > tol:
        raise ValueError(f"entries stop at inconsistent fractions {stops}")
    return min(stops)


def decide(sweep: Sequence[SweepEntry], strategy: str,
           params: Optional[PredictorParams] = None,
           rng_seed: int = 0,
           smooth_window: int = 1,
           min_stop: float = MIN_STOP_FRACTION) -> StopDecision:
    """Choose the best-looking run at the sweep's common stop fraction.

    ``predicted_best`` falls back to ``current_best`` (the smoothed loss at
    the stop point) when the sweep stopped too early to align.
    """
    if not sweep:
        raise ValueError("empty sweep")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    stop = _check_common_stop(sweep)

    if strategy == "random":
        rng = np.random.default_rng(rng_seed)
        chosen = sweep[int(rng.integers(len(sweep)))]
        return StopDecision(chosen.run_id, strategy, {})

    if strategy == "predicted_best" and stop >= MIN_STOP_FRACTION - 1e-12:
        if params is None:
            raise ValueError("predicted_best requires predictor parameters")
        finals = {e.run_id: infer_final_loss(e, params, min_stop=min_stop,
                                             smooth_window=smooth_window)
                  for e in sweep}
        chosen = min(finals, key=lambda rid: (finals[rid], rid))
        return StopDecision(chosen, strategy, finals)

    # current_best, or predicted_best stopped before the window opens
    if strategy == "predicted_best":
        warnings.warn(
            f"stop fraction {stop:.3g} < {MIN_STOP_FRACTION}: "
            "falling back to current_best", stacklevel=2)
    at_stop = {}
    for e in sweep:
        sm = smooth(e.partial, smooth_window)
        at_stop[e.run_id] = sm.samples[-1].loss
    chosen = min(at_stop, key=lambda rid: (at_stop[rid], rid))
    return StopDecision(chosen, strategy, {})


def evaluate_strategy(sweep: Sequence[SweepEntry], strategy: str,
                      stop_fractions: Sequence[float],
                      params: Optional[PredictorParams] = None,
                      n_seeds: int = 100,
                      smooth_window: int = 1) -> list[tuple[float, float]]:
    """Gap between the chosen run's true final loss and the sweep's best.

    Entries must carry complete curves and ``true_final`` values; each stop
    fraction evaluates the decision on curves truncated there. The random
    strategy reports the mean gap over ``n_seeds`` draws.
    """
    if not sweep:
        raise ValueError("empty sweep")
    for e in sweep:
        if e.true_final is None:
            raise ValueError(f"entry {e.run_id} is missing true_final")
    finals = {e.run_id: e.true_final for e in sweep}
    best = min(finals.values())
    out = []
    for stop in stop_fractions:
        truncated = [
            SweepEntry(e.run_id, e.partial.truncate(stop), e.meta, e.true_final)
            for e in sweep
        ]
        if strategy == "random":
            gaps = []
            for s in range(n_seeds):
                d = decide(truncated, "random", rng_seed=s)
                gaps.append(finals[d.chosen_run_id] - best)
            gap = float(np.mean(gaps))
        else:
            d = decide(truncated, strategy, params=params,
                       smooth_window=smooth_window)
            gap = finals[d.chosen_run_id] - best
        out.append((float(stop), float(gap)))
    return out


def expected_random_gap(sweep: Sequence[SweepEntry]) -> float:
    """Exact expectation of the random strategy's gap (uniform choice)."""
    finals = [e.true_final for e in sweep]
    if any(f is None for f in finals):
        raise ValueError("all entries need true_final")
    best = min(finals)
    return float(np.mean([f - best for f in finals]))
