"""Online collapse-residual monitoring of a training log against a reference.

Each poll re-derives the full report from the rows seen so far, so the
stream of reports is a pure function of the log bytes and the policy, and
replaying a log offline produces exactly the final live report. The
normalizer comes from early alignment over a fixed window with trailing
smoothing, so once that window is covered its value never changes; the
``realign_every`` cadence exists for operators who restart the watcher and
is idempotent on an append-only log.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .curves import LossCurve, RunConfig, ingest
from .errors import CoverageError
from .normalize import (
    Alert,
    DEFAULT_ALIGN_WINDOW,
    NormalizedCurve,
    ResidualReport,
    normalize_early_align,
    rolling_mean_abs,
)


@dataclass(frozen=True)
class MonitorPolicy:
    """Alerting thresholds for the residual stream.

    ``threshold`` is the rolling-MAE level (in normalized-loss units) above
    which an alert fires; ``window_t_hat`` the trailing window width;
    ``min_t_hat`` suppresses alerts while the normalizer is still young;
    ``realign_every`` is the step cadence for refreshing the normalizer.
    """

    threshold: float = 0.01
    window_t_hat: float = 0.02
    min_t_hat: float = 0.5
    realign_every: int = 500
    align_window: tuple[float, float] = DEFAULT_ALIGN_WINDOW
    n_grid: int = 512

    def __post_init__(self):
        if self.threshold <= 0.0:
            raise ValueError("threshold must be positive")
        if not 0.0 < self.window_t_hat <= 0.5:
            raise ValueError("window_t_hat must lie in (0, 0.5]")
        if self.min_t_hat < self.align_window[1]:
            raise ValueError("min_t_hat must not precede the alignment window end")
        if self.realign_every < 1:
            raise ValueError("realign_every must be >= 1")


def _alerts_from_rolling(grid: np.ndarray, resid: np.ndarray,
                         rolling: np.ndarray, policy: MonitorPolicy) -> tuple[Alert, ...]:
    violating = (rolling > policy.threshold) & (grid >= policy.min_t_hat)
    if not np.any(violating):
        return ()
    alerts = []
    idx = np.flatnonzero(violating)
    group_start = idx[0]
    prev = idx[0]
    groups = []
    for i in idx[1:]:
        if i == prev + 1:
            prev = i
            continue
        groups.append((group_start, prev))
        group_start = i
        prev = i
    groups.append((group_start, prev))
    for s, e in groups:
        # onset: first grid point inside the violating trailing window
        t_violation = grid[s]
        onset_idx = int(np.searchsorted(grid, t_violation - policy.window_t_hat,
                                        side="left"))
        onset = max(float(grid[onset_idx]), policy.min_t_hat)
        peak = float(np.max(np.abs(resid[s:e + 1])))
        alerts.append(Alert(onset=onset, peak_residual=peak))
    return tuple(alerts)


def _build_report(curve: LossCurve, reference: NormalizedCurve,
                  policy: MonitorPolicy, smooth_window: int) -> ResidualReport:
    annotations = tuple(
        (s / curve.total_steps, "restart")
        for s in curve.restart_steps
    )
    align_lo, align_hi = policy.align_window
    covered = curve.fractions()[-1]
    if covered < align_hi - 1e-12:
        note = "alignment window not covered"
        if curve.complete:
            note += " by end of run"
        return ResidualReport(points=(), rolling_mae=(), alerts=(),
                              annotations=annotations + ((covered, note),))
    normalized = normalize_early_align(curve, reference,
                                       window=policy.align_window,
                                       smooth_window=smooth_window)
    ref_lo, ref_hi = reference.coverage
    grid = np.linspace(ref_lo, min(ref_hi, 1.0), policy.n_grid)
    lo, hi = normalized.coverage
    live = grid[(grid >= lo) & (grid <= hi)]
    resid = normalized.values_at(live) - reference.values_at(live)
    rolling = rolling_mean_abs(live, resid, policy.window_t_hat)
    alerts = _alerts_from_rolling(live, resid, rolling, policy)
    return ResidualReport(
        points=tuple(zip(live.tolist(), resid.tolist())),
        rolling_mae=tuple(zip(live.tolist(), rolling.tolist())),
        alerts=alerts,
        annotations=annotations,
    )


def compare_offline(curve: LossCurve, reference: NormalizedCurve,
                    config: Optional[RunConfig], policy: MonitorPolicy,
                    smooth_window: int = 100) -> ResidualReport:
    """Batch residual report for a fully available log."""
    if config is not None and config.total_steps != curve.total_steps:
        raise ValueError(
            f"curve total_steps {curve.total_steps} disagrees with config "
            f"{config.total_steps}"
        )
    if reference.coverage[1] < policy.align_window[1] - 1e-12:
        raise CoverageError("reference does not reach the alignment window")
    return _build_report(curve, reference, policy, smooth_window)


def watch(log_path, reference: NormalizedCurve, config: RunConfig,
          policy: MonitorPolicy, format: str = "jsonl",
          smooth_window: int = 100, poll_interval_s: float = 0.5,
          max_polls: Optional[int] = None) -> Iterator[ResidualReport]:
    """Tail an append-only log, yielding a fresh report when it grows.

    Each report is recomputed from all rows seen so far, so the final yield
    equals :func:`compare_offline` on the same bytes. Terminates when the
    run completes or ``max_polls`` is exhausted; a vanished log raises.
    """
    last_size = -1
    polls = 0
    while True:
        if not os.path.exists(log_path):
            raise FileNotFoundError(f"log disappeared: {log_path}")
        size = os.path.getsize(log_path)
        if size != last_size:
            last_size = size
            curve = ingest(log_path, format, total_steps=config.total_steps)
            report = compare_offline(curve, reference, config, policy,
                                     smooth_window=smooth_window)
            yield report
            if curve.complete:
                return
        polls += 1
        if max_polls is not None and polls >= max_polls:
            return
        time.sleep(poll_interval_s)
