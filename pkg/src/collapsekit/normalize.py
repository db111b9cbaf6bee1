"""Mapping loss curves into collapse coordinates and comparing them.

A normalized curve is ``ell = (L - offset) / (L_T - offset)`` over training
fraction. Dividing by the final training loss (offset 0) is the default; the
normalizer can instead be fit by aligning a partial run against a reference
over an early window, or taken from a scaling-law estimate when the run is
incomplete.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._align import fit_normalizer
from .curves import LossCurve, smooth
from .errors import CoverageError
from .scaling import ChinchillaFit

METHODS = ("final_loss", "early_align", "power_law_estimate")

DEFAULT_ALIGN_WINDOW = (0.25, 0.50)


@dataclass(frozen=True)
class NormalizedCurve:
    points: tuple[tuple[float, float], ...]
    normalizer: float
    method: str
    offset: float = 0.0
    run_id: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.points:
            raise ValueError("normalized curve has no points")
        if self.offset < 0.0 or self.offset >= self.normalizer:
            raise ValueError("offset must satisfy 0 <= offset < normalizer")

    def t_hat(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    def ell(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def coverage(self) -> tuple[float, float]:
        return self.points[0][0], self.points[-1][0]

    def values_at(self, grid) -> np.ndarray:
        """Linear interpolation on the curve; errors outside coverage."""
        g = np.asarray(grid, dtype=float)
        lo, hi = self.coverage
        if g.size and (g.min() < lo - 1e-12 or g.max() > hi + 1e-12):
            raise CoverageError(
                f"grid [{g.min()}, {g.max()}] outside normalized coverage [{lo}, {hi}]"
            )
        return np.interp(g, self.t_hat(), self.ell())


@dataclass(frozen=True)
class Alert:
    onset: float
    peak_residual: float


@dataclass(frozen=True)
class ResidualReport:
    """Pointwise deviation of one normalized curve from another.

    ``points`` holds signed differences on the evaluation grid,
    ``rolling_mae`` the trailing mean absolute residual, ``alerts`` the
    threshold violations (onset strictly increasing), and ``annotations``
    run events such as restart boundaries.
    """

    points: tuple[tuple[float, float], ...]
    rolling_mae: tuple[tuple[float, float], ...]
    alerts: tuple[Alert, ...] = ()
    annotations: tuple[tuple[float, str], ...] = ()

    def __post_init__(self):
        onsets = [a.onset for a in self.alerts]
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("alert onsets must strictly increase")

    def max_abs(self) -> float:
        if not self.points:
            return 0.0
        return float(max(abs(v) for _, v in self.points))

    def max_rolling_mae(self) -> float:
        if not self.rolling_mae:
            return 0.0
        return float(max(v for _, v in self.rolling_mae))


def _normalized(curve: LossCurve, normalizer: float, method: str,
                offset: float) -> NormalizedCurve:
    if normalizer <= offset:
        raise ValueError("normalizer must exceed offset")
    t = curve.fractions()
    ell = (curve.losses() - offset) / (normalizer - offset)
    return NormalizedCurve(
        points=tuple(zip(t.tolist(), ell.tolist())),
        normalizer=float(normalizer),
        method=method,
        offset=float(offset),
        run_id=curve.run_id,
    )


def normalize_final(curve: LossCurve, smooth_window: int = 1,
                    offset: float = 0.0) -> NormalizedCurve:
    """Divide by the final (smoothed) training loss; requires a complete run."""
    if not curve.complete:
        raise CoverageError("normalize_final requires a complete curve")
    sm = smooth(curve, smooth_window)
    final = sm.samples[-1].loss
    if final <= 0.0:
        raise ValueError("final smoothed loss must be positive")
    return _normalized(sm, final, "final_loss", offset)


def normalize_early_align(partial: LossCurve, reference: NormalizedCurve,
                          window: tuple[float, float] = DEFAULT_ALIGN_WINDOW,
                          smooth_window: int = 1) -> NormalizedCurve:
    """Fit the normalizer so the partial run matches a reference over a window.

    The mean absolute difference between ``partial / L_T`` and the reference
    is minimized over the partial's own sample fractions inside the window
    (the reference is interpolated there), by golden-section search on the
    convex reparameterization. Deterministic given inputs.
    """
    lo, hi = window
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("window must satisfy 0 <= lo < hi <= 1")
    sm = smooth(partial, smooth_window)
    t = sm.fractions()
    if t[0] > lo + 1e-12 or t[-1] < hi - 1e-12:
        raise CoverageError(
            f"partial covers [{t[0]:.4g}, {t[-1]:.4g}], not the alignment "
            f"window [{lo}, {hi}]"
        )
    rlo, rhi = reference.coverage
    if rlo > lo + 1e-12 or rhi < hi - 1e-12:
        raise CoverageError("reference does not cover the alignment window")
    mask = (t >= lo) & (t <= hi)
    obs = sm.losses()[mask]
    ref_vals = reference.values_at(t[mask])
    min_loss = float(sm.losses().min())
    normalizer = fit_normalizer(obs, ref_vals, 0.5 * min_loss, 1.0 * min_loss,
                                adaptive=True)
    return _normalized(sm, normalizer, "early_align", 0.0)


def normalize_estimate(curve: LossCurve, fit: ChinchillaFit, params: float,
                       tokens: float, smooth_window: int = 1) -> NormalizedCurve:
    """Normalize by a scaling-law estimate of the final loss at (N, D)."""
    normalizer = fit.evaluate(params, tokens)
    if normalizer <= 0.0:
        raise ValueError(f"estimated final loss {normalizer} is not positive")
    sm = smooth(curve, smooth_window)
    return _normalized(sm, normalizer, "power_law_estimate", 0.0)


def shared_grid(a: NormalizedCurve, b: NormalizedCurve,
                n_points: int = 512) -> np.ndarray:
    """Uniform t_hat grid over the intersection of two curves' coverage."""
    lo = max(a.coverage[0], b.coverage[0])
    hi = min(a.coverage[1], b.coverage[1])
    if not lo < hi:
        raise CoverageError("curves have no overlapping coverage")
    return np.linspace(lo, hi, n_points)


def rolling_mean_abs(grid: np.ndarray, values: np.ndarray,
                     window: float) -> np.ndarray:
    """Trailing mean of |values| over a t_hat window at each grid point."""
    out = np.empty_like(values)
    absv = np.abs(values)
    start = np.searchsorted(grid, grid - window, side="left")
    cs = np.concatenate([[0.0], np.cumsum(absv)])
    idx = np.arange(len(grid))
    out = (cs[idx + 1] - cs[start]) / (idx + 1 - start)
    return out


def residuals(a: NormalizedCurve, b: NormalizedCurve,
              grid: Optional[Sequence[float]] = None,
              n_points: int = 512,
              rolling_window: float = 0.02) -> ResidualReport:
    """Signed pointwise difference ``ell_a - ell_b`` plus a rolling summary.

    Defaults to 512 uniform points over the curves' shared coverage. Raises
    ``CoverageError`` when an explicit grid leaves either curve's coverage.
    """
    g = np.asarray(list(grid), dtype=float) if grid is not None \
        else shared_grid(a, b, n_points)
    diff = a.values_at(g) - b.values_at(g)
    roll = rolling_mean_abs(g, diff, rolling_window)
    return ResidualReport(
        points=tuple(zip(g.tolist(), diff.tolist())),
        rolling_mae=tuple(zip(g.tolist(), roll.tolist())),
    )
