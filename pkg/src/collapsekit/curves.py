"""Loss-curve ingestion, validation, smoothing, and resampling.

Curves are immutable once constructed: every transformation returns a new
``LossCurve``. Log rows carry an optimizer step index and a loss value;
training fraction is derived from the run's total step count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CoverageError, IngestError
from .schedules import LrSchedule


@dataclass(frozen=True)
class LossSample:
    """One logged point: optimizer step, training loss (nats), optional token count."""

    step: int
    loss: float
    tokens_seen: Optional[int] = None

    def __post_init__(self):
        if self.step < 0:
            raise IngestError(f"step must be nonnegative, got {self.step}")
        if not math.isfinite(self.loss) or self.loss <= 0.0:
            raise IngestError(f"loss must be finite and positive, got {self.loss}")
        if self.tokens_seen is not None and self.tokens_seen < 0:
            raise IngestError("tokens_seen must be nonnegative")


@dataclass(frozen=True)
class LossCurve:
    """Ordered loss samples plus total-step accounting for one run.

    ``complete`` is true iff the last sample sits at ``total_steps``.
    ``restart_steps`` records steps where duplicate log rows were collapsed
    (job-restart boundaries); the last occurrence of a duplicated step wins.
    """

    run_id: str
    samples: tuple[LossSample, ...]
    total_steps: int
    restart_steps: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.samples:
            raise IngestError("curve has no samples")
        if self.total_steps <= 0:
            raise IngestError("total_steps must be positive")
        prev = -1
        for s in self.samples:
            if s.step <= prev:
                raise IngestError(f"steps must strictly increase ({s.step} after {prev})")
            prev = s.step
        if self.samples[-1].step > self.total_steps:
            raise IngestError(
                f"last step {self.samples[-1].step} exceeds total_steps {self.total_steps}"
            )

    @property
    def complete(self) -> bool:
        return self.samples[-1].step == self.total_steps

    def steps(self) -> np.ndarray:
        return np.array([s.step for s in self.samples], dtype=np.int64)

    def losses(self) -> np.ndarray:
        return np.array([s.loss for s in self.samples], dtype=float)

    def fractions(self) -> np.ndarray:
        return self.steps() / float(self.total_steps)

    def with_losses(self, losses: Sequence[float]) -> "LossCurve":
        if len(losses) != len(self.samples):
            raise ValueError("replacement losses must match sample count")
        new = tuple(
            LossSample(s.step, float(v), s.tokens_seen)
            for s, v in zip(self.samples, losses)
        )
        return replace(self, samples=new)

    def truncate(self, max_fraction: float) -> "LossCurve":
        """Keep samples with t_hat <= max_fraction (total_steps unchanged)."""
        keep = tuple(s for s in self.samples if s.step / self.total_steps <= max_fraction)
        if not keep:
            raise CoverageError(f"no samples at or below fraction {max_fraction}")
        restarts = tuple(r for r in self.restart_steps if r <= keep[-1].step)
        return replace(self, samples=keep, restart_steps=restarts)


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters a run was launched with; timescale quantities derive from these.

    ``eta`` is the peak base learning rate; ``lr_adjust`` is the width-transfer
    multiplier applied before any timescale computation (proxy width / target
    width, 1.0 when tuning at the target width). ``weight_decay`` serializes
    as the JSON key "lambda".
    """

    eta: float
    weight_decay: float
    batch_tokens: int
    dataset_tokens: int
    params: int
    schedule: LrSchedule = field(default_factory=LrSchedule)
    lr_adjust: float = 1.0
    run_id: str = ""
    allow_ragged_final_step: bool = False

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        if self.lr_adjust <= 0.0:
            raise ValueError("lr_adjust must be positive")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        for name in ("batch_tokens", "dataset_tokens", "params"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dataset_tokens % self.batch_tokens != 0 and not self.allow_ragged_final_step:
            raise ValueError(
                "dataset_tokens is not a multiple of batch_tokens; "
                "pass allow_ragged_final_step=True to round down"
            )

    @property
    def total_steps(self) -> int:
        return self.dataset_tokens // self.batch_tokens

    @property
    def tokens_per_param(self) -> float:
        return self.dataset_tokens / self.params

    @property
    def adjusted_eta(self) -> float:
        return self.eta * self.lr_adjust

    def to_dict(self) -> dict:
        d = {
            "eta": self.eta,
            "lr_adjust": self.lr_adjust,
            "lambda": self.weight_decay,
            "batch_tokens": self.batch_tokens,
            "dataset_tokens": self.dataset_tokens,
            "params": self.params,
            "schedule": self.schedule.to_dict(),
        }
        if self.run_id:
            d["run_id"] = self.run_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            eta=float(d["eta"]),
            lr_adjust=float(d.get("lr_adjust", 1.0)),
            weight_decay=float(d["lambda"]),
            batch_tokens=int(d["batch_tokens"]),
            dataset_tokens=int(d["dataset_tokens"]),
            params=int(d["params"]),
            schedule=LrSchedule.from_dict(d.get("schedule", {})),
            run_id=str(d.get("run_id", "")),
            allow_ragged_final_step=bool(d.get("allow_ragged_final_step", False)),
        )


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return RunConfig.from_dict(json.load(f))


def save_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# Ingestion / export
# ---------------------------------------------------------------------------

FORMATS = ("jsonl", "csv")


def _rows_from_jsonl(text: str):
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise IngestError(f"malformed JSON ({e.msg})", row=i) from e
        if "step" not in obj or "loss" not in obj:
            raise IngestError("missing 'step' or 'loss' field", row=i)
        yield i, obj["step"], obj["loss"], obj.get("tokens")


def _rows_from_csv(text: str):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input") from None
    header = [h.strip() for h in header]
    if header[:2] != ["step", "loss"]:
        raise IngestError(f"expected header 'step,loss[,tokens]', got {header}")
    has_tokens = len(header) > 2 and header[2] == "tokens"
    for i, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) < 2:
            raise IngestError("fewer than 2 columns", row=i)
        tokens = row[2] if has_tokens and len(row) > 2 and row[2] != "" else None
        yield i, row[0], row[1], tokens


def ingest(path, format: str, total_steps: Optional[int] = None,
           run_id: Optional[str] = None) -> LossCurve:
    """Parse a loss log into a validated curve.

    Duplicate step indices (restart artifacts) are collapsed to the last
    occurrence and recorded in ``restart_steps``. Rows with non-finite or
    nonpositive loss are rejected with their row index. ``total_steps`` must
    be supplied here or derivable from the run's config by the caller.
    """
    if format not in FORMATS:
        raise IngestError(f"unknown format {format!r}")
    if total_steps is None:
        raise IngestError("total_steps is required (pass it or derive from the run config)")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    rows = _rows_from_jsonl(text) if format == "jsonl" else _rows_from_csv(text)

    by_step: dict[int, LossSample] = {}
    order: list[int] = []
    restarts: list[int] = []
    last_step = None
    for i, step_raw, loss_raw, tokens_raw in rows:
        try:
            step = int(step_raw)
            loss = float(loss_raw)
            tokens = int(tokens_raw) if tokens_raw is not None else None
        except (TypeError, ValueError) as e:
            raise IngestError(f"malformed row: {e}", row=i) from e
        if not math.isfinite(loss) or loss <= 0.0:
            raise IngestError(f"non-finite or nonpositive loss {loss}", row=i)
        try:
            sample = LossSample(step, loss, tokens)
        except IngestError as e:
            raise IngestError(str(e), row=i) from e
        if step in by_step:
            # restart boundary: rewind-and-overwrite, keep the newest row
            if step not in restarts:
                restarts.append(step)
            # drop any later steps logged before the rewind
            order = [s for s in order if s <= step]
            by_step = {s: by_step[s] for s in order}
            by_step[step] = sample
            last_step = step
            continue
        if last_step is not None and step < last_step:
            raise IngestError(f"non-monotone steps ({step} after {last_step})", row=i)
        by_step[step] = sample
        order.append(step)
        last_step = step
    if not order:
        raise IngestError("empty input")
    name = run_id if run_id is not None else str(path)
    return LossCurve(
        run_id=name,
        samples=tuple(by_step[s] for s in order),
        total_steps=total_steps,
        restart_steps=tuple(sorted(restarts)),
    )


def _fmt(x: float) -> str:
    return format(x, ".17g")


def export(curve: LossCurve, path, format: str) -> None:
    """Write a curve back out; float values round-trip exactly through ingest."""
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    with open(path, "w", encoding="utf-8") as f:
        if format == "jsonl":
            for s in curve.samples:
                obj = {"step": s.step, "loss": float(_fmt(s.loss))}
                if s.tokens_seen is not None:
                    obj["tokens"] = s.tokens_seen
                f.write(json.dumps(obj) + "\n")
        else:
            has_tokens = any(s.tokens_seen is not None for s in curve.samples)
            f.write("step,loss,tokens\n" if has_tokens else "step,loss\n")
            for s in curve.samples:
                row = f"{s.step},{_fmt(s.loss)}"
                if has_tokens:
                    row += f",{s.tokens_seen if s.tokens_seen is not None else ''}"
                f.write(row + "\n")


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


def smooth(curve: LossCurve, window_steps: int) -> LossCurve:
    """Trailing (causal) moving average over the last ``window_steps`` samples.

    A monitor must not look ahead, so the window is one-sided; it shortens at
    the start of the curve. The step axis and sample count are unchanged, and
    window 1 is the identity.
    """
    if window_steps < 1:
        raise ValueError("window_steps must be >= 1")
    if window_steps == 1:
        return curve
    x = curve.losses()
    cs = np.concatenate([[0.0], np.cumsum(x)])
    n = len(x)
    idx = np.arange(n)
    lo = np.maximum(0, idx - window_steps + 1)
    out = (cs[idx + 1] - cs[lo]) / (idx + 1 - lo)
    return curve.with_losses(out)


def smoothing_window_from_tokens(config: RunConfig, window_tokens: int) -> int:
    """Convert a token-denominated smoothing window to a step count (>= 1)."""
    if window_tokens <= 0:
        raise ValueError("window_tokens must be positive")
    return max(1, round(window_tokens / config.batch_tokens))


def training_fraction(curve: LossCurve) -> list[tuple[float, float]]:
    """Pairs of (t_hat, loss) with t_hat = step / total_steps, order preserved."""
    T = float(curve.total_steps)
    return [(s.step / T, s.loss) for s in curve.samples]


def resample(curve: LossCurve, grid: Iterable[float]) -> np.ndarray:
    """Linearly interpolate losses onto a t_hat grid within the curve's coverage.

    Exact (bitwise) at sample abscissae. Grid points outside the covered
    range raise ``CoverageError`` rather than extrapolating.
    """
    g = np.asarray(list(grid), dtype=float)
    t = curve.fractions()
    if g.size and (g.min() < t[0] - 1e-15 or g.max() > t[-1] + 1e-15):
        raise CoverageError(
            f"grid range [{g.min()}, {g.max()}] outside covered [{t[0]}, {t[-1]}]"
        )
    return np.interp(g, t, curve.losses())
