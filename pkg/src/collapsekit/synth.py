"""Synthetic runs with known ground truth for tests and calibration.

Every generator is deterministic in a single 64-bit seed (child streams are
spawned per run, so adding runs never perturbs earlier ones) and returns the
exact quantities its outputs were built from: true final losses, generating
parameters, fault onsets. Noise can be disabled, additive on the normalized
shape, or multiplicative on the raw loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nqm
from .curves import LossCurve, LossSample, RunConfig, save_config
from .predictor import CurveMeta, PredictorParams, predict
from .scaling import ChinchillaFit
from .schedules import LrSchedule

KINDS = ("predictor_curve", "nqm_run", "chinchilla_points", "crossing_sweep",
         "fault_ramp")

NOISE_KINDS = ("none", "additive_gaussian", "multiplicative")

DEFAULT_PARAMS = PredictorParams(b_const=0.8, b_exp=-0.6, q_const=2.0,
                                 q_exp=-0.25)


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    params: dict = field(default_factory=dict)
    noise_kind: str = "none"
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synth kind {self.kind!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        noise = d.get("noise", {})
        return cls(
            kind=d["kind"],
            params=dict(d.get("params", {})),
            noise_kind=noise.get("kind", "none"),
            noise_sigma=float(noise.get("sigma", 0.0)),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class GeneratedRun:
    curve: LossCurve
    config: Optional[RunConfig]
    meta: Optional[CurveMeta]
    truth: dict


@dataclass(frozen=True)
class SynthOutput:
    runs: tuple[GeneratedRun, ...]
    truth: dict
    points: Optional[tuple[tuple[float, float, float], ...]] = None


def config_for(tau: float, tpp: float, schedule: LrSchedule, total_steps: int,
               run_id: str = "", eta: float = 0.01,
               batch_tokens: int = 1 << 20) -> RunConfig:
    """A run configuration realizing the requested timescale and TPP.

    Batch and dataset sizes are integral; the parameter count is rounded, so
    the config's tokens-per-parameter may differ from ``tpp`` in the last
    ulp-scale digits. Tests needing exact values should pass meta directly.
    """
    dataset = total_steps * batch_tokens
    params_n = max(1, round(dataset / tpp))
    weight_decay = 1.0 / (eta * tau * total_steps)
    return RunConfig(
        eta=eta, weight_decay=weight_decay, batch_tokens=batch_tokens,
        dataset_tokens=dataset, params=params_n, schedule=schedule,
        run_id=run_id,
    )


def _apply_noise(shape_vals: np.ndarray, spec: SynthSpec,
                 rng: np.random.Generator) -> np.ndarray:
    if spec.noise_kind == "none" or spec.noise_sigma == 0.0:
        return shape_vals
    draw = rng.normal(0.0, spec.noise_sigma, shape_vals.shape)
    if spec.noise_kind == "additive_gaussian":
        return shape_vals + draw
    return shape_vals * (1.0 + draw)


def _curve_from_values(run_id: str, values: np.ndarray, total_steps: int,
                       log_every: int = 1) -> LossCurve:
    steps = np.arange(1, total_steps + 1)[::log_every]
    if steps[-1] != total_steps:
        steps = np.append(steps, total_steps)
    samples = tuple(LossSample(int(s), float(values[s - 1])) for s in steps)
    return LossCurve(run_id=run_id, samples=samples, total_steps=total_steps)


def _predictor_params(p: dict) -> PredictorParams:
    if "predictor" in p:
        return PredictorParams.from_dict(p["predictor"])
    return DEFAULT_PARAMS


def _gen_predictor_curve(spec: SynthSpec, rng: np.random.Generator,
                         p: Optional[dict] = None) -> GeneratedRun:
    p = dict(spec.params if p is None else p)
    run_id = p.get("run_id", "synth")
    final_loss = float(p.get("final_loss", 2.3))
    tau = float(p.get("tau", 0.3))
    tpp = float(p.get("tpp", 80.0))
    total_steps = int(p.get("total_steps", 1000))
    schedule = LrSchedule.from_dict(p.get("schedule", {"kind": "linear_decay",
                                                       "warmup_frac": 0.1,
                                                       "decay_ratio": 0.0}))
    params = _predictor_params(p)
    meta = CurveMeta(tau=tau, tpp=tpp, schedule=schedule)
    fracs = np.arange(1, total_steps + 1) / total_steps
    shape = predict(params, meta, fracs)
    shape = _apply_noise(shape, spec, rng)
    raw = final_loss * shape
    if np.any(raw <= 0.0):
        raise ValueError("noise pushed a loss nonpositive; reduce sigma")
    curve = _curve_from_values(run_id, raw, total_steps,
                               int(p.get("log_every", 1)))
    config = config_for(tau, tpp, schedule, total_steps, run_id=run_id)
    truth = {
        "kind": "predictor_curve", "run_id": run_id, "final_loss": final_loss,
        "tau": tau, "tpp": tpp, "b": params.b_of(tau), "q": params.q_of(tpp),
        "predictor": params.to_dict(), "schedule": schedule.to_dict(),
        "total_steps": total_steps,
    }
    return GeneratedRun(curve, config, meta, truth)


def _gen_fault_ramp(spec: SynthSpec, rng: np.random.Generator) -> GeneratedRun:
    p = dict(spec.params)
    onset = float(p.get("onset", 0.6))
    magnitude = float(p.get("magnitude", 0.05))
    ramp_width = float(p.get("ramp_width", 0.1))
    base = _gen_predictor_curve(spec, rng, p)
    curve = base.curve
    fracs = curve.fractions()
    ramp = magnitude * np.clip((fracs - onset) / ramp_width, 0.0, 1.0)
    raw = curve.losses() + base.truth["final_loss"] * ramp
    curve = curve.with_losses(raw)
    truth = dict(base.truth)
    truth.update({"kind": "fault_ramp", "onset": onset, "magnitude": magnitude,
                  "ramp_width": ramp_width})
    return GeneratedRun(curve, base.config, base.meta, truth)


def _gen_nqm_run(spec: SynthSpec, rng: np.random.Generator) -> GeneratedRun:
    p = dict(spec.params)
    run_id = p.get("run_id", "nqm")
    cfg = nqm.NqmConfig(
        curvature=float(p.get("curvature", 1.0)),
        noise_var=float(p.get("noise_var", 1.0)),
        theta0=float(p.get("theta0", 0.0)),
        tau=float(p.get("tau", 0.5)),
        total_steps=int(p.get("total_steps", 1000)),
        schedule=LrSchedule.from_dict(p.get("schedule", {"kind": "constant",
                                                         "warmup_frac": 0.0,
                                                         "decay_ratio": 1.0})),
    )
    n_seeds = int(p.get("n_seeds", 10_000))
    sim = nqm.simulate(cfg, n_seeds, base_seed=spec.seed)
    curve = _curve_from_values(run_id, sim.mean_loss, cfg.total_steps,
                               int(p.get("log_every", 1)))
    truth = {
        "kind": "nqm_run", "run_id": run_id, "tau": cfg.tau,
        "curvature": cfg.curvature, "noise_var": cfg.noise_var,
        "theta0": cfg.theta0, "n_seeds": n_seeds, "base_seed": spec.seed,
        "total_steps": cfg.total_steps,
    }
    if cfg.schedule.is_constant:
        closed = nqm.expected_loss(cfg, curve.fractions())
        truth["closed_form"] = np.asarray(closed).tolist()
    return GeneratedRun(curve, None, None, truth)


def _gen_chinchilla_points(spec: SynthSpec, rng: np.random.Generator) -> SynthOutput:
    p = dict(spec.params)
    fit = ChinchillaFit(
        E=float(p.get("E", 1.7)), A=float(p.get("A", 100.0)),
        alpha=float(p.get("alpha", 0.35)), B=float(p.get("B", 100.0 * 20**0.35)),
        beta=float(p.get("beta", 0.35)),
    )
    n_values = [float(x) for x in p.get("n_values", [1e8, 3e8, 1e9, 3e9, 1e10])]
    d_values = [float(x) for x in p.get("d_values", [2e9, 8e9, 3e10, 1e11])]
    pts = []
    for n in n_values:
        for d in d_values:
            loss = fit.evaluate(n, d)
            loss = float(_apply_noise(np.array([loss]), spec, rng)[0])
            pts.append((n, d, loss))
    truth = {"kind": "chinchilla_points", "E": fit.E, "A": fit.A,
             "alpha": fit.alpha, "B": fit.B, "beta": fit.beta}
    return SynthOutput(runs=(), truth=truth, points=tuple(pts))


def _gen_crossing_sweep(spec: SynthSpec, rng: np.random.Generator) -> SynthOutput:
    p = dict(spec.params)
    tpp = float(p.get("tpp", 80.0))
    total_steps = int(p.get("total_steps", 1000))
    schedule = p.get("schedule", {"kind": "linear_decay", "warmup_frac": 0.1,
                                  "decay_ratio": 0.0})
    # defaults cross: the flat run leads mid-training, the humped run wins
    run_specs = p.get("runs", [
        {"run_id": "flat", "tau": 1.0, "final_loss": 2.32},
        {"run_id": "hump", "tau": 0.1, "final_loss": 2.30},
    ])
    runs = []
    for rs in run_specs:
        sub = {**p, **rs, "tpp": tpp, "total_steps": total_steps,
               "schedule": schedule}
        sub.pop("runs", None)
        runs.append(_gen_predictor_curve(spec, rng, sub))
    finals = {r.truth["run_id"]: r.truth["final_loss"] for r in runs}
    best = min(finals, key=lambda k: (finals[k], k))
    truth = {"kind": "crossing_sweep", "finals": finals, "best_run_id": best,
             "tpp": tpp, "total_steps": total_steps}
    return SynthOutput(runs=tuple(runs), truth=truth)


def generate(spec: SynthSpec) -> SynthOutput:
    """Produce curves, configs, and a ground-truth record for a spec."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    if spec.kind == "predictor_curve":
        run = _gen_predictor_curve(spec, rng)
        return SynthOutput(runs=(run,), truth=run.truth)
    if spec.kind == "fault_ramp":
        run = _gen_fault_ramp(spec, rng)
        return SynthOutput(runs=(run,), truth=run.truth)
    if spec.kind == "nqm_run":
        run = _gen_nqm_run(spec, rng)
        return SynthOutput(runs=(run,), truth=run.truth)
    if spec.kind == "chinchilla_points":
        return _gen_chinchilla_points(spec, rng)
    return _gen_crossing_sweep(spec, rng)


def corpus(taus, tpps, params: PredictorParams = DEFAULT_PARAMS,
           final_loss: float = 2.3, total_steps: int = 1000,
           schedule: Optional[LrSchedule] = None,
           noise_kind: str = "none", noise_sigma: float = 0.0,
           seed: int = 0) -> list[GeneratedRun]:
    """Cross product of (tau, tpp) predictor curves sharing one seed root."""
    sched = schedule if schedule is not None else LrSchedule()
    runs = []
    children = np.random.SeedSequence(seed).spawn(len(taus) * len(tpps))
    i = 0
    for tau in taus:
        for tpp in tpps:
            sub = SynthSpec(
                kind="predictor_curve",
                params={"run_id": f"tau{tau}_tpp{tpp}", "tau": tau, "tpp": tpp,
                        "final_loss": final_loss, "total_steps": total_steps,
                        "schedule": sched.to_dict(),
                        "predictor": params.to_dict()},
                noise_kind=noise_kind, noise_sigma=noise_sigma,
                seed=int(children[i].generate_state(1)[0]),
            )
            runs.extend(generate(sub).runs)
            i += 1
    return runs


def write_output(output: SynthOutput, out_dir, fmt: str = "jsonl",
                 duplicate_step_at: Optional[float] = None) -> list[Path]:
    """Write curves, configs, and the truth record to a directory.

    ``duplicate_step_at`` re-emits the log row nearest that fraction, which
    simulates a job-restart boundary in the written file only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    from .curves import export  # local import to avoid cycle at module load

    for run in output.runs:
        cpath = out / f"{run.curve.run_id}.{fmt}"
        export(run.curve, cpath, fmt)
        if duplicate_step_at is not None:
            _duplicate_row(cpath, fmt, run.curve, duplicate_step_at)
        written.append(cpath)
        if run.config is not None:
            kpath = out / f"{run.curve.run_id}.config.json"
            save_config(run.config, kpath)
            written.append(kpath)
    tpath = out / "truth.json"
    with open(tpath, "w", encoding="utf-8") as f:
        json.dump(output.truth, f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(tpath)
    if output.points is not None:
        ppath = out / "points.csv"
        with open(ppath, "w", encoding="utf-8") as f:
            f.write("params,tokens,loss\n")
            for n, d, l in output.points:
                f.write(f"{format(n, '.17g')},{format(d, '.17g')},{format(l, '.17g')}\n")
        written.append(ppath)
    return written


def _duplicate_row(path: Path, fmt: str, curve: LossCurve,
                   at_fraction: float) -> None:
    target_step = int(round(at_fraction * curve.total_steps))
    idx = int(np.argmin(np.abs(curve.steps() - target_step)))
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    offset = 1 if fmt == "csv" else 0  # header row
    row = lines[offset + idx]
    lines.insert(offset + idx + 1, row)
    path.write_text("".join(lines), encoding="utf-8")
