"""Command-line interface: one subcommand per workflow.

stdout carries the primary artifact (CSV/JSON/NDJSON); diagnostics go to
stderr. Exit codes: 0 success, 1 usage or input error, 2 monitor alert.
Floats are written with 17 significant digits so artifacts are stable and
re-ingestable byte-for-byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import nqm as nqm_mod
from . import synth as synth_mod
from .curves import RunConfig, export, ingest, load_config
from .earlystop import STRATEGIES, SweepEntry, decide, evaluate_strategy
from .errors import CollapseKitError
from .monitor import MonitorPolicy, compare_offline, watch
from .normalize import (
    NormalizedCurve,
    normalize_early_align,
    normalize_estimate,
    normalize_final,
    residuals as residuals_op,
)
from .predictor import CurveMeta, PredictorParams, fit_alternating, predict
from .scaling import ChinchillaFit, compression_tokens_factor
from .schedules import LrSchedule
from .timescale import instantaneous_tau, tau as tau_op


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@contextmanager
def _open_out(path: str):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as f:
            yield f


def _write_csv(fh, header: list[str], rows) -> None:
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join("" if v is None else (_fmt(v) if isinstance(v, float) else str(v))
                          for v in row) + "\n")


def _write_json(fh, obj) -> None:
    json.dump(obj, fh, indent=2, sort_keys=True)
    fh.write("\n")


def _read_normalized_csv(path) -> NormalizedCurve:
    pts = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if header[:2] != ["t_hat", "ell"]:
            raise CollapseKitError(f"expected 't_hat,ell' header in {path}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            a, b = line.split(",")[:2]
            pts.append((float(a), float(b)))
    # container for a reference trajectory; the normalizer is not recoverable
    return NormalizedCurve(points=tuple(pts), normalizer=1.0,
                           method="final_loss")


def _schedule_from_args(args) -> LrSchedule:
    return LrSchedule(kind=args.schedule, warmup_frac=args.warmup_frac,
                      decay_ratio=args.decay_ratio)


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", choices=("constant", "linear_decay"),
                   default="linear_decay")
    p.add_argument("--warmup-frac", type=float, default=0.1)
    p.add_argument("--decay-ratio", type=float, default=0.0)


def _curve_format(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "csv" if str(path).endswith(".csv") else "jsonl"


def _load_curve(path, fmt, config_path=None, total_steps=None, run_id=None):
    if total_steps is None:
        if config_path is None:
            raise CollapseKitError(
                "total steps unknown: pass --total-steps or --config")
        total_steps = load_config(config_path).total_steps
    return ingest(path, fmt, total_steps=total_steps, run_id=run_id)


# ---------------------------------------------------------------------------
# Manifest handling
# ---------------------------------------------------------------------------


def _load_manifest(path) -> list[dict]:
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    entries = doc.get("entries", [])
    if not entries:
        raise CollapseKitError("manifest has no entries")
    out = []
    seen = set()
    for e in entries:
        curve_path = base / e["curve"]
        config_path = base / e["config"] if e.get("config") else None
        run_id = e.get("run_id") or Path(e["curve"]).stem
        if run_id in seen:
            raise CollapseKitError(f"duplicate run_id {run_id!r} in manifest")
        seen.add(run_id)
        if not curve_path.exists():
            raise CollapseKitError(f"manifest curve path missing: {curve_path}")
        if config_path is not None and not config_path.exists():
            raise CollapseKitError(f"manifest config path missing: {config_path}")
        out.append({
            "curve": curve_path, "config": config_path, "run_id": run_id,
            "format": e.get("format"), "meta": e.get("meta", {}),
            "true_final": e.get("true_final"),
            "total_steps": e.get("total_steps"),
        })
    return out


def _entry_meta(entry: dict, config: RunConfig | None) -> CurveMeta:
    meta = entry["meta"]
    sched = None
    if "schedule" in meta:
        sched = LrSchedule.from_dict(meta["schedule"])
    elif config is not None:
        sched = config.schedule
    else:
        raise CollapseKitError(
            f"entry {entry['run_id']}: no schedule in meta and no config")
    tau_v = meta.get("tau")
    tpp_v = meta.get("tpp")
    if tau_v is None:
        if config is None:
            raise CollapseKitError(f"entry {entry['run_id']}: tau unknown")
        tau_v = tau_op(config).tau
    if tpp_v is None:
        if config is None:
            raise CollapseKitError(f"entry {entry['run_id']}: tpp unknown")
        tpp_v = config.tokens_per_param
    return CurveMeta(tau=float(tau_v), tpp=float(tpp_v), schedule=sched)


def _load_entry(entry: dict):
    config = load_config(entry["config"]) if entry["config"] else None
    total = entry["total_steps"] or (config.total_steps if config else None)
    fmt = _curve_format(entry["curve"], entry["format"])
    curve = _load_curve(entry["curve"], fmt, total_steps=total,
                        run_id=entry["run_id"])
    return curve, config, _entry_meta(entry, config)


def _corpus_hash(items) -> str:
    h = hashlib.sha256()
    for curve, meta in items:
        h.update(curve.run_id.encode())
        h.update(_fmt(meta.tau).encode())
        h.update(_fmt(meta.tpp).encode())
        h.update(json.dumps(meta.schedule.to_dict(), sort_keys=True).encode())
        for p in curve.points:
            h.update(_fmt(p[1]).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_ingest(args) -> int:
    curve = _load_curve(args.infile, _curve_format(args.infile, args.format),
                        config_path=args.config, total_steps=args.total_steps)
    out_fmt = args.out_format or _curve_format(args.infile, args.format)
    if args.out == "-":
        import tempfile

        with tempfile.NamedTemporaryFile("r", suffix=f".{out_fmt}",
                                         delete=False) as tmp:
            export(curve, tmp.name, out_fmt)
            sys.stdout.write(Path(tmp.name).read_text(encoding="utf-8"))
            os.unlink(tmp.name)
    else:
        export(curve, args.out, out_fmt)
    print(f"ingested {len(curve.samples)} samples "
          f"(complete={curve.complete}, restarts={len(curve.restart_steps)})",
          file=sys.stderr)
    return 0


def _cmd_normalize(args) -> int:
    curve = _load_curve(args.infile, _curve_format(args.infile, args.format),
                        config_path=args.config, total_steps=args.total_steps)
    if args.method == "final":
        ncurve = normalize_final(curve, smooth_window=args.smooth_window)
    elif args.method == "early_align":
        if not args.reference:
            raise CollapseKitError("early_align requires --reference")
        ref = _read_normalized_csv(args.reference)
        ncurve = normalize_early_align(curve, ref,
                                       smooth_window=args.smooth_window)
    else:
        if not args.fit_file:
            raise CollapseKitError("estimate requires --fit")
        with open(args.fit_file, "r", encoding="utf-8") as f:
            fd = json.load(f)
        fit = ChinchillaFit(E=fd["E"], A=fd["A"], alpha=fd["alpha"],
                            B=fd["B"], beta=fd["beta"])
        if args.params is None or args.tokens is None:
            raise CollapseKitError("estimate requires --params and --tokens")
        ncurve = normalize_estimate(curve, fit, args.params, args.tokens,
                                    smooth_window=args.smooth_window)
    with _open_out(args.out) as fh:
        _write_csv(fh, ["t_hat", "ell"], ((float(t), float(v)) for t, v in ncurve.points))
    print(f"normalizer={_fmt(ncurve.normalizer)} method={ncurve.method}",
          file=sys.stderr)
    return 0


def _cmd_residuals(args) -> int:
    a = _read_normalized_csv(args.a)
    b = _read_normalized_csv(args.b)
    report = residuals_op(a, b, n_points=args.grid_points,
                          rolling_window=args.rolling_window)
    with _open_out(args.out) as fh:
        _write_csv(fh, ["t_hat", "resid"],
                   ((float(t), float(v)) for t, v in report.points))
    summary = {"max_abs": report.max_abs(),
               "rolling_mae": report.max_rolling_mae()}
    if args.summary_out == "-":
        _write_json(sys.stderr, summary)
    else:
        with open(args.summary_out, "w", encoding="utf-8") as f:
            _write_json(f, summary)
    return 0


def _cmd_nqm(args) -> int:
    config = nqm_mod.NqmConfig(
        curvature=args.curvature, noise_var=args.sigma_x2, theta0=args.theta0,
        tau=args.tau, total_steps=args.total_steps,
        schedule=_schedule_from_args(args),
    )
    grid = np.linspace(args.grid_lo, 1.0, args.grid_points)
    sim = nqm_mod.simulate(config, args.seeds, base_seed=args.seed, grid=grid,
                           threads=args.threads)
    closed = None
    if config.schedule.is_constant:
        closed = np.asarray(nqm_mod.expected_loss(config, sim.t_hat))
    rows = []
    for i, t in enumerate(sim.t_hat):
        if closed is None:
            rows.append((float(t), float(sim.mean_loss[i]), None, None))
        else:
            rel = abs(sim.mean_loss[i] - closed[i]) / closed[i] if closed[i] else 0.0
            rows.append((float(t), float(sim.mean_loss[i]), float(closed[i]),
                         float(rel)))
    with _open_out(args.out) as fh:
        _write_csv(fh, ["t_hat", "mean_loss", "closed_form", "abs_rel_err"], rows)
    return 0


def _cmd_compress(args) -> int:
    if args.sweep:
        lo, hi, n = args.sweep.split(":")
        kns = np.linspace(float(lo), float(hi), int(n))
    elif args.kn is not None:
        kns = [args.kn]
    else:
        raise CollapseKitError("pass --kn or --sweep lo:hi:n")
    rows = []
    for kn in kns:
        kd = compression_tokens_factor(float(kn), args.a)
        rows.append((float(kn), float(kd), float(kn * kd)))
    with _open_out(args.out) as fh:
        _write_csv(fh, ["k_N", "k_D", "cost_ratio"], rows)
    return 0


def _cmd_fit(args) -> int:
    entries = _load_manifest(args.manifest)
    corpus = []
    for entry in entries:
        curve, config, meta = _load_entry(entry)
        ncurve = normalize_final(curve, smooth_window=args.smooth_window)
        corpus.append((ncurve, meta))
    result = fit_alternating(corpus, grid_resolution=args.grid_resolution,
                             max_rounds=args.max_rounds, m=args.m,
                             eps1=args.eps1, eps2=args.eps2)
    artifact = result.params.to_dict()
    artifact["macro_mae"] = result.macro_mae
    artifact["corpus_hash"] = _corpus_hash([(c, m) for c, m in corpus])
    with _open_out(args.out) as fh:
        _write_json(fh, artifact)
    print(f"fit macro MAE {result.macro_mae:.6g} "
          f"after {len(result.round_maes) - 1} rounds", file=sys.stderr)
    return 0


def _load_fit_params(path) -> PredictorParams:
    with open(path, "r", encoding="utf-8") as f:
        return PredictorParams.from_dict(json.load(f))


def _cmd_predict(args) -> int:
    params = _load_fit_params(args.fit_file)
    meta = CurveMeta(tau=args.tau, tpp=args.tpp,
                     schedule=_schedule_from_args(args))
    grid = np.linspace(0.0, 1.0, args.points)
    vals = predict(params, meta, grid)
    with _open_out(args.out) as fh:
        _write_csv(fh, ["t_hat", "ell_hat"],
                   ((float(t), float(v)) for t, v in zip(grid, vals)))
    return 0


def _cmd_rank(args) -> int:
    params = _load_fit_params(args.fit_file)
    entries = _load_manifest(args.manifest)
    sweep = []
    for entry in entries:
        curve, config, meta = _load_entry(entry)
        sweep.append(SweepEntry(entry["run_id"], curve, meta,
                                true_final=entry["true_final"]))
    decision = decide(sweep, "predicted_best", params=params,
                      smooth_window=args.smooth_window,
                      min_stop=args.min_stop)
    doc = {
        "chosen": decision.chosen_run_id,
        "predicted_finals": {k: float(v)
                             for k, v in sorted(decision.predicted_finals.items())},
        "stop_fraction": min(e.stop_fraction for e in sweep),
    }
    with _open_out(args.out) as fh:
        _write_json(fh, doc)
    return 0


def _cmd_evalstop(args) -> int:
    params = _load_fit_params(args.fit_file) if args.fit_file else None
    entries = _load_manifest(args.manifest)
    sweep = []
    for entry in entries:
        curve, config, meta = _load_entry(entry)
        if entry["true_final"] is None:
            raise CollapseKitError(
                f"entry {entry['run_id']} lacks true_final (required here)")
        sweep.append(SweepEntry(entry["run_id"], curve, meta,
                                true_final=entry["true_final"]))
    stops = [float(s) for s in args.stops.split(",")]
    rows = []
    for strategy in args.strategies.split(","):
        if strategy not in STRATEGIES:
            raise CollapseKitError(f"unknown strategy {strategy!r}")
        gaps = evaluate_strategy(sweep, strategy, stops, params=params,
                                 n_seeds=args.eval_seeds,
                                 smooth_window=args.smooth_window)
        for stop, gap in gaps:
            rows.append((float(stop), strategy, float(gap)))
    with _open_out(args.out) as fh:
        _write_csv(fh, ["stop_frac", "strategy", "gap"], rows)
    return 0


def _cmd_monitor(args) -> int:
    reference = _read_normalized_csv(args.reference)
    config = load_config(args.config)
    if args.policy:
        with open(args.policy, "r", encoding="utf-8") as f:
            pd = json.load(f)
        policy = MonitorPolicy(
            threshold=float(pd.get("threshold", 0.01)),
            window_t_hat=float(pd.get("window_t_hat", 0.02)),
            min_t_hat=float(pd.get("min_t_hat", 0.5)),
            realign_every=int(pd.get("realign_every", 500)),
        )
    else:
        policy = MonitorPolicy()
    fmt = _curve_format(args.log, args.format)

    emitted_points = 0
    emitted_alerts = 0
    emitted_annotations = 0
    alerted = False

    def emit(report) -> None:
        nonlocal emitted_points, emitted_alerts, emitted_annotations, alerted
        for t, label in report.annotations[emitted_annotations:]:
            print(json.dumps({"type": "annotation", "t_hat": t, "value": label}))
        emitted_annotations = len(report.annotations)
        for t, v in report.points[emitted_points:]:
            print(json.dumps({"type": "residual", "t_hat": t, "value": v}))
        emitted_points = len(report.points)
        for alert in report.alerts[emitted_alerts:]:
            print(json.dumps({"type": "alert", "t_hat": alert.onset,
                              "value": alert.peak_residual}))
            alerted = True
        emitted_alerts = len(report.alerts)

    if args.once:
        curve = _load_curve(args.log, fmt, total_steps=config.total_steps)
        emit(compare_offline(curve, reference, config, policy,
                             smooth_window=args.smooth_window))
    else:
        for report in watch(args.log, reference, config, policy, format=fmt,
                            smooth_window=args.smooth_window,
                            poll_interval_s=args.poll_ms / 1000.0,
                            max_polls=args.max_polls):
            emit(report)
    return 2 if alerted else 0


def _cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        doc = json.load(f)
    spec = synth_mod.SynthSpec.from_dict(doc)
    if args.seed is not None:
        spec = synth_mod.SynthSpec(kind=spec.kind, params=spec.params,
                                   noise_kind=spec.noise_kind,
                                   noise_sigma=spec.noise_sigma,
                                   seed=args.seed)
    output = synth_mod.generate(spec)
    written = synth_mod.write_output(output, args.out, fmt=args.out_format,
                                     duplicate_step_at=args.duplicate_step_at)
    for path in written:
        print(path)
    return 0


def _cmd_tau(args) -> int:
    config = load_config(args.config)
    summary = tau_op(config)
    doc = {
        "tau": summary.tau if summary.tau != float("inf") else "inf",
        "alpha": summary.alpha,
        "tpp": summary.tpp,
        "total_steps": summary.total_steps,
    }
    if args.t_hat is not None:
        it = instantaneous_tau(config, args.t_hat)
        doc["instantaneous_tau"] = it if it != float("inf") else "inf"
        doc["t_hat"] = args.t_hat
    with _open_out(args.out) as fh:
        _write_json(fh, doc)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1; 2 is reserved for alerts
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="collapsekit",
                     description="Training-loss-curve collapse toolkit")
    default_threads = int(os.environ.get("COLLAPSEKIT_THREADS", "1"))
    parser.add_argument("--seed", type=int, default=None,
                        help="base RNG seed for stochastic subcommands")
    parser.add_argument("--threads", type=int, default=default_threads)
    parser.add_argument("--smooth-window", type=int, default=100,
                        help="trailing smoothing window in logged steps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and re-export a loss log")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--config")
    p.add_argument("--total-steps", type=int)
    p.add_argument("--out", default="-")
    p.add_argument("--out-format", choices=("jsonl", "csv"))
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("normalize", help="map a loss log to collapse coordinates")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--config")
    p.add_argument("--total-steps", type=int)
    p.add_argument("--method", choices=("final", "early_align", "estimate"),
                   default="final")
    p.add_argument("--reference", help="normalized reference CSV (early_align)")
    p.add_argument("--fit", dest="fit_file", help="Chinchilla fit JSON (estimate)")
    p.add_argument("--params", type=float, help="model size N (estimate)")
    p.add_argument("--tokens", type=float, help="dataset size D (estimate)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("residuals", help="pointwise difference of two normalized curves")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--grid-points", type=int, default=512)
    p.add_argument("--rolling-window", type=float, default=0.02)
    p.add_argument("--out", default="-")
    p.add_argument("--summary-out", default="-",
                   help="JSON summary path ('-' = stderr)")
    p.set_defaults(func=_cmd_residuals)

    p = sub.add_parser("nqm", help="simulate the noisy quadratic model")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--curvature", type=float, default=1.0)
    p.add_argument("--sigma-x2", type=float, default=1.0)
    p.add_argument("--theta0", type=float, default=0.0)
    p.add_argument("--total-steps", type=int, default=2000)
    p.add_argument("--seeds", type=int, default=10_000)
    p.add_argument("--grid-points", type=int, default=96)
    p.add_argument("--grid-lo", type=float, default=0.01)
    _add_schedule_flags(p)
    p.set_defaults(schedule="constant", warmup_frac=0.0, decay_ratio=1.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_nqm)

    p = sub.add_parser("compress", help="compute-vs-compression trade-off")
    p.add_argument("--a", type=float, default=0.35)
    p.add_argument("--kn", type=float)
    p.add_argument("--sweep", help="lo:hi:n sweep over k_N")
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("fit", help="fit the curve predictor on a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid-resolution", type=int, default=64)
    p.add_argument("--max-rounds", type=int, default=40)
    p.add_argument("--m", type=float, default=0.05)
    p.add_argument("--eps1", type=float, default=0.001)
    p.add_argument("--eps2", type=float, default=0.1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="emit a predicted normalized curve")
    p.add_argument("--fit", dest="fit_file", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--tpp", type=float, required=True)
    _add_schedule_flags(p)
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("rank", help="rank partial runs by inferred final loss")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fit", dest="fit_file", required=True)
    p.add_argument("--min-stop", type=float, default=0.25)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("evalstop", help="evaluate stopping strategies against truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fit", dest="fit_file")
    p.add_argument("--stops", required=True, help="comma-separated stop fractions")
    p.add_argument("--strategies", default="random,current_best,predicted_best")
    p.add_argument("--eval-seeds", type=int, default=100)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_evalstop)

    p = sub.add_parser("monitor", help="watch a log for collapse-residual alerts")
    p.add_argument("--log", required=True)
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--reference", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--policy", help="policy JSON path")
    p.add_argument("--poll-ms", type=int, default=500)
    p.add_argument("--max-polls", type=int, default=None)
    p.add_argument("--once", action="store_true",
                   help="single offline pass over the existing log")
    p.set_defaults(func=_cmd_monitor)

    p = sub.add_parser("synth", help="generate synthetic runs with ground truth")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--duplicate-step-at", type=float, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("tau", help="timescale summary for a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--t-hat", type=float, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_tau)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (CollapseKitError, FileNotFoundError, KeyError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
