"""Command-line interface: simulate, learn, evaluate, and the built-in demo.

Exit codes: 0 on success, 1 for validation problems (bad config, bad data,
bad preconditions), 2 for runtime failures. All randomness flows from the
configured seed, so repeated invocations produce byte-identical outputs.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml

from . import io as cio
from . import presets
from .errors import InputError, RunConfigError
from .learner import effective_param_count, epoch_boundary
from .metrics import anytime_loss_bound
from .pipeline import (
    estimate_trajectory,
    evaluate_fixed,
    grid_agreement,
    learn_run,
    metrics_rows,
)
from .simulate import SimConfig, simulate_expert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conesched",
        description="Learn to imitate a cone scheduler from observed backlogs and decisions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_learner=True):
        p.add_argument("--config", help="run configuration file (YAML)")
        p.add_argument("--preset", choices=presets.PRESET_NAMES, help="built-in configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--horizon", type=int, help="override the config horizon")
        if with_learner:
            p.add_argument("--variant", choices=("multiplicative", "hedge"))
            p.add_argument("--params", choices=("full", "diagonal"))
        p.add_argument("--replications", type=int, default=1, metavar="R",
                       help="run R independent seeds concurrently")

    p_sim = sub.add_parser("simulate", help="run the expert through the queue dynamics")
    add_common(p_sim, with_learner=False)
    p_sim.add_argument("--out", help="trace file to write (or config outputs.trace)")
    p_sim.set_defaults(func=cmd_simulate)

    p_learn = sub.add_parser("learn", help="train the imitator on a trace or live simulation")
    add_common(p_learn)
    p_learn.add_argument("--trace", help="observation trace to learn from (default: simulate live)")
    p_learn.add_argument("--metrics", help="metrics CSV to write")
    p_learn.add_argument("--estimate", help="final-estimate report to write (JSON)")
    p_learn.add_argument("--checkpoint", help="checkpoint file to write")
    p_learn.add_argument("--checkpoint-every", type=int, help="slots between checkpoints")
    p_learn.add_argument("--metrics-every", type=int, help="slots between metric rows")
    p_learn.add_argument("--resume", help="checkpoint file to resume from")
    p_learn.set_defaults(func=cmd_learn)

    p_eval = sub.add_parser("evaluate", help="evaluate a frozen estimate against a trace")
    p_eval.add_argument("--trace", required=True)
    p_eval.add_argument("--estimate", required=True)
    p_eval.add_argument("--config", help="config carrying the true expert (optional)")
    p_eval.add_argument("--metrics", help="metrics CSV to write")
    p_eval.set_defaults(func=cmd_evaluate)

    p_demo = sub.add_parser("demo", help="run the built-in two-queue reproduction")
    p_demo.add_argument("--seed", type=int, help="override the preset seed")
    p_demo.add_argument("--horizon", type=int, help="override the preset horizon")
    p_demo.add_argument("--out-dir", default="conesched-demo", help="directory for outputs")
    p_demo.add_argument("--replications", type=int, default=1, metavar="R")
    p_demo.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------


def _raw_config(args) -> dict:
    if getattr(args, "preset", None):
        if args.config:
            raise RunConfigError("give either --config or --preset, not both")
        return presets.preset_config(args.preset)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as handle:
            try:
                raw = yaml.safe_load(handle)
            except yaml.YAMLError as exc:
                raise RunConfigError(f"config: not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise RunConfigError("config: top level must be a mapping")
        return raw
    return None


def _overrides(args) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "horizon": getattr(args, "horizon", None),
        "variant": getattr(args, "variant", None),
        "params": getattr(args, "params", None),
        "metrics_every": getattr(args, "metrics_every", None),
        "checkpoint_every": getattr(args, "checkpoint_every", None),
    }


def _with_suffix(path, rep: int):
    if path is None or rep == 0:
        return path
    root, ext = os.path.splitext(path)
    return f"{root}-rep{rep}{ext}"


def _run_replicated(worker, payloads):
    if len(payloads) == 1:
        return [worker(payloads[0])]
    workers = min(len(payloads), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, payloads))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _simulate_worker(payload) -> dict:
    config = cio.parse_run_config(payload["raw"], payload["overrides"])
    if config.expert is None or config.arrivals is None or config.horizon is None:
        raise RunConfigError("simulate needs expert, arrivals, and horizon in the config")
    sim = SimConfig(
        expert=config.expert,
        arrivals=config.arrivals,
        horizon=config.horizon,
        x0=config.x0,
        seed=payload["seed"],
    )
    trace = simulate_expert(sim)
    cio.write_trace(payload["out"], trace)
    counts = np.bincount(trace.decisions, minlength=len(config.schedule_set))
    return {
        "seed": payload["seed"],
        "out": payload["out"],
        "slots": trace.horizon,
        "final_backlog": trace.backlogs[-1].tolist(),
        "decision_counts": counts.tolist(),
    }


def cmd_simulate(args) -> int:
    raw = _raw_config(args)
    if raw is None:
        raise RunConfigError("simulate needs --config or --preset")
    base = cio.parse_run_config(raw, _overrides(args))
    out = args.out or base.outputs.get("trace")
    if not out:
        raise RunConfigError("simulate needs --out or outputs.trace in the config")
    payloads = [
        {
            "raw": raw,
            "overrides": _overrides(args),
            "seed": base.seed + rep,
            "out": _with_suffix(out, rep),
        }
        for rep in range(max(1, args.replications))
    ]
    for summary in _run_replicated(_simulate_worker, payloads):
        print(
            f"simulate seed={summary['seed']}: {summary['slots']} slots -> {summary['out']}; "
            f"final backlog {summary['final_backlog']}; decisions used {summary['decision_counts']}"
        )
    return 0


# ---------------------------------------------------------------------------
# learn
# ---------------------------------------------------------------------------


def _learn_worker(payload) -> dict:
    raw = payload["raw"]
    overrides = payload["overrides"]
    config = cio.parse_run_config(raw, overrides) if raw is not None else None

    if payload["trace"] is not None:
        observations = cio.read_observations(payload["trace"])
        if overrides.get("horizon") not in (None, len(observations)):
            raise InputError("horizon is fixed by the trace length")
        expert = None
        if config is not None:
            if config.schedule_set.canonical_digest() != observations.schedule_set.canonical_digest():
                raise InputError("config schedule_set differs from the trace's")
            expert = config.expert
            observations.schedule_set = config.schedule_set
    else:
        if config is None:
            raise RunConfigError("learn needs --config/--preset or --trace")
        if config.expert is None or config.arrivals is None or config.horizon is None:
            raise RunConfigError("live learning needs expert, arrivals, and horizon in the config")
        sim = SimConfig(
            expert=config.expert,
            arrivals=config.arrivals,
            horizon=config.horizon,
            x0=config.x0,
            seed=payload["seed"],
        )
        observations = simulate_expert(sim).observations()
        expert = config.expert

    algorithm = config.algorithm if config is not None else "anytime"
    variant = config.variant if config is not None else (overrides.get("variant") or "multiplicative")
    param_mode = config.param_mode if config is not None else (overrides.get("params") or "full")
    if expert is not None and param_mode == "diagonal" and np.any(expert.params.off_diag_values() != 0):
        raise InputError("diagonal learner needs a diagonal expert for loss reporting")

    resume_state = None
    resume_cum = 0.0
    resume_mm = 0
    if payload["resume"] is not None:
        snapshot = cio.load_checkpoint(payload["resume"])
        resume_state = snapshot["learner"]
        resume_cum = snapshot.get("cum_loss") or 0.0
        resume_mm = snapshot.get("n_mismatch") or 0

    checkpoint_every = 0
    if config is not None:
        checkpoint_every = config.checkpoint_every
    if overrides.get("checkpoint_every"):
        checkpoint_every = overrides["checkpoint_every"]

    result = learn_run(
        observations,
        algorithm=algorithm,
        variant=variant,
        param_mode=param_mode,
        expert=expert,
        checkpoint_path=payload["checkpoint"],
        checkpoint_every=checkpoint_every,
        resume_state=resume_state,
        resume_cum_loss=resume_cum,
        resume_mismatch=resume_mm,
    )

    if payload["metrics"] is not None:
        cadence = 1
        if config is not None:
            cadence = config.cadence()
        if overrides.get("metrics_every"):
            cadence = overrides["metrics_every"]
        cio.write_metrics(
            payload["metrics"], metrics_rows(result, cadence, expert_known=expert is not None)
        )
    stats = dict(result.summary)
    if expert is not None:
        stats["grid_agreement"] = grid_agreement(result.learner.estimate_, expert)
    if payload["estimate"] is not None:
        cio.save_estimate(payload["estimate"], result.learner, stats=stats)
    stats["seed"] = payload["seed"]
    return stats


def cmd_learn(args) -> int:
    raw = _raw_config(args)
    overrides = _overrides(args)
    if args.trace is not None and args.replications > 1:
        raise InputError("--replications needs live simulation, not --trace")
    base_seed = 0
    outputs = {}
    if raw is not None:
        base = cio.parse_run_config(raw, overrides)
        base_seed = base.seed
        outputs = base.outputs
    metrics = args.metrics or outputs.get("metrics")
    estimate = args.estimate or outputs.get("estimate")
    checkpoint = args.checkpoint or outputs.get("checkpoint")
    payloads = [
        {
            "raw": raw,
            "overrides": overrides,
            "seed": base_seed + rep,
            "trace": args.trace,
            "metrics": _with_suffix(metrics, rep),
            "estimate": _with_suffix(estimate, rep),
            "checkpoint": _with_suffix(checkpoint, rep),
            "resume": args.resume,
        }
        for rep in range(max(1, args.replications))
    ]
    for stats in _run_replicated(_learn_worker, payloads):
        line = (
            f"learn seed={stats['seed']}: {stats['slots']} slots, "
            f"{stats['mismatches']} mismatches (last at {stats['last_mismatch_slot']})"
        )
        if "mean_loss" in stats:
            line += f", mean loss {stats['mean_loss']:.3e}"
            if stats.get("bound_final") is not None:
                line += f" vs bound {stats['bound_final']:.3e}"
        if "grid_agreement" in stats:
            line += f", grid agreement {stats['grid_agreement']:.4f}"
        print(line)
        print(f"  estimate: {stats['estimate']}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    observations = cio.read_observations(args.trace)
    estimate = cio.load_estimate(args.estimate)
    expert = None
    if args.config:
        config = cio.load_run_config(args.config)
        if config.schedule_set.canonical_digest() != observations.schedule_set.canonical_digest():
            raise InputError("config schedule_set differs from the trace's")
        expert = config.expert
    header, rows, summary = evaluate_fixed(observations, estimate, expert)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as handle:
            handle.write(header + "\n")
            for row in rows:
                handle.write(row + "\n")
    print(f"evaluate: {summary['slots']} slots, agreement on trace {summary['agreement_on_trace']:.6f}")
    if "mean_loss" in summary:
        print(
            f"  mean loss {summary['mean_loss']:.3e}, grid agreement {summary['grid_agreement']:.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# demo
# ---------------------------------------------------------------------------


def _demo_worker(payload) -> dict:
    raw = presets.preset_config("two-queue-demo")
    overrides = {"seed": payload["seed"], "horizon": payload["horizon"]}
    config = cio.parse_run_config(raw, overrides)
    out_dir = payload["out_dir"]
    os.makedirs(out_dir, exist_ok=True)

    sim = SimConfig(
        expert=config.expert,
        arrivals=config.arrivals,
        horizon=config.horizon,
        x0=config.x0,
        seed=config.seed,
    )
    observations = simulate_expert(sim).observations()
    result = learn_run(
        observations,
        algorithm=config.algorithm,
        variant=config.variant,
        param_mode=config.param_mode,
        expert=config.expert,
    )
    metrics_path = os.path.join(out_dir, "metrics.csv")
    cio.write_metrics(metrics_path, metrics_rows(result, config.cadence(), expert_known=True))

    agreement = grid_agreement(result.learner.estimate_, config.expert)
    stats = dict(result.summary)
    stats["grid_agreement"] = agreement
    estimate_path = os.path.join(out_dir, "estimate.json")
    cio.save_estimate(estimate_path, result.learner, stats=stats)

    total = result.learner.t_
    samples = sorted(set(np.unique(np.geomspace(1, total, 13).astype(np.int64)).tolist()))
    trajectory = [(t, vec.tolist()) for t, vec in estimate_trajectory(result, samples)]
    log = result.log
    cum_mm = [(t, int(np.searchsorted(log.mismatch_slots, t, side="left"))) for t in samples]
    p_eff = effective_param_count(config.schedule_set.n, config.param_mode)
    t0 = epoch_boundary(p_eff, 0)
    diameter = config.schedule_set.diameter()
    loss_curve = []
    for t in samples:
        if t < t0:
            continue
        cum = result.cum_loss_upto(t)
        loss_curve.append((t, cum / t, anytime_loss_bound(diameter, p_eff, t, t0)))
    return {
        "seed": config.seed,
        "out_dir": out_dir,
        "stats": stats,
        "trajectory": trajectory,
        "cumulative_mismatches": cum_mm,
        "loss_curve": loss_curve,
        "metrics_path": metrics_path,
        "estimate_path": estimate_path,
    }


def cmd_demo(args) -> int:
    reps = max(1, args.replications)
    payloads = [
        {
            "seed": args.seed,
            "horizon": args.horizon,
            "out_dir": args.out_dir if rep == 0 else f"{args.out_dir}-rep{rep}",
        }
        for rep in range(reps)
    ]
    if reps > 1:
        for i, payload in enumerate(payloads):
            payload["seed"] = (args.seed if args.seed is not None else presets.DEFAULT_DEMO_SEED) + i
    results = _run_replicated(_demo_worker, payloads)
    for res in results:
        stats = res["stats"]
        print(f"demo seed={res['seed']} -> {res['out_dir']}")
        print("  parameter estimate trajectory (slot: estimate):")
        for t, vec in res["trajectory"]:
            print(f"    {t:>9}: [{', '.join(f'{v:.6f}' for v in vec)}]")
        print("  cumulative decision mismatches (slot: count):")
        print("    " + ", ".join(f"{t}: {c}" for t, c in res["cumulative_mismatches"]))
        print("  running average loss vs anytime bound:")
        for t, avg, bound in res["loss_curve"]:
            print(f"    {t:>9}: avg {avg:.3e}  bound {bound:.3e}")
        print(
            f"  mismatches {stats['mismatches']} (last at slot {stats['last_mismatch_slot']}), "
            f"mean loss {stats['mean_loss']:.3e}, grid agreement {stats['grid_agreement']:.4f}"
        )
        print(f"  final estimate rows: {stats['estimate']}")
        print(f"  wrote {res['metrics_path']} and {res['estimate_path']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
