"""File formats: run configs, trace files, metrics CSV, checkpoints, estimates.

Formats are chosen for reproducibility: traces are line-delimited JSON with a
header record, metrics are CSV with floats at 17 significant digits, and
checkpoints/estimates are JSON whose floats round-trip bit-exactly. Identical
runs produce byte-identical files.
"""

import json

import numpy as np
import yaml

from .errors import CheckpointError, RunConfigError, TraceFormatError
from .learner import ScheduleImitator
from .policy import ConeScheduler, ScheduleSet, TriangularParams
from .simulate import (
    DeterministicArrivals,
    GeometricArrivals,
    ObservationBatch,
    Trace,
    TraceArrivals,
    replay_trace,
)

CONFIG_SCHEMA = "conesched/1"
TRACE_SCHEMA = "conesched-trace/1"
CHECKPOINT_SCHEMA = "conesched-checkpoint/1"
ESTIMATE_SCHEMA = "conesched-estimate/1"

METRICS_HEADER = "t,loss,cum_avg_loss,bound_finite,bound_infinite,mismatch,delta_inf,eta,epoch"


def fmt_float(value) -> str:
    """17-significant-digit decimal form; round-trips any float64 exactly."""
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "schema",
    "mode",
    "n",
    "schedule_set",
    "expert",
    "arrivals",
    "horizon",
    "x0",
    "seed",
    "learner",
    "outputs",
    "metrics_every",
    "checkpoint_every",
}
_LEARNER_KEYS = {"algorithm", "variant", "params"}
_ARRIVAL_KEYS = {"kind", "means", "per_slot", "counts"}
_EXPERT_KEYS = {"params"}
_OUTPUT_KEYS = {"trace", "metrics", "estimate", "checkpoint"}


class RunConfig:
    """Validated run description shared by the CLI commands."""

    def __init__(
        self,
        schedule_set,
        expert=None,
        arrivals=None,
        horizon=None,
        x0=None,
        seed=0,
        algorithm="anytime",
        variant="multiplicative",
        param_mode="full",
        outputs=None,
        metrics_every=0,
        checkpoint_every=0,
        mode=None,
    ):
        self.schedule_set = schedule_set
        self.expert = expert
        self.arrivals = arrivals
        self.horizon = horizon
        self.x0 = x0
        self.seed = seed
        self.algorithm = algorithm
        self.variant = variant
        self.param_mode = param_mode
        self.outputs = outputs or {}
        self.metrics_every = metrics_every
        self.checkpoint_every = checkpoint_every
        self.mode = mode

    def cadence(self) -> int:
        if self.metrics_every > 0:
            return self.metrics_every
        if self.horizon:
            return max(1, self.horizon // 1000)
        return 1

    def build_learner(self) -> ScheduleImitator:
        horizon = self.horizon if self.algorithm == "fixed" else None
        return ScheduleImitator(
            schedule_set=self.schedule_set,
            horizon=horizon,
            variant=self.variant,
            param_mode=self.param_mode,
        )


def _require(condition, message):
    if not condition:
        raise RunConfigError(message)


def _check_keys(mapping, allowed, where):
    _require(isinstance(mapping, dict), f"{where}: expected a mapping")
    for key in mapping:
        if key not in allowed:
            raise RunConfigError(f"{where}: unknown key {key!r}")


def parse_run_config(raw: dict, overrides: dict = None) -> RunConfig:
    """Build a RunConfig from a plain dict (parsed YAML), applying overrides.

    Unknown keys anywhere are errors; all cross-field dimension checks run
    before anything else starts (fail fast).
    """
    _check_keys(raw, _TOP_KEYS, "config")
    _require(raw.get("schema") == CONFIG_SCHEMA, f"config: schema must be {CONFIG_SCHEMA!r}")
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("variant", "params"):
            raw.setdefault("learner", {})
            raw["learner"] = dict(raw["learner"])
            raw["learner"][key] = value
        else:
            raw[key] = value

    _require("schedule_set" in raw, "config: missing key 'schedule_set'")
    try:
        schedule_set = ScheduleSet(raw["schedule_set"])
    except Exception as exc:
        raise RunConfigError(f"config: schedule_set: {exc}") from None
    n = schedule_set.n
    if "n" in raw:
        _require(int(raw["n"]) == n, f"config: n={raw['n']} but schedule_set has {n} queues")

    expert = None
    if "expert" in raw and raw["expert"] is not None:
        _check_keys(raw["expert"], _EXPERT_KEYS, "config: expert")
        _require("params" in raw["expert"], "config: expert: missing key 'params'")
        try:
            params = TriangularParams.from_upper_rows(raw["expert"]["params"])
            expert = ConeScheduler(params, schedule_set)
        except Exception as exc:
            raise RunConfigError(f"config: expert: {exc}") from None

    arrivals = None
    if "arrivals" in raw and raw["arrivals"] is not None:
        spec = raw["arrivals"]
        _check_keys(spec, _ARRIVAL_KEYS, "config: arrivals")
        kind = spec.get("kind")
        try:
            if kind == "geometric":
                arrivals = GeometricArrivals(spec["means"])
            elif kind == "deterministic":
                arrivals = DeterministicArrivals(spec["per_slot"])
            elif kind == "trace":
                arrivals = TraceArrivals(spec["counts"])
            else:
                raise RunConfigError(f"config: arrivals: unknown kind {kind!r}")
        except KeyError as exc:
            raise RunConfigError(f"config: arrivals: missing key {exc.args[0]!r}") from None
        except RunConfigError:
            raise
        except Exception as exc:
            raise RunConfigError(f"config: arrivals: {exc}") from None
        _require(
            arrivals.n == n,
            f"config: arrivals cover {arrivals.n} queues, schedule_set has {n}",
        )

    horizon = raw.get("horizon")
    if horizon is not None:
        horizon = int(horizon)
        _require(horizon >= 1, "config: horizon must be at least 1")

    x0 = None
    if "x0" in raw and raw["x0"] is not None:
        x0 = np.asarray(raw["x0"], dtype=np.int64)
        _require(
            x0.shape == (n,) and not np.any(x0 < 0),
            f"config: x0 must be a nonnegative integer vector of length {n}",
        )

    seed = int(raw.get("seed", 0))
    _require(0 <= seed < 2**64, "config: seed must fit in 64 unsigned bits")

    learner = raw.get("learner", {}) or {}
    _check_keys(learner, _LEARNER_KEYS, "config: learner")
    algorithm = learner.get("algorithm", "anytime")
    _require(algorithm in ("anytime", "fixed"), "config: learner: algorithm must be 'anytime' or 'fixed'")
    variant = learner.get("variant", "multiplicative")
    _require(
        variant in ("multiplicative", "hedge"),
        "config: learner: variant must be 'multiplicative' or 'hedge'",
    )
    param_mode = learner.get("params", "full")
    _require(param_mode in ("full", "diagonal"), "config: learner: params must be 'full' or 'diagonal'")

    mode = raw.get("mode")
    if mode is not None:
        _require(
            mode in ("simulate", "learn", "evaluate", "demo"),
            "config: mode must be simulate, learn, evaluate, or demo",
        )

    outputs = raw.get("outputs") or {}
    _check_keys(outputs, _OUTPUT_KEYS, "config: outputs")
    for key, value in outputs.items():
        _require(isinstance(value, str) and value, f"config: outputs: {key} must be a path")

    metrics_every = int(raw.get("metrics_every", 0))
    checkpoint_every = int(raw.get("checkpoint_every", 0))
    _require(metrics_every >= 0, "config: metrics_every must be nonnegative")
    _require(checkpoint_every >= 0, "config: checkpoint_every must be nonnegative")

    return RunConfig(
        schedule_set=schedule_set,
        expert=expert,
        arrivals=arrivals,
        horizon=horizon,
        x0=x0,
        seed=seed,
        algorithm=algorithm,
        variant=variant,
        param_mode=param_mode,
        outputs=dict(outputs),
        metrics_every=metrics_every,
        checkpoint_every=checkpoint_every,
        mode=mode,
    )


def load_run_config(path, overrides: dict = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            raw = yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            raise RunConfigError(f"config: not valid YAML: {exc}") from None
    _require(isinstance(raw, dict), "config: top level must be a mapping")
    return parse_run_config(raw, overrides)


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_trace(path, trace: Trace) -> None:
    """Line-delimited trace: one header record, then one record per slot."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(
            _dump(
                {
                    "schema": TRACE_SCHEMA,
                    "n": trace.n,
                    "schedule_set": trace.schedule_set.configs.tolist(),
                    "seed": int(trace.seed),
                }
            )
            + "\n"
        )
        configs = trace.schedule_set.configs
        for t in range(trace.horizon):
            handle.write(
                _dump(
                    {
                        "t": t,
                        "x": trace.backlogs[t].tolist(),
                        "s": configs[trace.decisions[t]].tolist(),
                        "a": trace.arrivals[t].tolist(),
                        "d": trace.departures[t].tolist(),
                    }
                )
                + "\n"
            )


def read_trace_header(path) -> ScheduleSet:
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline()
    if not first:
        raise TraceFormatError("trace file is empty")
    header = _parse_json_line(first, 0)
    if header.get("schema") != TRACE_SCHEMA:
        raise TraceFormatError(f"trace header schema must be {TRACE_SCHEMA!r}")
    if "schedule_set" not in header or "n" not in header:
        raise TraceFormatError("trace header needs 'n' and 'schedule_set'")
    schedule_set = ScheduleSet(header["schedule_set"])
    if schedule_set.n != int(header["n"]):
        raise TraceFormatError("trace header 'n' disagrees with its schedule_set")
    return schedule_set


def _parse_json_line(line: str, record_no: int) -> dict:
    try:
        parsed = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"invalid JSON: {exc}", line=record_no) from None
    if not isinstance(parsed, dict):
        raise TraceFormatError("expected a JSON object", line=record_no)
    return parsed


def iter_trace_records(path):
    """Yield the per-slot records of a trace file as dicts, skipping the header."""
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle):
            if line_no == 0:
                continue
            if line.strip() == "":
                continue
            yield _parse_json_line(line, line_no - 1)


def read_observations(path) -> ObservationBatch:
    """Load a trace file into learner-ready observations (validated)."""
    schedule_set = read_trace_header(path)
    return replay_trace(iter_trace_records(path), schedule_set)


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------


def metrics_row(t, loss, cum_avg, bound_finite, bound_infinite, mismatch, delta_inf, eta, epoch) -> str:
    def opt(value):
        return "" if value is None else fmt_float(value)

    return ",".join(
        [
            str(int(t)),
            opt(loss),
            opt(cum_avg),
            opt(bound_finite),
            opt(bound_infinite),
            str(int(mismatch)),
            fmt_float(delta_inf),
            fmt_float(eta),
            "" if epoch is None else str(int(epoch)),
        ]
    )


def write_metrics(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(METRICS_HEADER + "\n")
        for row in rows:
            handle.write(row + "\n")


# ---------------------------------------------------------------------------
# checkpoints and estimates
# ---------------------------------------------------------------------------


def save_checkpoint(path, learner: ScheduleImitator, cum_loss=None, n_mismatch=0) -> None:
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "learner": learner.state_dict(),
        "cum_loss": None if cum_loss is None else float(cum_loss),
        "n_mismatch": int(n_mismatch),
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle)
        handle.write("\n")


def load_checkpoint(path) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"checkpoint schema must be {CHECKPOINT_SCHEMA!r}")
    if "learner" not in payload:
        raise CheckpointError("checkpoint missing learner state")
    return payload


def save_estimate(path, learner: ScheduleImitator, stats: dict = None) -> None:
    estimate = learner.estimate_
    payload = {
        "schema": ESTIMATE_SCHEMA,
        "n": estimate.n,
        "param_mode": learner.param_mode,
        "params": estimate.to_upper_rows(),
        "slots_seen": int(learner.t_),
        "stats": stats or {},
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_estimate(path) -> TriangularParams:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("schema") != ESTIMATE_SCHEMA:
        raise RunConfigError(f"estimate schema must be {ESTIMATE_SCHEMA!r}")
    return TriangularParams.from_upper_rows(payload["params"])
