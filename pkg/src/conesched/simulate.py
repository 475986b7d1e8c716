"""Discrete-time queueing world: arrivals, backlog dynamics, and expert traces.

Each slot the expert observes the backlog, picks a configuration from the
schedule set, up to that many customers depart per queue, and new arrivals
land. Arrivals come from pluggable models; the built-in random model draws
per-queue geometric counts from Philox counter-based streams keyed by
(seed, queue index), so every queue's arrival sequence is reproducible and
independent of how many other queues exist.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from .errors import DimensionMismatchError, InputError, TraceFormatError
from .policy import ConeScheduler, ScheduleSet, normalize_backlog

__all__ = [
    "queue_stream",
    "sample_geometric",
    "GeometricArrivals",
    "DeterministicArrivals",
    "TraceArrivals",
    "half_switch_arrivals",
    "step_dynamics",
    "SimConfig",
    "Trace",
    "TraceRecord",
    "simulate_expert",
    "ObservationBatch",
    "replay_trace",
]


def queue_stream(seed: int, queue: int) -> Generator:
    """Independent Philox stream for one queue, keyed by (seed, queue index)."""
    key = np.array([np.uint64(seed), np.uint64(queue)], dtype=np.uint64)
    return Generator(Philox(key=key))


def sample_geometric(mean: float, rng: Generator) -> int:
    """Geometric count on {0, 1, 2, ...} with the given mean, via inverse CDF.

    P(X = k) = (1 - q) q^k with q = mean / (1 + mean). Uses
    k = floor(ln(u) / ln(q)) for u uniform on (0, 1]; a zero mean is the
    degenerate all-zero distribution.
    """
    if mean < 0:
        raise InputError(f"geometric mean must be nonnegative, got {mean}")
    if mean == 0:
        return 0
    q = mean / (1.0 + mean)
    u = 1.0 - rng.random()
    return int(math.floor(math.log(u) / math.log(q)))


class GeometricArrivals:
    """Independent geometric arrivals per queue and per slot."""

    kind = "geometric"

    def __init__(self, means):
        self.means = np.asarray(means, dtype=np.float64)
        if self.means.ndim != 1 or np.any(self.means < 0) or not np.all(np.isfinite(self.means)):
            raise InputError("geometric means must be a vector of nonnegative reals")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    def generate(self, horizon: int, seed: int) -> np.ndarray:
        counts = np.empty((horizon, self.n), dtype=np.int64)
        for queue, mean in enumerate(self.means):
            stream = queue_stream(seed, queue)
            if mean == 0:
                counts[:, queue] = 0
                continue
            q = mean / (1.0 + mean)
            u = 1.0 - stream.random(horizon)
            counts[:, queue] = np.floor(np.log(u) / math.log(q)).astype(np.int64)
        return counts


class DeterministicArrivals:
    """The same fixed arrival vector every slot."""

    kind = "deterministic"

    def __init__(self, per_slot):
        self.per_slot = np.asarray(per_slot, dtype=np.int64)
        if self.per_slot.ndim != 1 or np.any(self.per_slot < 0):
            raise InputError("per-slot arrivals must be a nonnegative integer vector")

    @property
    def n(self) -> int:
        return self.per_slot.shape[0]

    def generate(self, horizon: int, seed: int) -> np.ndarray:
        return np.tile(self.per_slot, (horizon, 1))


class TraceArrivals:
    """Arrivals supplied explicitly as a (horizon, n) array."""

    kind = "trace"

    def __init__(self, counts):
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.ndim != 2 or np.any(self.counts < 0):
            raise InputError("arrival trace must be a (horizon, n) nonnegative array")

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    def generate(self, horizon: int, seed: int) -> np.ndarray:
        if horizon > self.counts.shape[0]:
            raise InputError(
                f"arrival trace has {self.counts.shape[0]} slots, run needs {horizon}"
            )
        return self.counts[:horizon].copy()


def half_switch_arrivals(n: int, horizon: int, burst: int = 3) -> TraceArrivals:
    """Adversarial deterministic fixture: all arrivals hit the first queue for
    the first half of the run, then only the last queue. Bursty and non-ergodic
    on purpose; learner guarantees must not depend on arrival statistics.
    """
    counts = np.zeros((horizon, n), dtype=np.int64)
    half = horizon // 2
    counts[:half, 0] = burst
    counts[half:, n - 1] = burst + 1
    return TraceArrivals(counts)


def step_dynamics(x, config, arrivals):
    """One slot of backlog dynamics: serve min(config, x), then add arrivals.

    Returns (departures, next backlog); entries stay nonnegative integers.
    """
    x = np.asarray(x, dtype=np.int64)
    config = np.asarray(config, dtype=np.int64)
    arrivals = np.asarray(arrivals, dtype=np.int64)
    if x.shape != config.shape or x.shape != arrivals.shape:
        raise DimensionMismatchError(
            f"shapes differ: backlog {x.shape}, config {config.shape}, arrivals {arrivals.shape}"
        )
    departures = np.minimum(config, x)
    return departures, x - departures + arrivals


@dataclass
class SimConfig:
    """Everything needed to run one expert simulation deterministically."""

    expert: ConeScheduler
    arrivals: object
    horizon: int
    x0: np.ndarray = None
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise InputError("horizon must be at least 1")
        n = self.expert.n
        if self.x0 is None:
            self.x0 = np.zeros(n, dtype=np.int64)
        self.x0 = np.asarray(self.x0, dtype=np.int64)
        if self.x0.shape != (n,) or np.any(self.x0 < 0):
            raise InputError(f"x0 must be a nonnegative integer vector of length {n}")
        if self.arrivals.n != n:
            raise DimensionMismatchError(
                f"arrival model covers {self.arrivals.n} queues, expert has {n}"
            )
        if not (0 <= int(self.seed) < 2**64):
            raise InputError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class TraceRecord:
    """One slot of a simulation trace."""

    t: int
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    a: np.ndarray
    d: np.ndarray


class Trace:
    """Columnar record of a full simulation run."""

    def __init__(self, schedule_set: ScheduleSet, backlogs, normalized, decisions, arrivals, departures, seed: int):
        self.schedule_set = schedule_set
        self.backlogs = backlogs
        self.normalized = normalized
        self.decisions = decisions  # indices into the schedule set
        self.arrivals = arrivals
        self.departures = departures
        self.seed = seed

    @property
    def horizon(self) -> int:
        return self.backlogs.shape[0]

    @property
    def n(self) -> int:
        return self.backlogs.shape[1]

    def decision_configs(self) -> np.ndarray:
        return self.schedule_set.configs[self.decisions]

    def records(self):
        configs = self.schedule_set.configs
        for t in range(self.horizon):
            yield TraceRecord(
                t=t,
                x=self.backlogs[t],
                y=self.normalized[t],
                s=configs[self.decisions[t]],
                a=self.arrivals[t],
                d=self.departures[t],
            )

    def observations(self) -> "ObservationBatch":
        return ObservationBatch(
            states=self.normalized,
            decisions=self.decisions,
            schedule_set=self.schedule_set,
            labels=list(range(self.horizon)),
        )


def simulate_expert(config: SimConfig) -> Trace:
    """Run the expert policy through the queue dynamics for the full horizon.

    Fully deterministic given the seed: arrivals are pre-drawn from the
    per-queue streams, and the expert decision each slot is the order-pinned
    argmax on the normalized backlog.
    """
    config.expert.require_valid()
    expert = config.expert
    schedule_set = expert.schedule_set
    n = expert.n
    horizon = config.horizon
    arrivals = config.arrivals.generate(horizon, config.seed)

    table = schedule_set.score_table("full")
    values = expert.params.values
    configs = schedule_set.configs

    backlogs = np.empty((horizon, n), dtype=np.int64)
    normalized = np.empty((horizon, n), dtype=np.float64)
    decisions = np.empty(horizon, dtype=np.int64)
    departures = np.empty((horizon, n), dtype=np.int64)

    x = config.x0.copy()
    zeros = np.zeros(n, dtype=np.float64)
    for t in range(horizon):
        backlogs[t] = x
        total = x.sum()
        y = x / total if total > 0 else zeros
        normalized[t] = y
        choice = int(np.argmax(table.scores(y, values)))
        decisions[t] = choice
        served = np.minimum(configs[choice], x)
        departures[t] = served
        x = x - served + arrivals[t]
    return Trace(schedule_set, backlogs, normalized, decisions, arrivals, departures, config.seed)


@dataclass
class ObservationBatch:
    """Normalized states and expert decision indices, ready for a learner."""

    states: np.ndarray
    decisions: np.ndarray
    schedule_set: ScheduleSet
    labels: list = field(default_factory=list)

    def __len__(self):
        return self.states.shape[0]

    def decision_configs(self) -> np.ndarray:
        return self.schedule_set.configs[self.decisions]

    def pairs(self):
        configs = self.schedule_set.configs
        for t in range(len(self)):
            yield self.states[t], configs[self.decisions[t]]


def replay_trace(records, schedule_set: ScheduleSet) -> ObservationBatch:
    """Turn recorded observations into learner input, validating as it goes.

    Each record must carry a backlog (raw counts under "x", or an already
    normalized state under "y") and a decision "s" from the schedule set.
    Timestamps under "t" are kept as opaque labels; slots need not be evenly
    spaced. Malformed records are reported with their position in the stream.
    """
    states = []
    decisions = []
    labels = []
    n = schedule_set.n
    for line, record in enumerate(records):
        if isinstance(record, TraceRecord):
            record = {"t": record.t, "x": record.x, "s": record.s}
        if not isinstance(record, dict):
            raise TraceFormatError(f"expected a mapping, got {type(record).__name__}", line=line)
        if "s" not in record:
            raise TraceFormatError("missing decision field 's'", line=line)
        if "x" in record:
            x = np.asarray(record["x"], dtype=np.float64)
            if x.shape != (n,):
                raise TraceFormatError(f"backlog has shape {x.shape}, expected ({n},)", line=line)
            if np.any(x < 0) or not np.all(np.isfinite(x)):
                raise TraceFormatError("backlog entries must be finite and nonnegative", line=line)
            y = normalize_backlog(x)
        elif "y" in record:
            y = np.asarray(record["y"], dtype=np.float64)
            if y.shape != (n,):
                raise TraceFormatError(f"state has shape {y.shape}, expected ({n},)", line=line)
            if np.any(y < 0) or not np.all(np.isfinite(y)):
                raise TraceFormatError("state entries must be finite and nonnegative", line=line)
            total = y.sum()
            if total != 0.0 and abs(total - 1.0) > 1e-9:
                raise TraceFormatError(
                    f"normalized state sums to {total!r}, expected 0 or 1 within 1e-9", line=line
                )
        else:
            raise TraceFormatError("record needs a backlog field 'x' or 'y'", line=line)
        try:
            decisions.append(schedule_set.index_of(record["s"]))
        except KeyError:
            offending = [int(v) for v in np.asarray(record["s"]).ravel()]
            raise TraceFormatError(f"decision {offending} not in schedule set", line=line) from None
        states.append(y)
        labels.append(record.get("t", line))
    if not states:
        return ObservationBatch(
            states=np.empty((0, n)), decisions=np.empty(0, dtype=np.int64),
            schedule_set=schedule_set, labels=[],
        )
    return ObservationBatch(
        states=np.asarray(states),
        decisions=np.asarray(decisions, dtype=np.int64),
        schedule_set=schedule_set,
        labels=labels,
    )
