"""Evaluation: per-slot imitation loss, average-loss bounds, and tail bounds.

The loss for one slot penalizes the gap between the learner's decision and the
expert's, weighted by how far apart the two parameter vectors score those
decisions. It is zero whenever the decisions agree, and nonnegative whenever
both decisions are genuine argmaxes under their own parameters.

The loss here is computed as the sum of the two score gaps
    [score(pred; estimate) - score(expert_decision; estimate)]
  + [score(expert_decision; truth) - score(pred; truth)]
which is algebraically identical to the direct weighted-discrepancy sum
(``imitation_loss_direct``) but is exactly nonnegative in floating point,
because each bracket compares scores computed by the same order-pinned
routine the argmax used.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import HorizonTooShortError, InputError
from .policy import ConeScheduler, ScheduleSet, TriangularParams
from .simulate import queue_stream

__all__ = [
    "LossRecord",
    "imitation_loss",
    "imitation_loss_direct",
    "fixed_horizon_loss_bound",
    "anytime_loss_bound",
    "anytime_bound_series",
    "doubling_log2",
    "excess_loss_fraction",
    "excess_loss_fraction_bound",
    "decision_agreement",
    "backlog_grid",
    "mismatch_losses",
    "dense_losses",
    "running_average",
]


@dataclass(frozen=True)
class LossRecord:
    """Per-slot evaluation row. ``epoch`` is None outside the anytime schedule."""

    t: int
    loss: float
    mismatch: bool
    delta_inf: float
    eta: float
    epoch: int = None


def _mode_vectors(expert_params: TriangularParams, estimate: TriangularParams, param_mode: str):
    if param_mode == "full":
        return expert_params.values, estimate.values
    if param_mode == "diagonal":
        if np.any(expert_params.off_diag_values() != 0) or np.any(estimate.off_diag_values() != 0):
            raise InputError("diagonal-mode loss needs parameters with zero off-diagonals")
        return expert_params.diag_values(), estimate.diag_values()
    raise InputError(f"unknown param_mode {param_mode!r}")


def imitation_loss(
    expert_params: TriangularParams,
    estimate: TriangularParams,
    y,
    expert_config,
    predicted_config,
    schedule_set: ScheduleSet,
    param_mode: str = "full",
) -> float:
    """Loss for one slot given the true expert parameters (simulation mode)."""
    expert_idx = schedule_set.index_of(expert_config)
    pred_idx = schedule_set.index_of(predicted_config)
    if expert_idx == pred_idx:
        return 0.0
    y = np.asarray(y, dtype=np.float64)
    truth, guess = _mode_vectors(expert_params, estimate, param_mode)
    table = schedule_set.score_table(param_mode)
    under_estimate = table.scores(y, guess)
    under_truth = table.scores(y, truth)
    learner_gap = under_estimate[pred_idx] - under_estimate[expert_idx]
    expert_gap = under_truth[expert_idx] - under_truth[pred_idx]
    return float(learner_gap + expert_gap)


def imitation_loss_direct(
    expert_params: TriangularParams,
    estimate: TriangularParams,
    y,
    expert_config,
    predicted_config,
    schedule_set: ScheduleSet,
    param_mode: str = "full",
) -> float:
    """The same loss as a single weighted sum over the parameter difference.

    Agrees with ``imitation_loss`` to rounding error; kept as the independent
    cross-check of the bracket decomposition.
    """
    expert_idx = schedule_set.index_of(expert_config)
    pred_idx = schedule_set.index_of(predicted_config)
    y = np.asarray(y, dtype=np.float64)
    truth, guess = _mode_vectors(expert_params, estimate, param_mode)
    table = schedule_set.score_table(param_mode)
    configs = schedule_set.configs
    delta = (configs[pred_idx] - configs[expert_idx]).astype(np.float64)
    terms = table.discrepancy(delta, y)
    return float(np.cumsum((guess - truth) * terms)[-1])


def fixed_horizon_loss_bound(diameter: float, p_eff: int, horizon: int) -> float:
    """Average-loss guarantee for a known-horizon run: 2 D sqrt(ln(p)/T)."""
    if diameter < 0:
        raise InputError("diameter must be nonnegative")
    log_p = math.log(p_eff)
    if horizon <= 4.0 * log_p:
        raise HorizonTooShortError(
            f"horizon {horizon} must exceed 4*ln({p_eff}) = {4.0 * log_p:.6g}"
        )
    return 2.0 * diameter * math.sqrt(log_p / horizon)


def doubling_log2(t: int, first_epoch_end: int) -> int:
    """ceil(log2(2t / T_0)) computed exactly in integer arithmetic."""
    if t < first_epoch_end:
        raise InputError(f"t={t} precedes the first epoch boundary {first_epoch_end}")
    level = 0
    cap = first_epoch_end
    target = 2 * t
    while cap < target:
        cap *= 2
        level += 1
    return level


def anytime_loss_bound(diameter: float, p_eff: int, t: int, first_epoch_end: int) -> float:
    """Average-loss guarantee for the doubling schedule at prefix length t:
    2*sqrt(2) * D * ceil(log2(2t/T_0)) * sqrt(ln(p)/t).
    """
    if diameter < 0:
        raise InputError("diameter must be nonnegative")
    if p_eff < 2:
        return 0.0
    level = doubling_log2(t, first_epoch_end)
    return 2.0 * math.sqrt(2.0) * diameter * level * math.sqrt(math.log(p_eff) / t)


def anytime_bound_series(diameter: float, p_eff: int, horizon: int, first_epoch_end: int):
    """Vectorized anytime bound for every prefix t in [T_0, horizon].

    Returns (ts, bounds); the doubling level is found by integer threshold
    search so it matches ``anytime_loss_bound`` exactly at every t.
    """
    if p_eff < 2:
        ts = np.arange(1, horizon + 1)
        return ts, np.zeros(horizon)
    ts = np.arange(first_epoch_end, horizon + 1, dtype=np.int64)
    powers = [first_epoch_end]
    while powers[-1] < 2 * horizon:
        powers.append(powers[-1] * 2)
    levels = np.searchsorted(np.asarray(powers, dtype=np.int64), 2 * ts, side="left")
    bounds = 2.0 * math.sqrt(2.0) * diameter * levels * np.sqrt(math.log(p_eff) / ts)
    return ts, bounds


def excess_loss_fraction(losses, epsilon: float, bound_value: float) -> float:
    """Fraction of slots whose loss exceeds the bound by more than epsilon."""
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        return 0.0
    return float(np.mean(losses > bound_value + epsilon))


def excess_loss_fraction_bound(epsilon: float, bound_value: float) -> float:
    """Markov-style cap on the excess fraction: bound / (bound + epsilon)."""
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    if bound_value < 0:
        raise InputError("bound must be nonnegative")
    return bound_value / (bound_value + epsilon)


def decision_agreement(estimate: TriangularParams, expert: ConeScheduler, states) -> float:
    """Fraction of backlog states where estimate and expert pick the same config."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != expert.n:
        raise InputError(f"expected (k, {expert.n}) states, got {states.shape}")
    if estimate.n != expert.n:
        raise InputError("estimate and expert cover different queue counts")
    table = expert.schedule_set.score_table("full")
    totals = np.abs(states).sum(axis=1, keepdims=True)
    Y = np.divide(states, totals, out=states.copy(), where=totals > 0)
    ours = np.argmax(table.batch_scores(Y, estimate.values), axis=1)
    theirs = np.argmax(table.batch_scores(Y, expert.params.values), axis=1)
    return float(np.mean(ours == theirs))


def backlog_grid(n: int, limit: int = 20, cap: int = 20000, seed: int = 0) -> np.ndarray:
    """Backlog states {0..limit}^n, exhaustive when small, else a seeded sample."""
    count = (limit + 1) ** n
    if count <= cap:
        axes = np.indices((limit + 1,) * n)
        return axes.reshape(n, -1).T.astype(np.int64)
    stream = queue_stream(seed, 0)
    return stream.integers(0, limit + 1, size=(cap, n), dtype=np.int64)


def mismatch_losses(
    expert_params: TriangularParams,
    states,
    replay_log,
    schedule_set: ScheduleSet,
    param_mode: str = "full",
) -> np.ndarray:
    """Losses at the mismatch slots of a learning run (they are zero elsewhere).

    ``states`` is the run's full state array, indexed by global slot (so it
    must cover the whole stream even on resumed runs). Reuses the learner-side
    score gaps captured during the run and batches the expert-side gaps, so it
    matches per-slot ``imitation_loss`` bit-for-bit.
    """
    slots = replay_log.mismatch_slots
    if slots.size == 0:
        return np.empty(0)
    truth = expert_params.values if param_mode == "full" else expert_params.diag_values()
    if param_mode == "diagonal" and np.any(expert_params.off_diag_values() != 0):
        raise InputError("diagonal-mode loss needs a diagonal expert")
    table = schedule_set.score_table(param_mode)
    states = np.asarray(states, dtype=np.float64)
    Y = states[slots]
    under_truth = table.batch_scores(Y, truth)
    rows = np.arange(slots.size)
    expert_gap = (
        under_truth[rows, replay_log.expert_at_mismatch]
        - under_truth[rows, replay_log.predicted_at_mismatch]
    )
    return replay_log.learner_brackets + expert_gap


def dense_losses(horizon: int, replay_log, sparse_losses) -> np.ndarray:
    """Expand mismatch-slot losses to a per-slot array of length horizon."""
    out = np.zeros(horizon)
    out[replay_log.mismatch_slots] = sparse_losses
    return out


def running_average(values) -> np.ndarray:
    """Prefix means: cumulative sum over 1..T divided by slot number."""
    values = np.asarray(values, dtype=np.float64)
    return np.cumsum(values) / np.arange(1, values.size + 1)
