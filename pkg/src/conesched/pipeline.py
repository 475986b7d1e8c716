"""Composition of simulation, learning, and evaluation into runnable pipelines.

These functions are the substance behind the CLI commands; they are plain
library code so tests and notebooks can drive them directly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .io import fmt_float, metrics_row, save_checkpoint
from .learner import ScheduleImitator, effective_param_count, epoch_boundary
from .metrics import (
    anytime_loss_bound,
    backlog_grid,
    decision_agreement,
    mismatch_losses,
)
from .policy import ConeScheduler, TriangularParams
from .simulate import ObservationBatch


@dataclass
class LearnResult:
    """Outcome of one learning run plus everything needed for reporting."""

    learner: ScheduleImitator
    observations: ObservationBatch
    start_slot: int
    resume_cum_loss: float
    sparse_losses: np.ndarray = None  # at mismatch slots >= start; None w/o truth
    summary: dict = field(default_factory=dict)

    @property
    def log(self):
        return self.learner.replay_log_

    def cum_loss_upto(self, slot_count: int) -> float:
        """Cumulative loss over slots 1..slot_count, extending the resume total."""
        if self.sparse_losses is None:
            return None
        upto = np.searchsorted(self.log.mismatch_slots, slot_count, side="left")
        total = self.resume_cum_loss
        for value in self.sparse_losses[:upto]:
            total += float(value)
        return total


def learn_run(
    observations: ObservationBatch,
    *,
    algorithm: str = "anytime",
    variant: str = "multiplicative",
    param_mode: str = "full",
    expert: ConeScheduler = None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    resume_state: dict = None,
    resume_cum_loss: float = 0.0,
    resume_mismatch: int = 0,
) -> LearnResult:
    """Drive a learner over an observation stream, checkpointing on the way.

    ``observations`` always covers the full run from slot 1; on resume the
    first ``resume_state['t']`` slots are skipped, and outputs continue
    bit-identically to an uninterrupted run.
    """
    total = len(observations)
    horizon = total if algorithm == "fixed" else None
    learner = ScheduleImitator(
        schedule_set=observations.schedule_set,
        horizon=horizon,
        variant=variant,
        param_mode=param_mode,
    )
    if resume_state is not None:
        learner.load_state_dict(resume_state)
        start = learner.t_
        if start > total:
            raise InputError(f"checkpoint is at slot {start}, stream has only {total}")
    else:
        learner.reset()
        start = 0

    seg = checkpoint_every if checkpoint_every > 0 else total - start
    pos = start
    while pos < total:
        take = min(seg, total - pos)
        learner.consume_normalized(
            observations.states[pos : pos + take],
            observations.decisions[pos : pos + take],
        )
        pos += take
        if checkpoint_path is not None and pos < total:
            _checkpoint(learner, observations, expert, param_mode, checkpoint_path,
                        resume_cum_loss, resume_mismatch)

    result = LearnResult(
        learner=learner,
        observations=observations,
        start_slot=start,
        resume_cum_loss=resume_cum_loss,
    )
    if expert is not None:
        result.sparse_losses = mismatch_losses(
            expert.params,
            observations.states,
            learner.replay_log_,
            observations.schedule_set,
            param_mode,
        )
    result.summary = _summarize(result, expert, resume_mismatch)
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            learner,
            cum_loss=result.cum_loss_upto(total),
            n_mismatch=resume_mismatch + learner.replay_log_.n_mismatches,
        )
    return result


def _checkpoint(learner, observations, expert, param_mode, path, resume_cum_loss, resume_mismatch):
    cum = None
    if expert is not None:
        sparse = mismatch_losses(
            expert.params,
            observations.states,
            learner.replay_log_,
            observations.schedule_set,
            param_mode,
        )
        cum = resume_cum_loss
        for value in sparse:
            cum += float(value)
    save_checkpoint(
        path,
        learner,
        cum_loss=cum,
        n_mismatch=resume_mismatch + learner.replay_log_.n_mismatches,
    )


def _summarize(result: LearnResult, expert, resume_mismatch: int) -> dict:
    learner = result.learner
    log = learner.replay_log_
    total = learner.t_
    mismatches = resume_mismatch + log.n_mismatches
    last_mm = int(log.mismatch_slots[-1]) + 1 if log.n_mismatches else None
    summary = {
        "slots": total,
        "mismatches": mismatches,
        "last_mismatch_slot": last_mm,
        "estimate": learner.estimate_.to_upper_rows(),
    }
    p_eff = effective_param_count(learner.schedule_set.n, learner.param_mode)
    diameter = learner.schedule_set.diameter()
    if learner.horizon is not None:
        log_p = math.log(p_eff)
        summary["bound_final"] = (
            2.0 * diameter * math.sqrt(log_p / total) if total > 4.0 * log_p else None
        )
    elif p_eff >= 2:
        t0 = epoch_boundary(p_eff, 0)
        summary["bound_final"] = anytime_loss_bound(diameter, p_eff, total, t0) if total >= t0 else None
    else:
        summary["bound_final"] = 0.0
    if expert is not None:
        cum = result.cum_loss_upto(total)
        summary["mean_loss"] = cum / total if total else 0.0
        summary["max_loss"] = float(result.sparse_losses.max()) if len(result.sparse_losses) else 0.0
    return summary


def metrics_rows(result: LearnResult, cadence: int, expert_known: bool):
    """CSV rows at every `cadence`-th slot plus the final slot (1-based t)."""
    learner = result.learner
    log = learner.replay_log_
    total = learner.t_
    start = result.start_slot
    diameter = learner.schedule_set.diameter()
    p_eff = effective_param_count(learner.schedule_set.n, learner.param_mode)
    log_p = math.log(p_eff)
    anytime = learner.horizon is None
    t0 = epoch_boundary(p_eff, 0) if anytime and p_eff >= 2 else None

    slots = log.mismatch_slots
    deltas = log.delta_inf_at_mismatch
    sparse = result.sparse_losses
    cum_cache = {"idx": 0, "value": result.resume_cum_loss}

    ts = [t for t in range(cadence, total + 1, cadence) if t > start]
    if total > start and (not ts or ts[-1] != total):
        ts.append(total)
    for t in ts:
        slot0 = t - 1
        mm_pos = np.searchsorted(slots, slot0)
        is_mm = mm_pos < slots.size and slots[mm_pos] == slot0
        loss = cum_avg = None
        if expert_known and sparse is not None:
            while cum_cache["idx"] < slots.size and slots[cum_cache["idx"]] < t:
                cum_cache["value"] += float(sparse[cum_cache["idx"]])
                cum_cache["idx"] += 1
            loss = float(sparse[mm_pos]) if is_mm else 0.0
            cum_avg = cum_cache["value"] / t
        bound_fin = (
            2.0 * diameter * math.sqrt(log_p / t) if t > 4.0 * log_p and p_eff >= 2 else None
        )
        bound_inf = (
            anytime_loss_bound(diameter, p_eff, t, t0) if anytime and t0 is not None and t >= t0 else None
        )
        yield metrics_row(
            t,
            loss,
            cum_avg,
            bound_fin,
            bound_inf,
            bool(is_mm),
            float(deltas[mm_pos]) if is_mm else 0.0,
            learner.learning_rate_at(t),
            learner.epoch_at(t) if anytime else None,
        )


def estimate_trajectory(result: LearnResult, sample_slots) -> list:
    """The estimate in force at each requested 1-based slot."""
    log = result.log
    slots = log.mismatch_slots
    estimates = log.estimates_at_mismatch
    final = result.learner.estimate_vector_
    out = []
    for t in sample_slots:
        idx = np.searchsorted(slots, t - 1, side="left")
        vec = estimates[idx] if idx < slots.size else final
        out.append((t, np.asarray(vec, dtype=np.float64)))
    return out


def grid_agreement(estimate: TriangularParams, expert: ConeScheduler, limit: int = 20) -> float:
    """Decision agreement on the exhaustive (or capped) backlog grid."""
    states = backlog_grid(expert.n, limit=limit)
    return decision_agreement(estimate, expert, states.astype(np.float64))


def evaluate_fixed(
    observations: ObservationBatch,
    estimate: TriangularParams,
    expert: ConeScheduler = None,
    chunk: int = 65536,
):
    """Evaluate a frozen estimate against recorded decisions.

    Returns (rows, summary): per-slot CSV rows (loss columns only when the
    true expert is supplied) and an aggregate summary.
    """
    schedule_set = observations.schedule_set
    if estimate.n != schedule_set.n:
        raise InputError("estimate and observations cover different queue counts")
    table = schedule_set.score_table("full")
    total = len(observations)
    preds = np.empty(total, dtype=np.int64)
    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        preds[lo:hi] = np.argmax(table.batch_scores(observations.states[lo:hi], estimate.values), axis=1)
    agree = preds == observations.decisions
    diffs = schedule_set.configs[preds] - schedule_set.configs[observations.decisions]
    delta_inf = np.abs(diffs).max(axis=1).astype(np.float64)

    losses = None
    if expert is not None:
        losses = np.zeros(total)
        for lo in range(0, total, chunk):
            hi = min(lo + chunk, total)
            sc_est = table.batch_scores(observations.states[lo:hi], estimate.values)
            sc_tru = table.batch_scores(observations.states[lo:hi], expert.params.values)
            rr = np.arange(hi - lo)
            br1 = sc_est[rr, preds[lo:hi]] - sc_est[rr, observations.decisions[lo:hi]]
            br2 = sc_tru[rr, observations.decisions[lo:hi]] - sc_tru[rr, preds[lo:hi]]
            losses[lo:hi] = np.where(agree[lo:hi], 0.0, br1 + br2)

    rows = []
    cum = 0.0
    for t0 in range(total):
        cells = [str(t0 + 1)]
        if losses is not None:
            cum += float(losses[t0])
            cells.append(fmt_float(losses[t0]))
            cells.append(fmt_float(cum / (t0 + 1)))
        cells.append(str(int(agree[t0])))
        cells.append(fmt_float(delta_inf[t0]))
        rows.append(",".join(cells))
    header = "t,loss,cum_avg_loss,agree,delta_inf" if losses is not None else "t,agree,delta_inf"

    summary = {
        "slots": total,
        "agreement_on_trace": float(agree.mean()) if total else 1.0,
        "mean_delta_inf": float(delta_inf.mean()) if total else 0.0,
    }
    if expert is not None:
        summary["mean_loss"] = cum / total if total else 0.0
        summary["grid_agreement"] = grid_agreement(estimate, expert)
    return header, rows, summary
