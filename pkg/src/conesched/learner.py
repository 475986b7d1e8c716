"""Online imitation of a cone scheduler via multiplicative weight updates.

``ScheduleImitator`` watches a stream of (backlog, expert decision) pairs.
Each slot it predicts the expert's decision from its current weight array,
then — only when the prediction was wrong — multiplies each weight by a factor
built from the normalized decision discrepancy and the backlog. Two update
variants are supported (``multiplicative``: w * (1 - eta*m); ``hedge``:
w * exp(-eta*m)) and two parameterizations (the full triangular array, or one
weight per queue when the expert is known to be diagonal).

The learning rate is sqrt(ln(p)/T) for a known horizon T. When no horizon is
given, the learner runs on a doubling schedule of epochs whose boundaries are
T_k = ceil(2^k * 4 * ln(p)); the rate within a segment is governed by the
previous boundary, and weights carry across segments without re-initialization.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigNotInScheduleError, HorizonTooShortError, InputError
from .policy import ScheduleSet, TriangularParams, triangular_size

__all__ = [
    "ScheduleImitator",
    "Prediction",
    "ReplayLog",
    "epoch_boundary",
    "effective_param_count",
]

_CHUNK_INIT = 16
_CHUNK_MAX = 65536
# Power-of-two rescaling bounds: scaling weights by 2**±500 is exact in
# floating point, so it never perturbs estimates, decisions, or losses.
_RESCALE_HI = 2.0**500
_RESCALE_LO = 2.0**-500


def effective_param_count(n: int, param_mode: str) -> int:
    """Number of learned weights: n(n+1)/2 in full mode, n in diagonal mode."""
    if param_mode == "full":
        return triangular_size(n)
    if param_mode == "diagonal":
        return n
    raise InputError(f"unknown param_mode {param_mode!r}")


def epoch_boundary(p_eff: int, k: int) -> int:
    """Doubling-schedule boundary T_k = ceil(2^k * 4 * ln(p_eff)); T_{-1} = 0."""
    if p_eff < 2:
        raise InputError("epoch schedule requires at least 2 parameters")
    if k < -1:
        raise InputError("epoch index must be >= -1")
    if k == -1:
        return 0
    return math.ceil((2**k) * (4.0 * math.log(p_eff)))


@dataclass(frozen=True)
class Prediction:
    """One slot's output: the normalized parameter estimate and the decision."""

    estimate: TriangularParams
    config: np.ndarray


class ReplayLog:
    """Compact record of a learning run.

    Weights change only on mismatch slots, so per-slot estimates are fully
    determined by the mismatch log; storing them sparsely keeps million-slot
    runs cheap. Slot indices are 0-based positions in the observation stream.
    """

    def __init__(self, p_eff: int, first_slot: int = 0):
        self.p_eff = p_eff
        self.first_slot = first_slot  # global slot of decisions[0] (nonzero on resume)
        self.min_weight_seen = 1.0
        self._decision_chunks = []
        self._mismatch_slots = []
        self._mismatch_preds = []
        self._mismatch_experts = []
        self._estimates = []
        self._deltas = []
        self._etas = []
        self._epochs = []
        self._learner_brackets = []

    @property
    def decisions(self) -> np.ndarray:
        if not self._decision_chunks:
            return np.empty(0, dtype=np.int64)
        if len(self._decision_chunks) > 1:
            self._decision_chunks = [np.concatenate(self._decision_chunks)]
        return self._decision_chunks[0]

    @property
    def mismatch_slots(self) -> np.ndarray:
        return np.asarray(self._mismatch_slots, dtype=np.int64)

    @property
    def predicted_at_mismatch(self) -> np.ndarray:
        return np.asarray(self._mismatch_preds, dtype=np.int64)

    @property
    def expert_at_mismatch(self) -> np.ndarray:
        return np.asarray(self._mismatch_experts, dtype=np.int64)

    @property
    def estimates_at_mismatch(self) -> np.ndarray:
        if not self._estimates:
            return np.empty((0, self.p_eff))
        return np.asarray(self._estimates)

    @property
    def delta_inf_at_mismatch(self) -> np.ndarray:
        return np.asarray(self._deltas, dtype=np.float64)

    @property
    def eta_at_mismatch(self) -> np.ndarray:
        return np.asarray(self._etas, dtype=np.float64)

    @property
    def epoch_at_mismatch(self) -> np.ndarray:
        return np.asarray(self._epochs, dtype=np.int64)

    @property
    def learner_brackets(self) -> np.ndarray:
        """Score gap (predicted minus expert) under the estimate, per mismatch."""
        return np.asarray(self._learner_brackets, dtype=np.float64)

    @property
    def n_mismatches(self) -> int:
        return len(self._mismatch_slots)


class ScheduleImitator(BaseEstimator):
    """Online learner that imitates a cone scheduler from its decisions.

    Parameters
    ----------
    schedule_set : ScheduleSet
        The finite decision set shared with the expert, including its
        tie-breaking order.
    horizon : int or None
        Total number of observation slots when known in advance; sets the
        fixed learning rate sqrt(ln(p)/horizon) and must exceed 4*ln(p).
        ``None`` selects the anytime doubling schedule.
    variant : {"multiplicative", "hedge"}
        Weight update rule: ``w * (1 - eta*m)`` or ``w * exp(-eta*m)``.
    param_mode : {"full", "diagonal"}
        Learn the full triangular array, or one weight per queue (for experts
        with no off-diagonal interaction).

    The estimator follows scikit-learn conventions: ``fit(X, y)`` consumes
    backlog rows X and expert decisions y, ``partial_fit`` continues a run
    incrementally, and ``predict(X)`` returns decisions under the current
    estimate. Learned state lives in trailing-underscore attributes.
    """

    def __init__(self, schedule_set=None, horizon=None, variant="multiplicative", param_mode="full"):
        self.schedule_set = schedule_set
        self.horizon = horizon
        self.variant = variant
        self.param_mode = param_mode

    # -- state management -------------------------------------------------

    def reset(self) -> "ScheduleImitator":
        """Initialize weights to ones and the slot counter to zero."""
        if not isinstance(self.schedule_set, ScheduleSet):
            raise InputError("schedule_set must be a ScheduleSet instance")
        if self.variant not in ("multiplicative", "hedge"):
            raise InputError(f"unknown variant {self.variant!r}")
        if self.param_mode not in ("full", "diagonal"):
            raise InputError(f"unknown param_mode {self.param_mode!r}")
        n = self.schedule_set.n
        p_eff = effective_param_count(n, self.param_mode)
        log_p = math.log(p_eff)
        if self.horizon is not None:
            horizon = int(self.horizon)
            if horizon <= 4.0 * log_p:
                raise HorizonTooShortError(
                    f"horizon {horizon} must exceed 4*ln({p_eff}) = {4.0 * log_p:.6g}"
                )
            self._eta_fixed = math.sqrt(log_p / horizon)
        else:
            self._eta_fixed = None
            if p_eff >= 2:
                self._boundaries = [epoch_boundary(p_eff, 0)]
        self._p_eff = p_eff
        self._log_p = log_p
        self._table = self.schedule_set.score_table(self.param_mode)
        self.n_features_in_ = n
        self.weights_ = np.ones(p_eff)
        self.t_ = 0
        self.replay_log_ = ReplayLog(p_eff)
        return self

    def _ensure_state(self):
        if not hasattr(self, "weights_"):
            self.reset()

    @property
    def estimate_vector_(self) -> np.ndarray:
        """Current normalized estimate as a flat array of length p_eff."""
        self._ensure_state()
        return self.weights_ / self.weights_.sum()

    @property
    def estimate_(self) -> TriangularParams:
        """Current normalized estimate as triangular parameters.

        In diagonal mode the per-queue weights are embedded with zero
        off-diagonals; decisions are unaffected by the embedding.
        """
        vec = self.estimate_vector_
        if self.param_mode == "diagonal":
            return TriangularParams.diagonal(vec)
        return TriangularParams(self.schedule_set.n, vec)

    # -- learning-rate schedule -------------------------------------------

    def _segment(self):
        """Learning rate, epoch index, and segment end (0-based, exclusive) at t_."""
        if self._eta_fixed is not None:
            return self._eta_fixed, None, int(self.horizon)
        if self._p_eff < 2:
            return 0.0, 0, None
        slot = self.t_ + 1
        while self._boundaries[-1] < slot:
            self._boundaries.append(epoch_boundary(self._p_eff, len(self._boundaries)))
        epoch = 0
        while self._boundaries[epoch] < slot:
            epoch += 1
        governing = self._boundaries[max(epoch - 1, 0)]
        eta = math.sqrt(self._log_p / governing)
        return eta, epoch, self._boundaries[epoch]

    def learning_rate_at(self, slot: int) -> float:
        """Learning rate in force at a 1-based slot number."""
        if self._eta_fixed is not None:
            return self._eta_fixed
        if self._p_eff < 2:
            return 0.0
        return math.sqrt(self._log_p / self._governing_boundary(slot))

    def epoch_at(self, slot: int) -> int:
        """Epoch (segment ordinal, 0 for the initial segment) of a 1-based slot."""
        if self._eta_fixed is not None or self._p_eff < 2:
            return 0
        epoch = 0
        while epoch_boundary(self._p_eff, epoch) < slot:
            epoch += 1
        return epoch

    def _governing_boundary(self, slot: int) -> int:
        return epoch_boundary(self._p_eff, max(self.epoch_at(slot) - 1, 0))

    # -- core update mechanics ----------------------------------------------

    def _apply_update(self, y: np.ndarray, pred_idx: int, expert_idx: int, eta: float) -> float:
        """Multiply weights by the discrepancy factors; returns ||delta||_inf."""
        configs = self.schedule_set.configs
        delta = (configs[pred_idx] - configs[expert_idx]).astype(np.float64)
        delta_inf = float(np.abs(delta).max())
        z = delta / delta_inf
        costs = self._table.discrepancy(z, y)
        if self.variant == "multiplicative":
            self.weights_ = self.weights_ * (1.0 - eta * costs)
        else:
            self.weights_ = self.weights_ * np.exp(-eta * costs)
        self._rescale()
        return delta_inf

    def _rescale(self):
        w = self.weights_
        while w.max() > _RESCALE_HI:
            w = w * _RESCALE_LO
        while w.min() < _RESCALE_LO and w.max() <= _RESCALE_HI:
            w = w * _RESCALE_HI
        self.weights_ = w

    def _advance(self, Y: np.ndarray, s_idx: np.ndarray):
        """Consume normalized observations, chunking slots between mismatches.

        Weights only move on mismatch slots, so between updates the estimate is
        constant and whole stretches can be scored in one batched call; the
        chunk size backs off to small after each mismatch and doubles while
        predictions keep matching. Outputs are bit-identical to the one-slot
        path because both share the order-pinned score evaluation.
        """
        log = self.replay_log_
        total = Y.shape[0]
        if self._eta_fixed is not None and self.t_ + total > int(self.horizon):
            raise InputError(
                f"fixed-horizon run of {self.horizon} slots cannot take {self.t_ + total}"
            )
        configs = self.schedule_set.configs
        pos = 0
        chunk = _CHUNK_INIT
        out = np.empty(total, dtype=np.int64)
        while pos < total:
            eta, epoch, seg_end = self._segment()
            take = total - pos if seg_end is None else min(total - pos, seg_end - self.t_)
            take = min(take, chunk)
            b_hat = self.weights_ / self.weights_.sum()
            scores = self._table.batch_scores(Y[pos : pos + take], b_hat)
            preds = np.argmax(scores, axis=1)
            agree = preds == s_idx[pos : pos + take]
            if agree.all():
                out[pos : pos + take] = preds
                pos += take
                self.t_ += take
                chunk = min(chunk * 2, _CHUNK_MAX)
                continue
            u = int(np.argmin(agree))
            out[pos : pos + u + 1] = preds[: u + 1]
            pred_idx = int(preds[u])
            expert_idx = int(s_idx[pos + u])
            bracket = float(scores[u, pred_idx] - scores[u, expert_idx])
            delta_inf = self._apply_update(Y[pos + u], pred_idx, expert_idx, eta)
            log.min_weight_seen = min(log.min_weight_seen, float(self.weights_.min()))
            log._mismatch_slots.append(self.t_ + u)
            log._mismatch_preds.append(pred_idx)
            log._mismatch_experts.append(expert_idx)
            log._estimates.append(b_hat)
            log._deltas.append(delta_inf)
            log._etas.append(eta)
            log._epochs.append(-1 if epoch is None else epoch)
            log._learner_brackets.append(bracket)
            pos += u + 1
            self.t_ += u + 1
            chunk = _CHUNK_INIT
        log._decision_chunks.append(out)
        return out

    # -- one-slot streaming interface ---------------------------------------

    def predict_step(self, y) -> Prediction:
        """Prediction for one normalized state under the current estimate."""
        self._ensure_state()
        y = np.asarray(y, dtype=np.float64)
        b_hat = self.weights_ / self.weights_.sum()
        idx = int(np.argmax(self._table.scores(y, b_hat)))
        return Prediction(self.estimate_, self.schedule_set.configs[idx].copy())

    def step(self, y, expert_config) -> Prediction:
        """Consume one observation: predict, then update on disagreement.

        The state ``y`` must already be normalized (see ``normalize_backlog``);
        timestamps are irrelevant, only arrival order matters, so irregularly
        spaced observation streams are fine.
        """
        self._ensure_state()
        y = np.asarray(y, dtype=np.float64)
        try:
            expert_idx = self.schedule_set.index_of(expert_config)
        except KeyError:
            raise ConfigNotInScheduleError(np.asarray(expert_config)) from None
        prediction = self.predict_step(y)
        self._advance(y[None, :], np.array([expert_idx], dtype=np.int64))
        return prediction

    # -- scikit-learn estimator surface ---------------------------------------

    def fit(self, X, y) -> "ScheduleImitator":
        """Run a complete pass over observations, resetting any previous state.

        X holds one backlog per row (raw counts or normalized); y holds the
        expert's decisions, one configuration per row. With a fixed horizon,
        exactly ``horizon`` rows are required.
        """
        self.reset()
        if self.horizon is not None and len(X) != int(self.horizon):
            raise InputError(
                f"fixed-horizon fit needs exactly {self.horizon} observations, got {len(X)}"
            )
        return self.partial_fit(X, y)

    def partial_fit(self, X, y) -> "ScheduleImitator":
        """Continue the run with additional observations (causal, in order)."""
        self._ensure_state()
        Y = self._validated_states(X)
        s_idx = self._validated_decisions(y, Y.shape[0])
        self._advance(Y, s_idx)
        return self

    def consume_normalized(self, states, decision_indices) -> np.ndarray:
        """Pipeline entry point: already-normalized states plus decision indices.

        Skips re-normalization so trace replay and live simulation feed the
        learner the exact same floats. Returns the predicted decision indices.
        """
        self._ensure_state()
        states = np.asarray(states, dtype=np.float64)
        decision_indices = np.asarray(decision_indices, dtype=np.int64)
        if states.ndim != 2 or states.shape[1] != self.schedule_set.n:
            raise InputError(f"expected (k, {self.schedule_set.n}) states, got {states.shape}")
        if decision_indices.shape != (states.shape[0],):
            raise InputError("need one decision index per state")
        if np.any(decision_indices < 0) or np.any(decision_indices >= len(self.schedule_set)):
            raise InputError("decision index out of range")
        return self._advance(states, decision_indices)

    def predict(self, X) -> np.ndarray:
        """Decisions under the current estimate, one configuration per row."""
        self._ensure_state()
        Y = self._validated_states(X)
        b_hat = self.weights_ / self.weights_.sum()
        idx = np.argmax(self._table.batch_scores(Y, b_hat), axis=1)
        return self.schedule_set.configs[idx].copy()

    def score(self, X, y) -> float:
        """Fraction of rows where the predicted decision equals y exactly."""
        predicted = self.predict(X)
        expected = np.asarray(y, dtype=np.int64)
        if expected.shape != predicted.shape:
            raise InputError(f"expected decisions of shape {predicted.shape}, got {expected.shape}")
        return float(np.all(predicted == expected, axis=1).mean())

    def _validated_states(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        n = self.schedule_set.n
        if X.ndim != 2 or X.shape[1] != n:
            raise InputError(f"expected backlog rows of length {n}, got shape {X.shape}")
        if not np.all(np.isfinite(X)) or np.any(X < 0):
            raise InputError("backlogs must be finite and nonnegative")
        totals = np.abs(X).sum(axis=1, keepdims=True)
        return np.divide(X, totals, out=X.copy(), where=totals > 0)

    def _validated_decisions(self, y, expected_rows: int) -> np.ndarray:
        y = np.asarray(y)
        if y.ndim == 1:
            y = y[None, :]
        if y.shape[0] != expected_rows:
            raise InputError(f"got {y.shape[0]} decisions for {expected_rows} states")
        indices = np.empty(y.shape[0], dtype=np.int64)
        for row_no, row in enumerate(y):
            try:
                indices[row_no] = self.schedule_set.index_of(row)
            except KeyError:
                raise ConfigNotInScheduleError(np.asarray(row), line=row_no) from None
        return indices

    # -- checkpointing ---------------------------------------------------------

    def state_dict(self) -> dict:
        """Serializable snapshot sufficient to resume the run bit-exactly."""
        self._ensure_state()
        eta, epoch, _ = self._segment()
        return {
            "weights": [float(w) for w in self.weights_],
            "t": int(self.t_),
            "epoch": epoch,
            "eta": eta,
            "variant": self.variant,
            "param_mode": self.param_mode,
            "horizon": None if self.horizon is None else int(self.horizon),
            "schedule_digest": self.schedule_set.canonical_digest(),
        }

    def load_state_dict(self, state: dict) -> "ScheduleImitator":
        """Restore a snapshot; the set, variant, mode, and horizon must match."""
        from .errors import CheckpointError

        self.reset()
        if state.get("schedule_digest") != self.schedule_set.canonical_digest():
            raise CheckpointError("checkpoint was produced with a different schedule set")
        for field in ("variant", "param_mode"):
            if state.get(field) != getattr(self, field):
                raise CheckpointError(
                    f"checkpoint {field} {state.get(field)!r} != learner {getattr(self, field)!r}"
                )
        stored_horizon = state.get("horizon")
        own_horizon = None if self.horizon is None else int(self.horizon)
        if stored_horizon != own_horizon:
            raise CheckpointError(f"checkpoint horizon {stored_horizon} != learner {own_horizon}")
        weights = np.asarray(state["weights"], dtype=np.float64)
        if weights.shape != (self._p_eff,):
            raise CheckpointError(f"expected {self._p_eff} weights, got {weights.shape}")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise CheckpointError("checkpoint weights must be finite and strictly positive")
        self.weights_ = weights
        self.t_ = int(state["t"])
        self.replay_log_ = ReplayLog(self._p_eff, first_slot=self.t_)
        return self
