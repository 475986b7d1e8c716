"""Cone-scheduling policy math: triangular parameters, scoring, and the argmax rule.

A scheduling policy is defined by a symmetric positive-definite matrix B with
non-positive off-diagonal entries. Because of the symmetry, the policy has only
p = n(n+1)/2 free parameters, kept here as a flat nonnegative array in
lexicographic (i, j) order with i <= j (the off-diagonal sign is restored by
``pair_sign``). The policy picks, among a fixed ordered set of service
configurations, the first one maximizing a bilinear score against the
normalized backlog.

Floating-point determinism contract: scores are always accumulated in
lexicographic pair order, and the argmax uses exact ``>`` comparison, so ties
resolve identically across runs, platforms, and the scalar/batched code paths.
"""

import hashlib
import json

import numpy as np

from .errors import DimensionMismatchError, ExpertValidationError, InputError

__all__ = [
    "triangular_size",
    "triangular_pairs",
    "pair_index",
    "pair_sign",
    "normalize_backlog",
    "TriangularParams",
    "ScheduleSet",
    "ConeScheduler",
    "config_score",
    "best_config",
    "best_config_index",
    "params_to_matrix",
    "matrix_form_score",
    "validate_expert",
]


def triangular_size(n: int) -> int:
    """Number of free parameters for n queues: n(n+1)/2."""
    return n * (n + 1) // 2


def triangular_pairs(n: int):
    """All 1-based index pairs (i, j) with i <= j, in lexicographic order."""
    return [(i, j) for i in range(1, n + 1) for j in range(i, n + 1)]


def pair_index(i: int, j: int, n: int) -> int:
    """Flat position of pair (i, j) in the lexicographic order."""
    if not (1 <= i <= j <= n):
        raise InputError(f"pair ({i}, {j}) out of range for n={n}")
    return (i - 1) * (n + 1) - i * (i - 1) // 2 + (j - i)


def pair_sign(i: int, j: int, n: int) -> int:
    """+1 on the diagonal (i == j), -1 off it; validates 1 <= i <= j <= n."""
    if not (1 <= i <= j <= n):
        raise InputError(f"pair ({i}, {j}) out of range for n={n}")
    return 1 if i == j else -1


def normalize_backlog(x) -> np.ndarray:
    """Scale a backlog vector to unit 1-norm; the zero vector is returned as-is."""
    x = np.asarray(x, dtype=np.float64)
    total = float(np.abs(x).sum())
    if total == 0.0:
        return x.copy()
    return x / total


class TriangularParams:
    """Nonnegative weights over the upper-triangular index pairs of n queues.

    Stores the flat value array in lexicographic (i, j) order. Used both for
    normalized policy parameters (entries summing to 1) and for raw learner
    weights (strictly positive); which invariant applies is contextual.
    """

    __slots__ = ("n", "values")

    def __init__(self, n: int, values):
        values = np.asarray(values, dtype=np.float64)
        p = triangular_size(n)
        if n < 1:
            raise InputError("need at least one queue")
        if values.shape != (p,):
            raise InputError(f"expected {p} entries for n={n}, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("entries must be finite")
        if np.any(values < 0):
            raise InputError("entries must be nonnegative")
        self.n = n
        self.values = values.copy()
        self.values.flags.writeable = False

    @classmethod
    def ones(cls, n: int) -> "TriangularParams":
        return cls(n, np.ones(triangular_size(n)))

    @classmethod
    def uniform(cls, n: int) -> "TriangularParams":
        p = triangular_size(n)
        return cls(n, np.full(p, 1.0 / p))

    @classmethod
    def from_pairs(cls, n: int, entries: dict) -> "TriangularParams":
        """Build from a {(i, j): value} mapping covering every pair exactly once."""
        values = np.zeros(triangular_size(n))
        seen = set()
        for (i, j), v in entries.items():
            if (i, j) in seen:
                raise InputError(f"duplicate pair ({i}, {j})")
            seen.add((i, j))
            values[pair_index(i, j, n)] = v
        if len(seen) != triangular_size(n):
            raise InputError(f"expected {triangular_size(n)} pairs, got {len(seen)}")
        return cls(n, values)

    @classmethod
    def from_upper_rows(cls, rows) -> "TriangularParams":
        """Build from row-major upper-triangle lists: [[b11..b1n], [b22..b2n], ...]."""
        n = len(rows)
        values = []
        for i, row in enumerate(rows):
            if len(row) != n - i:
                raise InputError(f"row {i + 1} must have {n - i} entries, got {len(row)}")
            values.extend(row)
        return cls(n, np.asarray(values, dtype=np.float64))

    @classmethod
    def diagonal(cls, diag) -> "TriangularParams":
        """Embed per-queue weights as a triangular array with zero off-diagonals."""
        diag = np.asarray(diag, dtype=np.float64)
        n = diag.shape[0]
        values = np.zeros(triangular_size(n))
        for i in range(1, n + 1):
            values[pair_index(i, i, n)] = diag[i - 1]
        return cls(n, values)

    def entry(self, i: int, j: int) -> float:
        return float(self.values[pair_index(i, j, self.n)])

    def diag_values(self) -> np.ndarray:
        return np.array([self.entry(i, i) for i in range(1, self.n + 1)])

    def off_diag_values(self) -> np.ndarray:
        return np.array([v for (i, j), v in zip(triangular_pairs(self.n), self.values) if i != j])

    def total(self) -> float:
        return float(self.values.sum())

    def normalized(self) -> "TriangularParams":
        total = self.values.sum()
        if total <= 0:
            raise InputError("cannot normalize: entries sum to zero")
        return TriangularParams(self.n, self.values / total)

    def scaled(self, c: float) -> "TriangularParams":
        return TriangularParams(self.n, self.values * c)

    def to_upper_rows(self):
        rows = []
        pos = 0
        for i in range(self.n):
            rows.append([float(v) for v in self.values[pos : pos + self.n - i]])
            pos += self.n - i
        return rows

    def __eq__(self, other):
        return (
            isinstance(other, TriangularParams)
            and self.n == other.n
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"TriangularParams(n={self.n}, values={self.values.tolist()})"


class ScheduleSet:
    """Ordered finite set of service configurations (nonnegative integer vectors).

    The list order is part of the policy definition: score ties are broken in
    favor of the earliest configuration, so the order must stay fixed for the
    lifetime of a run.
    """

    def __init__(self, configs):
        configs = np.asarray(configs)
        if configs.ndim != 2 or configs.shape[0] < 1:
            raise InputError("schedule set must be a non-empty list of vectors")
        if not np.issubdtype(configs.dtype, np.integer):
            as_int = np.asarray(configs, dtype=np.int64)
            if not np.array_equal(as_int, configs):
                raise InputError("configurations must be integer vectors")
            configs = as_int
        if np.any(configs < 0):
            raise InputError("configurations must be nonnegative")
        self.configs = configs.astype(np.int64, copy=True)
        self.configs.flags.writeable = False
        self.n = int(configs.shape[1])
        self._index = {}
        for pos, row in enumerate(self.configs):
            key = tuple(int(v) for v in row)
            if key in self._index:
                raise InputError(f"duplicate configuration {list(key)}")
            self._index[key] = pos
        self._tables = {}
        self._diameter = None

    def __len__(self):
        return self.configs.shape[0]

    def __iter__(self):
        return iter(self.configs)

    def __getitem__(self, idx):
        return self.configs[idx]

    def index_of(self, config) -> int:
        """Position of a configuration; raises KeyError if absent."""
        key = tuple(int(v) for v in np.asarray(config).ravel())
        if len(key) != self.n:
            raise DimensionMismatchError(
                f"configuration has {len(key)} entries, expected {self.n}"
            )
        if key not in self._index:
            raise KeyError(key)
        return self._index[key]

    def __contains__(self, config):
        try:
            self.index_of(config)
        except (KeyError, DimensionMismatchError):
            return False
        return True

    def diameter(self) -> float:
        """Largest infinity-norm distance between any two configurations."""
        if self._diameter is None:
            diffs = self.configs[:, None, :] - self.configs[None, :, :]
            self._diameter = float(np.abs(diffs).max()) if len(self) > 1 else 0.0
        return self._diameter

    def canonical_digest(self) -> str:
        """Stable content hash, used to guard checkpoint/trace compatibility."""
        payload = json.dumps({"n": self.n, "configs": self.configs.tolist()})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def score_table(self, param_mode: str = "full") -> "_ScoreTable":
        if param_mode not in self._tables:
            self._tables[param_mode] = _ScoreTable(self, param_mode)
        return self._tables[param_mode]

    def __repr__(self):
        return f"ScheduleSet({self.configs.tolist()})"


class _ScoreTable:
    """Precomputed gather/sign arrays for fast, order-pinned score evaluation.

    All score paths (single state, batched states) multiply identical per-term
    factors and accumulate along the parameter axis in lexicographic order via
    ``cumsum``, which matches the sequential scalar loop bit-for-bit (pinned by
    tests), so argmax tie-breaking is reproducible everywhere.
    """

    def __init__(self, schedule_set: ScheduleSet, param_mode: str = "full"):
        if param_mode not in ("full", "diagonal"):
            raise InputError(f"unknown param_mode {param_mode!r}")
        self.schedule_set = schedule_set
        self.param_mode = param_mode
        n = schedule_set.n
        self.n = n
        C = schedule_set.configs.astype(np.float64)
        self.C = C
        if param_mode == "full":
            pairs = triangular_pairs(n)
            self.I = np.array([i - 1 for i, _ in pairs])
            self.J = np.array([j - 1 for _, j in pairs])
            self.sign = np.where(self.I == self.J, 1.0, -1.0)
            self.CI = C[:, self.I]
            self.CJ = C[:, self.J]
            self.p_eff = len(pairs)
        else:
            self.p_eff = n

    def features(self, y: np.ndarray) -> np.ndarray:
        """Per-configuration term array, shape (m, p_eff)."""
        if self.param_mode == "full":
            return self.sign * (self.CI * y[self.J] + self.CJ * y[self.I])
        return self.C * y

    def batch_features(self, Y: np.ndarray) -> np.ndarray:
        """Term arrays for many states at once, shape (L, m, p_eff)."""
        if self.param_mode == "full":
            YJ = Y[:, self.J]
            YI = Y[:, self.I]
            return self.sign * (self.CI[None, :, :] * YJ[:, None, :] + self.CJ[None, :, :] * YI[:, None, :])
        return self.C[None, :, :] * Y[:, None, :]

    def scores(self, y: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Score of every configuration at state y under parameter values."""
        return np.cumsum(self.features(y) * values, axis=-1)[..., -1]

    def batch_scores(self, Y: np.ndarray, values: np.ndarray) -> np.ndarray:
        return np.cumsum(self.batch_features(Y) * values, axis=-1)[..., -1]

    def discrepancy(self, vec: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-parameter terms induced by a decision discrepancy vector."""
        if self.param_mode == "full":
            return self.sign * (vec[self.I] * y[self.J] + vec[self.J] * y[self.I])
        return vec * y


def config_score(config, y, params: TriangularParams) -> float:
    """Score of one configuration: sum over pairs i <= j of
    sign(i,j) * b(i,j) * (s(i) y(j) + s(j) y(i)), accumulated in pair order.

    Diagonal pairs therefore contribute 2 * b(i,i) * s(i) * y(i).
    """
    config = np.asarray(config, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = params.n
    if config.shape != (n,) or y.shape != (n,):
        raise DimensionMismatchError(
            f"expected length-{n} vectors, got config {config.shape} and state {y.shape}"
        )
    values = params.values
    acc = 0.0
    k = 0
    for i in range(n):
        for j in range(i, n):
            sign = 1.0 if i == j else -1.0
            acc += values[k] * (sign * (config[i] * y[j] + config[j] * y[i]))
            k += 1
    return float(acc)


def best_config_index(y, params: TriangularParams, schedule_set: ScheduleSet) -> int:
    """Index of the first configuration (in set order) with maximal score."""
    y = np.asarray(y, dtype=np.float64)
    if schedule_set.n != params.n or y.shape != (params.n,):
        raise DimensionMismatchError("state, parameters, and schedule set dimensions differ")
    if len(schedule_set) == 0:
        raise InputError("empty schedule set")
    table = schedule_set.score_table("full")
    return int(np.argmax(table.scores(y, params.values)))


def best_config(y, params: TriangularParams, schedule_set: ScheduleSet) -> np.ndarray:
    """The scheduling decision at state y: first maximizer in set order."""
    return schedule_set.configs[best_config_index(y, params, schedule_set)].copy()


def params_to_matrix(params: TriangularParams) -> np.ndarray:
    """Reconstruct the symmetric policy matrix the parameters denote.

    Off-diagonals are negated; the diagonal is doubled, because in the pairwise
    score every diagonal pair contributes its term twice (s(i)y(i) appears for
    both orderings). With this matrix, sum_{i,j} s(i) B(i,j) y(j) equals
    ``config_score`` identically, so the two argmaxes define the same policy.
    """
    n = params.n
    B = np.zeros((n, n))
    for (i, j), v in zip(triangular_pairs(n), params.values):
        if i == j:
            B[i - 1, i - 1] = 2.0 * v
        else:
            B[i - 1, j - 1] = -v
            B[j - 1, i - 1] = -v
    return B


def matrix_form_score(config, x, B) -> float:
    """Independent matrix-form evaluation sum_{i,j} s(i) B(i,j) x(j).

    Deliberately a plain double loop so it stays an independent check on
    ``config_score``; agreement is up to floating-point tolerance only.
    """
    config = np.asarray(config, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    n = B.shape[0]
    if B.shape != (n, n) or config.shape != (n,) or x.shape != (n,):
        raise DimensionMismatchError("matrix and vector dimensions differ")
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += config[i] * B[i, j] * x[j]
    return total


def validate_expert(expert: "ConeScheduler"):
    """Check an expert policy's structural requirements; returns violation messages.

    An empty list means the expert is usable: nonnegative entries, strictly
    positive diagonal, entries summing to 1 (within 1e-9), and a reconstructed
    matrix that is positive-definite (smallest eigenvalue above 1e-12).
    """
    violations = []
    params = expert.params
    if expert.schedule_set.n != params.n:
        violations.append(
            f"schedule set has {expert.schedule_set.n} queues, parameters have {params.n}"
        )
        return violations
    if np.any(params.values < 0):
        violations.append("entries must be nonnegative")
    for i in range(1, params.n + 1):
        if params.entry(i, i) <= 0:
            violations.append(f"diagonal entry not positive at ({i}, {i})")
    total = params.total()
    if abs(total - 1.0) > 1e-9:
        violations.append(f"entries sum to {total!r}, expected 1 within 1e-9")
    eigenvalues = np.linalg.eigvalsh(params_to_matrix(params))
    if eigenvalues.min() <= 1e-12:
        violations.append("not positive-definite")
    return violations


class ConeScheduler:
    """An expert scheduling policy: triangular parameters plus a schedule set."""

    def __init__(self, params: TriangularParams, schedule_set: ScheduleSet):
        if params.n != schedule_set.n:
            raise DimensionMismatchError(
                f"parameters are for {params.n} queues, schedule set for {schedule_set.n}"
            )
        self.params = params
        self.schedule_set = schedule_set

    @property
    def n(self) -> int:
        return self.params.n

    def validate(self):
        return validate_expert(self)

    def require_valid(self):
        violations = self.validate()
        if violations:
            raise ExpertValidationError(violations)
        return self

    def decide(self, backlog) -> np.ndarray:
        """Decision for one backlog vector (raw counts or already normalized)."""
        return best_config(normalize_backlog(backlog), self.params, self.schedule_set)

    def predict(self, X) -> np.ndarray:
        """Decisions for a batch of backlog vectors, one per row."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise DimensionMismatchError(f"expected (k, {self.n}) array, got {X.shape}")
        table = self.schedule_set.score_table("full")
        totals = np.abs(X).sum(axis=1, keepdims=True)
        Y = np.divide(X, totals, out=X.copy(), where=totals > 0)
        idx = np.argmax(table.batch_scores(Y, self.params.values), axis=1)
        return self.schedule_set.configs[idx].copy()

    def __repr__(self):
        return f"ConeScheduler(params={self.params!r}, schedule_set={self.schedule_set!r})"
