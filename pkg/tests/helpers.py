"""Shared generators and independent oracles for the test suite."""

import math

import numpy as np

from conesched import (
    ConeScheduler,
    ScheduleSet,
    TriangularParams,
    matrix_form_score,
    normalize_backlog,
    pair_sign,
    params_to_matrix,
    triangular_pairs,
)


def demo_schedule_set() -> ScheduleSet:
    return ScheduleSet([[0, 0], [1, 0], [2, 1], [0, 2]])


def demo_params() -> TriangularParams:
    return TriangularParams.from_upper_rows([[0.5, 0.3], [0.2]])


def demo_expert() -> ConeScheduler:
    return ConeScheduler(demo_params(), demo_schedule_set())


def random_expert_params(rng: np.random.Generator, n: int, diagonal=False) -> TriangularParams:
    """Random valid expert: diagonally dominant, hence positive-definite."""
    off = np.triu(rng.uniform(0.0, 1.0, size=(n, n)), 1)
    off *= rng.random((n, n)) < 0.6
    if diagonal:
        off[:] = 0.0
    diag = off.sum(axis=0) + off.sum(axis=1) + rng.uniform(0.2, 1.2, size=n)
    entries = {}
    for i, j in triangular_pairs(n):
        entries[(i, j)] = diag[i - 1] if i == j else off[i - 1, j - 1]
    params = TriangularParams.from_pairs(n, entries)
    return params.normalized()


def random_schedule_set(rng: np.random.Generator, n: int, size: int) -> ScheduleSet:
    """Distinct nonnegative integer configurations, order preserved as drawn."""
    size = min(size, 4**n)  # entries live in {0..3}; can't ask for more
    rows = []
    seen = set()
    while len(rows) < size:
        row = tuple(int(v) for v in rng.integers(0, 4, size=n))
        if row not in seen:
            seen.add(row)
            rows.append(list(row))
    return ScheduleSet(rows)


def random_positive_params(rng: np.random.Generator, n: int) -> TriangularParams:
    return TriangularParams(n, rng.uniform(0.05, 1.0, size=n * (n + 1) // 2))


def oracle_score(config, y, params: TriangularParams) -> float:
    """Term-by-term score via exact-sum accumulation; independent of the
    package's order-pinned evaluation path."""
    terms = []
    for i, j in triangular_pairs(params.n):
        terms.append(
            pair_sign(i, j, params.n)
            * params.entry(i, j)
            * (config[i - 1] * y[j - 1] + config[j - 1] * y[i - 1])
        )
    return math.fsum(terms)


def brute_force_matrix_argmax(x, params: TriangularParams, schedule_set: ScheduleSet) -> int:
    """First maximizer of the matrix-form score <s, B x>, scanned in set order."""
    B = params_to_matrix(params)
    y = normalize_backlog(np.asarray(x, dtype=np.float64))
    best_idx = 0
    best = matrix_form_score(schedule_set.configs[0], y, B)
    for idx in range(1, len(schedule_set)):
        value = matrix_form_score(schedule_set.configs[idx], y, B)
        if value > best:
            best = value
            best_idx = idx
    return best_idx


def observations_from_policy(params: TriangularParams, schedule_set: ScheduleSet, backlogs):
    """Label raw backlogs with the policy's decision indices (no queue dynamics)."""
    from conesched import best_config_index

    states = []
    decisions = []
    for x in backlogs:
        y = normalize_backlog(np.asarray(x, dtype=np.float64))
        states.append(y)
        decisions.append(best_config_index(y, params, schedule_set))
    return np.asarray(states), np.asarray(decisions, dtype=np.int64)
