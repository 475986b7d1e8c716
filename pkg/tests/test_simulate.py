import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conesched import (
    ConeScheduler,
    DeterministicArrivals,
    ExpertValidationError,
    GeometricArrivals,
    InputError,
    SimConfig,
    TraceArrivals,
    TraceFormatError,
    TriangularParams,
    half_switch_arrivals,
    replay_trace,
    sample_geometric,
    simulate_expert,
    step_dynamics,
)
from conesched.simulate import queue_stream
from helpers import demo_expert, demo_schedule_set


class TestGeometricSampling:
    def test_zero_mean_is_always_zero(self):
        stream = queue_stream(7, 0)
        assert all(sample_geometric(0.0, stream) == 0 for _ in range(100))

    def test_negative_mean_rejected(self):
        with pytest.raises(InputError):
            sample_geometric(-1.0, queue_stream(7, 0))

    def test_success_parameter(self):
        # mean m maps to q = m/(1+m): mean 1 -> 1/2, mean 2 -> 2/3
        stream = queue_stream(123, 0)
        draws = np.array([sample_geometric(1.0, stream) for _ in range(200000)])
        assert np.mean(draws == 0) == pytest.approx(0.5, abs=0.005)
        assert draws.mean() == pytest.approx(1.0, abs=0.02)
        draws = np.array([sample_geometric(2.0, stream) for _ in range(200000)])
        assert np.mean(draws == 0) == pytest.approx(1.0 / 3.0, abs=0.005)
        assert draws.mean() == pytest.approx(2.0, abs=0.03)

    def test_vectorized_matches_scalar_stream(self):
        model = GeometricArrivals([1.0, 2.0])
        counts = model.generate(500, seed=42)
        for queue, mean in enumerate([1.0, 2.0]):
            stream = queue_stream(42, queue)
            scalar = np.array([sample_geometric(mean, stream) for _ in range(500)])
            assert np.array_equal(counts[:, queue], scalar)

    def test_streams_invariant_to_queue_count(self):
        # queue 0's arrivals don't change when more queues exist
        a = GeometricArrivals([1.0]).generate(200, seed=9)
        b = GeometricArrivals([1.0, 2.0, 0.5]).generate(200, seed=9)
        assert np.array_equal(a[:, 0], b[:, 0])

    def test_demo_scale_arrival_means(self):
        # mean-2 queue over 1e6 slots: SE = sqrt(q/(1-q)^2 / T) = sqrt(6e-6)
        counts = GeometricArrivals([1.0, 2.0]).generate(10**6, seed=12345)
        se1 = math.sqrt(2.0 / 10**6)
        se2 = math.sqrt(6.0 / 10**6)
        assert abs(counts[:, 0].mean() - 1.0) < 3 * se1
        assert abs(counts[:, 1].mean() - 2.0) < 3 * se2


class TestArrivalModels:
    def test_deterministic_same_every_slot(self):
        counts = DeterministicArrivals([2, 0]).generate(5, seed=1)
        assert np.array_equal(counts, np.tile([2, 0], (5, 1)))

    def test_trace_arrivals_checked(self):
        model = TraceArrivals([[1, 0], [0, 1]])
        assert np.array_equal(model.generate(2, seed=0), [[1, 0], [0, 1]])
        with pytest.raises(InputError):
            model.generate(3, seed=0)

    def test_half_switch_fixture(self):
        model = half_switch_arrivals(3, 10, burst=2)
        counts = model.generate(10, seed=0)
        assert np.all(counts[:5, 0] == 2)
        assert np.all(counts[:5, 1:] == 0)
        assert np.all(counts[5:, 2] == 3)
        assert np.all(counts[5:, :2] == 0)

    def test_rejects_negative(self):
        with pytest.raises(InputError):
            GeometricArrivals([1.0, -0.5])
        with pytest.raises(InputError):
            DeterministicArrivals([-1, 0])


class TestStepDynamics:
    def test_spec_cases(self):
        d, x_next = step_dynamics([1, 0], [2, 1], [0, 2])
        assert np.array_equal(d, [1, 0])
        assert np.array_equal(x_next, [0, 2])

        d, x_next = step_dynamics([0, 0, 0], [5, 5, 5], [0, 0, 0])
        assert np.array_equal(d, [0, 0, 0])
        assert np.array_equal(x_next, [0, 0, 0])

        d, x_next = step_dynamics([3, 5], [2, 1], [1, 1])
        assert np.array_equal(d, [2, 1])
        assert np.array_equal(x_next, [2, 5])

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            step_dynamics([1, 2], [1, 2, 3], [0, 0])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=80, deadline=None)
    def test_conservation_and_nonnegativity(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        x = rng.integers(0, 20, size=n)
        s = rng.integers(0, 5, size=n)
        a = rng.integers(0, 5, size=n)
        d, x_next = step_dynamics(x, s, a)
        assert np.all(d <= x)
        assert np.all(d <= s)
        assert np.all(x_next >= 0)
        assert np.array_equal(x_next - x, a - d)


class TestSimulateExpert:
    def test_empty_system_fixed_point(self):
        n = 2
        params = TriangularParams.diagonal([0.5, 0.5])
        sched = demo_schedule_set()
        expert = ConeScheduler(params, sched)
        config = SimConfig(
            expert=expert, arrivals=DeterministicArrivals([0, 0]), horizon=50, seed=3
        )
        trace = simulate_expert(config)
        assert np.all(trace.backlogs == 0)
        assert np.all(trace.decisions == 0)  # zero scores, first config wins
        assert np.all(trace.departures == 0)

    def test_bit_identical_reruns(self):
        config = SimConfig(
            expert=demo_expert(), arrivals=GeometricArrivals([1.0, 2.0]), horizon=2000, seed=99
        )
        a = simulate_expert(config)
        b = simulate_expert(config)
        assert np.array_equal(a.backlogs, b.backlogs)
        assert np.array_equal(a.normalized, b.normalized)
        assert np.array_equal(a.decisions, b.decisions)
        assert np.array_equal(a.arrivals, b.arrivals)

    def test_decisions_match_expert_policy(self):
        config = SimConfig(
            expert=demo_expert(), arrivals=GeometricArrivals([1.0, 2.0]), horizon=500, seed=5
        )
        trace = simulate_expert(config)
        expert = demo_expert()
        for t in range(0, 500, 37):
            assert np.array_equal(
                trace.schedule_set.configs[trace.decisions[t]],
                expert.decide(trace.backlogs[t]),
            )

    def test_dynamics_recorded_consistently(self):
        config = SimConfig(
            expert=demo_expert(), arrivals=GeometricArrivals([1.0, 2.0]), horizon=300, seed=6
        )
        trace = simulate_expert(config)
        configs = trace.schedule_set.configs
        for t in range(299):
            d = np.minimum(configs[trace.decisions[t]], trace.backlogs[t])
            assert np.array_equal(d, trace.departures[t])
            assert np.array_equal(
                trace.backlogs[t + 1], trace.backlogs[t] - d + trace.arrivals[t]
            )

    def test_invalid_expert_rejected(self):
        bad = ConeScheduler(TriangularParams(2, [0.1, 0.8, 0.1]), demo_schedule_set())
        config = SimConfig(
            expert=bad, arrivals=GeometricArrivals([1.0, 2.0]), horizon=10, seed=0
        )
        with pytest.raises(ExpertValidationError):
            simulate_expert(config)

    def test_sim_config_validation(self):
        expert = demo_expert()
        with pytest.raises(InputError):
            SimConfig(expert=expert, arrivals=GeometricArrivals([1.0, 2.0]), horizon=0)
        with pytest.raises(InputError):
            SimConfig(
                expert=expert, arrivals=GeometricArrivals([1.0]), horizon=5
            )
        with pytest.raises(InputError):
            SimConfig(
                expert=expert,
                arrivals=GeometricArrivals([1.0, 2.0]),
                horizon=5,
                x0=[1, -1],
            )


class TestReplay:
    def test_round_trip_from_simulation(self):
        config = SimConfig(
            expert=demo_expert(), arrivals=GeometricArrivals([1.0, 2.0]), horizon=400, seed=8
        )
        trace = simulate_expert(config)
        replayed = replay_trace(trace.records(), trace.schedule_set)
        assert np.array_equal(replayed.states, trace.normalized)
        assert np.array_equal(replayed.decisions, trace.decisions)

    def test_decision_outside_set_reports_record(self):
        records = [
            {"t": 0, "x": [1, 0], "s": [1, 0]},
            {"t": 1, "x": [1, 1], "s": [7, 7]},
        ]
        with pytest.raises(TraceFormatError) as err:
            replay_trace(records, demo_schedule_set())
        assert "record 1" in str(err.value)
        assert "[7, 7]" in str(err.value)

    def test_irregular_timestamps_pass_through(self):
        records = [
            {"t": 1, "x": [1, 0], "s": [1, 0]},
            {"t": 2, "x": [0, 1], "s": [0, 2]},
            {"t": 10, "x": [2, 2], "s": [2, 1]},
            {"t": 11, "x": [0, 0], "s": [0, 0]},
        ]
        batch = replay_trace(records, demo_schedule_set())
        assert len(batch) == 4
        assert batch.labels == [1, 2, 10, 11]

    def test_normalized_states_accepted(self):
        records = [{"t": 0, "y": [0.25, 0.75], "s": [0, 2]}]
        batch = replay_trace(records, demo_schedule_set())
        assert np.allclose(batch.states[0], [0.25, 0.75])

    def test_badly_normalized_state_rejected(self):
        records = [{"t": 0, "y": [0.4, 0.4], "s": [0, 2]}]
        with pytest.raises(TraceFormatError) as err:
            replay_trace(records, demo_schedule_set())
        assert "record 0" in str(err.value)

    def test_missing_fields_reported(self):
        with pytest.raises(TraceFormatError):
            replay_trace([{"t": 0, "x": [1, 0]}], demo_schedule_set())
        with pytest.raises(TraceFormatError):
            replay_trace([{"t": 0, "s": [1, 0]}], demo_schedule_set())

    def test_dimension_mismatch_reported(self):
        with pytest.raises(TraceFormatError) as err:
            replay_trace([{"t": 0, "x": [1, 0, 0], "s": [1, 0]}], demo_schedule_set())
        assert "record 0" in str(err.value)
