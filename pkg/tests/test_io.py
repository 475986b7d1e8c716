import json

import numpy as np
import pytest
import yaml

from conesched import (
    CheckpointError,
    GeometricArrivals,
    RunConfigError,
    ScheduleImitator,
    SimConfig,
    TraceFormatError,
    simulate_expert,
)
from conesched.io import (
    METRICS_HEADER,
    fmt_float,
    load_checkpoint,
    load_estimate,
    load_run_config,
    metrics_row,
    parse_run_config,
    read_observations,
    read_trace_header,
    save_checkpoint,
    save_estimate,
    write_metrics,
    write_trace,
)
from conesched.presets import two_queue_demo_config
from helpers import demo_expert, demo_schedule_set


def small_config_dict(**extra):
    raw = two_queue_demo_config()
    raw["horizon"] = 500
    raw.update(extra)
    return raw


class TestRunConfig:
    def test_preset_parses(self):
        config = parse_run_config(two_queue_demo_config())
        assert config.schedule_set.n == 2
        assert config.expert is not None
        assert config.arrivals.kind == "geometric"
        assert config.horizon == 10**6
        assert config.seed == 12345
        assert config.algorithm == "anytime"

    def test_unknown_top_level_key(self):
        raw = small_config_dict(bogus=1)
        with pytest.raises(RunConfigError) as err:
            parse_run_config(raw)
        assert "bogus" in str(err.value)

    def test_unknown_nested_key(self):
        raw = small_config_dict()
        raw["learner"] = {"algorithm": "anytime", "oops": True}
        with pytest.raises(RunConfigError) as err:
            parse_run_config(raw)
        assert "oops" in str(err.value)

    def test_missing_schedule_set(self):
        raw = small_config_dict()
        del raw["schedule_set"]
        with pytest.raises(RunConfigError):
            parse_run_config(raw)

    def test_wrong_schema(self):
        raw = small_config_dict(schema="other/9")
        with pytest.raises(RunConfigError):
            parse_run_config(raw)

    def test_cross_field_dimension_checks(self):
        raw = small_config_dict()
        raw["arrivals"] = {"kind": "geometric", "means": [1.0]}
        with pytest.raises(RunConfigError):
            parse_run_config(raw)
        raw = small_config_dict(n=3)
        with pytest.raises(RunConfigError):
            parse_run_config(raw)
        raw = small_config_dict(x0=[1, 2, 3])
        with pytest.raises(RunConfigError):
            parse_run_config(raw)

    def test_overrides(self):
        config = parse_run_config(
            small_config_dict(), overrides={"seed": 7, "horizon": 250, "variant": "hedge"}
        )
        assert config.seed == 7
        assert config.horizon == 250
        assert config.variant == "hedge"

    def test_bad_learner_values(self):
        raw = small_config_dict()
        raw["learner"] = {"algorithm": "sometimes"}
        with pytest.raises(RunConfigError):
            parse_run_config(raw)

    def test_bad_arrival_kind(self):
        raw = small_config_dict()
        raw["arrivals"] = {"kind": "quantum"}
        with pytest.raises(RunConfigError):
            parse_run_config(raw)

    def test_load_from_yaml_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(small_config_dict()))
        config = load_run_config(path)
        assert config.horizon == 500

    def test_mode_field(self):
        config = parse_run_config(small_config_dict(mode="simulate"))
        assert config.mode == "simulate"
        with pytest.raises(RunConfigError):
            parse_run_config(small_config_dict(mode="banana"))

    def test_cadence_auto(self):
        config = parse_run_config(small_config_dict())
        assert config.cadence() == 1  # 500 // 1000 -> max(1, 0)
        config = parse_run_config(small_config_dict(horizon=10**6))
        assert config.cadence() == 1000
        config = parse_run_config(small_config_dict(metrics_every=17))
        assert config.cadence() == 17


class TestTraceFiles:
    def make_trace(self, horizon=120, seed=4):
        config = SimConfig(
            expert=demo_expert(),
            arrivals=GeometricArrivals([1.0, 2.0]),
            horizon=horizon,
            seed=seed,
        )
        return simulate_expert(config)

    def test_round_trip(self, tmp_path):
        trace = self.make_trace()
        path = tmp_path / "run.jsonl"
        write_trace(path, trace)
        batch = read_observations(path)
        assert np.array_equal(batch.states, trace.normalized)
        assert np.array_equal(batch.decisions, trace.decisions)
        assert batch.schedule_set.canonical_digest() == trace.schedule_set.canonical_digest()

    def test_byte_identical_for_same_seed(self, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        write_trace(a, self.make_trace(seed=11))
        write_trace(b, self.make_trace(seed=11))
        assert a.read_bytes() == b.read_bytes()
        write_trace(b, self.make_trace(seed=12))
        assert a.read_bytes() != b.read_bytes()

    def test_header_validation(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"schema":"nope/1"}\n')
        with pytest.raises(TraceFormatError):
            read_trace_header(path)
        path.write_text("")
        with pytest.raises(TraceFormatError):
            read_trace_header(path)
        path.write_text('{"schema":"conesched-trace/1","n":3,"schedule_set":[[0,0],[1,1]]}\n')
        with pytest.raises(TraceFormatError):
            read_trace_header(path)

    def test_corrupt_record_reports_line(self, tmp_path):
        trace = self.make_trace(horizon=5)
        path = tmp_path / "run.jsonl"
        write_trace(path, trace)
        lines = path.read_text().splitlines()
        record = json.loads(lines[3])
        record["s"] = [9, 9]
        lines[3] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceFormatError) as err:
            read_observations(path)
        assert "record 2" in str(err.value)

    def test_invalid_json_line(self, tmp_path):
        trace = self.make_trace(horizon=3)
        path = tmp_path / "run.jsonl"
        write_trace(path, trace)
        with open(path, "a") as handle:
            handle.write("{not json}\n")
        with pytest.raises(TraceFormatError) as err:
            read_observations(path)
        assert "record 3" in str(err.value)


class TestMetricsFormat:
    def test_header_fixed(self):
        assert METRICS_HEADER == "t,loss,cum_avg_loss,bound_finite,bound_infinite,mismatch,delta_inf,eta,epoch"

    def test_float_formatting_round_trips(self):
        for value in (0.1, 1 / 3, 1e-300, 123456.789, 2.0**-52):
            assert float(fmt_float(value)) == value

    def test_row_shapes(self):
        row = metrics_row(10, 0.5, 0.05, None, 0.25, True, 2.0, 0.1, 3)
        cells = row.split(",")
        assert len(cells) == 9
        assert cells[0] == "10"
        assert cells[3] == ""
        assert cells[5] == "1"
        assert cells[8] == "3"
        row = metrics_row(1, None, None, 0.5, None, False, 0.0, 0.1, None)
        cells = row.split(",")
        assert cells[1] == "" and cells[2] == "" and cells[4] == "" and cells[8] == ""

    def test_write_metrics(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics(path, [metrics_row(1, 0.0, 0.0, None, None, False, 0.0, 0.5, None)])
        lines = path.read_text().splitlines()
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 2


class TestCheckpointFiles:
    def test_round_trip_bitwise(self, tmp_path):
        learner = ScheduleImitator(demo_schedule_set()).reset()
        learner.weights_ = np.array([0.1, 1 / 3, 2.0**-40])
        learner.t_ = 17
        path = tmp_path / "ck.json"
        save_checkpoint(path, learner, cum_loss=0.125, n_mismatch=3)
        payload = load_checkpoint(path)
        assert payload["cum_loss"] == 0.125
        assert payload["n_mismatch"] == 3
        resumed = ScheduleImitator(demo_schedule_set()).load_state_dict(payload["learner"])
        assert np.array_equal(resumed.weights_, learner.weights_)
        assert resumed.t_ == 17

    def test_schema_checked(self, tmp_path):
        path = tmp_path / "ck.json"
        path.write_text('{"schema": "zzz"}')
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_estimate_round_trip(self, tmp_path):
        learner = ScheduleImitator(demo_schedule_set()).reset()
        learner.weights_ = np.array([0.5, 0.25, 0.25])
        path = tmp_path / "est.json"
        save_estimate(path, learner, stats={"note": 1})
        params = load_estimate(path)
        assert np.array_equal(params.values, learner.estimate_vector_)
        payload = json.loads(path.read_text())
        assert payload["schema"] == "conesched-estimate/1"
        assert payload["stats"] == {"note": 1}
