import json
import os
from dataclasses import replace

import jsonschema
import numpy as np
import pytest
from hypothesis import given, strategies as st

from pfd_cardinality import bench
from pfd_cardinality.metrics import RunMetrics, normalized_error, normalized_errors
from pfd_cardinality.nn import TrainConfig, TrainHistory


def tiny(num_types=1, **kw):
    base = bench.desk_profile(num_types, teacher_frames=120, student_frames=120,
                              teacher_train=TrainConfig(batch_size=64, max_epochs=3),
                              student_train=TrainConfig(batch_size=64, max_epochs=3))
    return replace(base, **kw)


def test_normalized_error_examples():
    assert normalized_error([5.0], [5.0], 64) == 0
    assert normalized_error([64.0], [0.0], 64) == 1.0
    assert normalized_error([32.0, 0.0], [0.0, 0.0], 64) == 0.125
    with pytest.raises(ValueError):
        normalized_error([1.0, 2.0], [1.0], 64)
    np.testing.assert_array_equal(normalized_errors([[32.0, 0.0]], [[0.0, 0.0]], 64), [0.125])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
def test_run_metrics_mean(values):
    m = RunMetrics("nn", np.array(values))
    assert abs(m.mean_normalized_mse - sum(values) / len(values)) <= 1e-12


@given(runs=st.sampled_from([1, 2, 4, 8]), frames=st.sampled_from([1, 2, 4, 8, 16]),
       data=st.data())
def test_pooled_mean_equals_grand_mean(runs, frames, data):
    # dyadic values and power-of-two counts keep every sum and division exact
    ints = data.draw(st.lists(st.integers(0, 2**10), min_size=runs * frames,
                              max_size=runs * frames))
    per_frame = np.array(ints, dtype=float).reshape(runs, frames) / 2**10
    row = bench.aggregate(0, "x", list(per_frame.mean(axis=1)), per_frame.shape[1])
    assert row.mean_mse == per_frame.mean()


def test_derive_seed_stable_and_distinct():
    assert bench.derive_seed(0, 1) == bench.derive_seed(0, 1)
    assert len({bench.derive_seed(0, t) for t in range(100)}) == 100
    assert bench.derive_seed(0, 1) != bench.derive_seed(1, 1)


def test_profiles():
    desk, full = bench.desk_profile(), bench.full_profile(3)
    assert desk.teacher_frames == 10_000 and desk.student_frames == 5000
    assert full.teacher_frames == 20_000 and full.resolved_n_max == 64
    assert bench.full_profile().teacher_frames == 10_000
    assert full.plan().srcs_l == 43
    assert bench.EVAL_SCALE["full"] == (20, 2000)
    assert desk.alpha == full.alpha == 0.1
    cfg = bench.PipelineConfig.from_dict(json.loads(json.dumps(desk.to_dict())))
    assert cfg == desk


def test_experiment_config_validation():
    p = tiny()
    with pytest.raises(ValueError):
        bench.ExperimentConfig(p, "trial_length", [])
    with pytest.raises(ValueError):
        bench.ExperimentConfig(p, "budget", [1])
    with pytest.raises(ValueError):
        bench.ExperimentConfig(p, "alpha", [0.5], runs=0)


def test_point_configs():
    p = tiny()
    assert bench.ExperimentConfig(p, "trial_length", [50]).point_config(50, 3).budget == 50
    assert bench.ExperimentConfig(p, "trial_length", [50]).point_config(50, 3).seed == 3
    assert bench.ExperimentConfig(p, "jumps_k", [1]).point_config(1, 0).jumps == 1
    reuse = bench.ExperimentConfig(p, "jumps_k", [1], reuse_model=True).point_config(1, 0)
    assert reuse.jumps == p.jumps
    assert bench.ExperimentConfig(p, "alpha", [0.5]).point_config(0.5, 0).alpha == 0.5
    het = bench.ExperimentConfig(p, "num_types", [4]).point_config(4, 0)
    assert (het.num_types, het.resolved_n_max) == (4, 48)


def test_run_experiment_rows_and_determinism(tmp_path):
    exp = bench.ExperimentConfig(tiny(budget=40), "trial_length", [40, 60], runs=2, frames=30,
                                 seeds=[0, 1])
    rows = bench.run_experiment(exp)
    assert [(r.sweep_value, r.method) for r in rows] == [
        (v, m) for v in (40, 60) for m in ("nn", "srcs", "bb_aware")]
    assert all(r.runs == 4 and r.frames == 30 for r in rows)
    assert rows == bench.run_experiment(exp)


def test_alpha_sweep_reports_test_loss():
    exp = bench.ExperimentConfig(tiny(), "alpha", [0.5], runs=1, frames=20, seeds=[0, 1])
    store = bench.ModelStore()
    rows = bench.run_experiment(exp, store)
    loss = [r for r in rows if r.method == bench.TEST_LOSS_ROW]
    assert len(loss) == 1 and loss[0].runs == 2 and loss[0].mean_mse > 0
    # one teacher per seed, shared across alpha values
    bench.run_experiment(replace(exp, values=[1.0]), store)
    assert len(store._teachers) == 2


def test_jumps_sweep_reuses_one_model():
    exp = bench.ExperimentConfig(tiny(), "jumps_k", [1, 10], runs=1, frames=20,
                                 reuse_model=True)
    store = bench.ModelStore()
    bench.run_experiment(exp, store)
    assert len(store._pipelines) == 1


def test_model_store_disk_and_missing(tmp_path):
    exp = bench.ExperimentConfig(tiny(), "trial_length", [100], runs=1, frames=20)
    with pytest.raises(bench.MissingArtifactError):
        bench.run_experiment(exp, bench.ModelStore(tmp_path, train_missing=False))
    first = bench.run_experiment(exp, bench.ModelStore(tmp_path))
    again = bench.run_experiment(exp, bench.ModelStore(tmp_path, train_missing=False))
    assert first == again


def test_hetero_experiment():
    exp = bench.ExperimentConfig(tiny(3, budget=40), "trial_length", [40], runs=1, frames=15)
    rows = bench.run_experiment(exp)
    assert {r.method for r in rows} == {"nn", "t_srcs", "t_bb_aware"}


def test_evaluate_without_student():
    with pytest.raises(bench.MissingArtifactError):
        bench.evaluate(tiny(), None, 1, 10, 0)
    res = bench.evaluate(tiny(), None, 2, 10, 0, methods=["srcs"])
    assert list(res) == ["srcs"] and len(res["srcs"]) == 2


ROWS = [bench.ResultRow(50, "nn", 1.25e-3, 2e-4, 20, 2000),
        bench.ResultRow(50, "srcs", 0.1 + 0.2, 0.0, 20, 2000),
        bench.ResultRow(0.5, bench.TEST_LOSS_ROW, 1 / 3, 1e-5, 3, 0)]


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_results_round_trip(tmp_path, fmt):
    path = bench.emit_results(ROWS, fmt, tmp_path / f"r.{fmt}")
    assert bench.load_results(path) == ROWS


def test_results_json_schema(tmp_path):
    path = bench.emit_results(ROWS, "json", tmp_path / "r.json")
    jsonschema.validate(json.loads(path.read_text()), bench.RESULTS_JSON_SCHEMA)
    bad = {"columns": list(bench.RESULT_COLUMNS), "rows": [{"method": "nn"}]}
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, bench.RESULTS_JSON_SCHEMA)


def test_results_deterministic_formatting(tmp_path):
    a = bench.emit_results(ROWS, "csv", tmp_path / "a.csv").read_bytes()
    b = bench.emit_results(list(ROWS), "csv", tmp_path / "b.csv").read_bytes()
    assert a == b
    assert a.splitlines()[0] == b"sweep_value,method,mean_mse,std_mse,runs,frames"


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_empty_results(tmp_path, fmt):
    path = bench.emit_results([], fmt, tmp_path / f"e.{fmt}")
    if fmt == "csv":
        assert path.read_text().strip() == ",".join(bench.RESULT_COLUMNS)
    else:
        assert json.loads(path.read_text())["rows"] == []
    assert bench.load_results(path) == []


def test_results_errors(tmp_path):
    with pytest.raises(OSError):
        bench.emit_results(ROWS, "csv", tmp_path / "missing" / "r.csv")
    with pytest.raises(ValueError):
        bench.emit_results(ROWS, "xml", tmp_path / "r.xml")


def test_loss_curve_round_trip(tmp_path):
    hist = TrainHistory([0.5, 0.25, 0.125], [0.6, 0.2, 0.3])
    bench.write_loss_curve(hist, tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,test_loss" and lines[1].startswith("1,")
    back = bench.read_loss_curve(tmp_path / "loss.csv")
    assert back.train_loss == hist.train_loss and back.test_loss == hist.test_loss
    assert back.best_epoch == 1


def test_plot_table():
    header, table = bench.plot_table(ROWS)
    assert header[:3] == ["sweep_value", "nn_mean", "nn_std"]
    assert table[0][0] == 50 and table[0][1] == 1.25e-3
    assert np.isnan(table[1][1])


@pytest.mark.skipif(not os.environ.get("PFD_SLOW"), reason="set PFD_SLOW=1 (about an hour)")
def test_num_types_sweep_nn_best():
    exp = bench.ExperimentConfig(bench.desk_profile(2), "num_types", [2, 3, 4, 6], runs=5,
                                 frames=500)
    rows = bench.run_experiment(exp)
    for T in (2, 3, 4, 6):
        mse = bench.mse_by_method(rows, T)
        assert mse["nn"] < mse["t_srcs"] and mse["nn"] < mse["t_bb_aware"]
