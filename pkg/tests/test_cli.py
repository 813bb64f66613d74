import io
import json

import pytest

from dataset_repository import make_two_gaussians, serialize_libsvm
from main import cli_main

TWO_BY_TWO = "2\n2 1\n1 2\n3 3\n"


def _run(argv):
    out = io.StringIO()
    code = cli_main(argv, out=out)
    text = out.getvalue()
    return code, (json.loads(text) if text.strip() else None)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def _libsvm(tmp_path, name, n, seed):
    return _write(tmp_path / name, serialize_libsvm(make_two_gaussians(n, seed=seed)))


def _strip_timing(doc):
    if isinstance(doc, dict):
        return {k: _strip_timing(v) for k, v in doc.items() if k != "wall_time_seconds"}
    if isinstance(doc, list):
        return [_strip_timing(v) for v in doc]
    return doc


# -------------------------
# solve
# -------------------------
@pytest.mark.parametrize("extra", [[], ["--variant", "broadcast"], ["--schedule", "async"], ["--workers", "2"]])
def test_solve_two_by_two(tmp_path, extra):
    code, doc = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), *extra])
    assert code == 0
    assert doc["converged"] is True
    assert doc["means"] == pytest.approx([1.0, 1.0], abs=1e-9)
    assert doc["residual"] <= 1e-8


def test_solve_not_converged_exits_2(tmp_path):
    code, doc = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), "--max-iters", "1"])
    assert code == 2
    assert doc["converged"] is False
    assert doc["iterations_used"] == 1


def test_solve_parse_error_exits_1(tmp_path, capsys):
    code, doc = _run(["solve", _write(tmp_path / "w.txt", "2\n2 1\n1 x\n3 3\n")])
    assert code == 1
    assert doc is None
    assert "line 3, column 2" in capsys.readouterr().err


def test_solve_asymmetric_matrix_exits_1(tmp_path):
    code, _ = _run(["solve", _write(tmp_path / "w.txt", "2\n2 1\n0.5 2\n3 3\n")])
    assert code == 1


def test_solve_missing_file_exits_1(tmp_path):
    code, _ = _run(["solve", str(tmp_path / "nope.txt")])
    assert code == 1


# -------------------------
# usage / options
# -------------------------
def test_missing_subcommand_exits_1(capsys):
    code, doc = _run([])
    assert code == 1
    assert doc is None
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_1(tmp_path):
    code, _ = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), "--no-such-flag"])
    assert code == 1


def test_bad_option_value_exits_1(tmp_path):
    code, _ = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), "--max-iters", "0"])
    assert code == 1


def test_unknown_config_key_exits_1(tmp_path):
    cfg = _write(tmp_path / "c.json", json.dumps({"bogus": 1}))
    code, _ = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), "--config", cfg])
    assert code == 1


def test_flag_beats_config_file_beats_default(tmp_path):
    cfg = _write(tmp_path / "c.json", json.dumps({"epsilon": 1e-9, "max-iters": 50}))
    code, doc = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), "--config", cfg, "--max-iters", "60"])
    assert code == 0
    assert doc["config"]["epsilon"] == 1e-9
    assert doc["config"]["max_iters"] == 60
    assert doc["config"]["variant"] == "edge"


def test_worker_count_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GABP_WORKERS", "2")
    matrix = _write(tmp_path / "w.txt", TWO_BY_TWO)
    code, doc = _run(["solve", matrix])
    assert code == 0
    assert doc["config"]["workers"] == 2
    code, doc = _run(["solve", matrix, "--workers", "1"])
    assert doc["config"]["workers"] == 1


def test_bad_worker_environment_exits_1(tmp_path, monkeypatch):
    monkeypatch.setenv("GABP_WORKERS", "many")
    code, _ = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO)])
    assert code == 1


def test_workers_with_async_schedule_exits_1(tmp_path):
    code, _ = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), "--workers", "2", "--schedule", "async"])
    assert code == 1


# -------------------------
# train / predict
# -------------------------
def test_train_then_predict_held_out(tmp_path):
    train_file = _libsvm(tmp_path, "train.libsvm", 200, seed=41)
    test_file = _libsvm(tmp_path, "test.libsvm", 100, seed=42)
    model = str(tmp_path / "model.json")
    labels = tmp_path / "labels.txt"

    code, doc = _run(["train", train_file, "--kernel", "rbf", "--gamma", "1", "--cost-c", "0.01",
                      "--test", test_file, "--model-out", model])
    assert code == 0
    assert doc["evaluated_on"] == "test"
    assert doc["n_train"] == 200
    assert doc["report"]["error_rate"] <= 0.05
    assert doc["report"]["config"]["train_config"]["cost_C"] == 0.01

    code, doc = _run(["predict", test_file, "--model", model, "--labels-out", str(labels)])
    assert code == 0
    assert len(doc["labels"]) == 100
    assert set(doc["labels"]) <= {-1, 1}
    assert doc["report"]["error_rate"] <= 0.05
    assert labels.read_text(encoding="utf-8").split() == [f"{v:+d}" for v in doc["labels"]]


def test_scaling_is_replayed_at_predict_time(tmp_path):
    train_file = _libsvm(tmp_path, "train.libsvm", 80, seed=43)
    test_file = _libsvm(tmp_path, "test.libsvm", 40, seed=44)
    model = str(tmp_path / "model.json")
    code, trained = _run(["train", train_file, "--scale", "--gamma", "50", "--cost-c", "0.01",
                          "--test", test_file, "--model-out", model])
    assert code == 0
    assert trained["report"]["config"]["provenance"]["scaled"] is True
    code, predicted = _run(["predict", test_file, "--model", model])
    assert code == 0
    assert predicted["report"]["error_rate"] == trained["report"]["error_rate"]


def test_train_with_workers_and_split(tmp_path):
    code, doc = _run(["train", "--synthetic", "60", "--test-fraction", "0.25", "--cost-c", "0.01", "--workers", "3"])
    assert code == 0
    assert doc["n_train"] == 45
    assert doc["report"]["n_test"] == 15


def test_train_not_converged_exits_2():
    code, doc = _run(["train", "--synthetic", "30", "--cost-c", "0.01", "--max-iters", "1", "--epsilon", "1e-14"])
    assert code == 2
    assert doc["converged"] is False
    assert doc["command"] == "train"


@pytest.mark.parametrize("loading,dominant", [("one-over-c", False), ("enforce-dominance", True)])
def test_train_with_unit_cost_does_not_converge(tmp_path, loading, dominant):
    # C=1, γ=1 の未スケール 200 点では GaBP が収束しない（README の例が C=0.01 を使う理由）
    train_file = _libsvm(tmp_path, "train.libsvm", 200, seed=41)
    code, doc = _run(["train", train_file, "--kernel", "rbf", "--gamma", "1", "--cost-c", "1",
                      "--loading", loading, "--max-iters", "200"])
    assert code == 2
    assert doc["command"] == "train"
    assert doc["converged"] is False
    assert doc["diagnosis"]["is_diagonally_dominant"] is dominant
    if not dominant:
        assert doc["diagnosis"]["spectral_radius_estimate"] > 1.0


def test_train_without_data_exits_1():
    code, _ = _run(["train"])
    assert code == 1


def test_predict_without_model_exits_1(tmp_path):
    code, _ = _run(["predict", _libsvm(tmp_path, "d.libsvm", 10, seed=1)])
    assert code == 1


def test_reports_are_deterministic_apart_from_timing(tmp_path):
    argv = ["train", "--synthetic", "50", "--test-fraction", "0.2", "--seed", "7", "--cost-c", "0.01"]
    _, first = _run(argv)
    _, second = _run(argv)
    assert _strip_timing(first) == _strip_timing(second)
    assert first["config"]["seed"] == 7


def test_telemetry_is_written_as_jsonl(tmp_path):
    sink = tmp_path / "events.jsonl"
    code, doc = _run(["solve", _write(tmp_path / "w.txt", TWO_BY_TWO), "--variant", "broadcast", "--telemetry", str(sink)])
    assert code == 0
    events = [json.loads(line) for line in sink.read_text(encoding="utf-8").splitlines()]
    kinds = [e["event_type"] for e in events]
    assert kinds == ["iteration"] * doc["iterations_used"] + ["run_finished"]
    assert {e["payload"]["scalars_communicated"] for e in events[:-1]} == {4}
    assert len({e["session_id"] for e in events}) == 1
    assert events[0]["payload"]["variant"] == "broadcast"


# -------------------------
# bench
# -------------------------
def test_bench_sweeps_worker_counts():
    code, doc = _run(["bench", "--synthetic", "60", "--workers-list", "1,2,4", "--cost-c", "0.01", "--epsilon", "1e-10"])
    assert code == 0
    assert [r["workers"] for r in doc["runs"]] == [1, 2, 4]
    assert doc["equivalent"] is True
    assert all(r["max_abs_diff"] <= 1e-8 for r in doc["runs"])
    assert doc["runs"][2]["rows_per_worker"] == 15


def test_bench_skips_worker_counts_above_n():
    code, doc = _run(["bench", "--synthetic", "4", "--workers-list", "2,8", "--cost-c", "0.01"])
    assert code == 0
    assert [r["workers"] for r in doc["runs"]] == [2]
