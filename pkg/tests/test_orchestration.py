"""Tests for the run plumbing around the estimators.

Covers the pieces every command shares:

  * ConfigManager: defaults, YAML and ``key = value`` files, ``${ENV}``
    expansion, dotted overrides and validation.
  * run_history.append_run grows a JSON list and last_run returns the newest.
  * Manifests: JSON and CSV artifacts embed the same manifest, with no
    timestamps, and error.json carries the failing row.
  * Seeded streams and the worker pool: results do not depend on the thread
    count.
  * BaseStage.process_batch: failures are counted, not raised.
"""
import json

import numpy as np
import pandas as pd
import pytest

from estimation.errors import DataError
from orchestrator import run_history
from orchestrator.config import ConfigManager, parse_key_value
from estimation.roc import oracle_calibrations, roc_curve
from orchestrator.manifest import RunManifest, read_csv, write_csv, write_curve_csv, write_error, write_json
from orchestrator.parallel import parallel_map, stream, sub_seed
from orchestrator.pipeline import RunSettings
from stages.base import BaseStage
from tests.synth import make_mirrored_dataset


# ---------------- config ----------------

def test_missing_file_gives_defaults_and_warns(tmp_path, capsys):
    config = ConfigManager(str(tmp_path / "absent.yaml"))
    assert "Config file not found" in capsys.readouterr().out
    assert config.cv_folds == 5
    assert config.kappa_grid == [0.25, 0.5, 1.0, 2.0]
    assert config.u_values == [0.1, 0.2]
    assert config.bootstrap_B == 500
    assert config.n_min is None
    assert config.simulation("n_min") == 120


def test_yaml_file_merges_over_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("tuning:\n  cv_folds: 3\nroc:\n  u: 0.3\n", encoding="utf-8")
    config = ConfigManager(str(path))
    assert config.cv_folds == 3
    assert config.lambda_grid_size == 20
    assert config.u_values == [0.3]


def test_key_value_file_uses_aliases(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# comment\nn_min = 60\nu = 0.1, 0.3\nB = 200\nbackend = coordinate\n", encoding="utf-8")
    config = ConfigManager(str(path))
    assert config.n_min == 60
    assert config.u_values == [0.1, 0.3]
    assert config.bootstrap_B == 200
    assert config.backend == "coordinate"


def test_key_value_parse_error_names_the_line():
    with pytest.raises(ValueError, match="line 2"):
        parse_key_value("seed = 1\nnot a pair\n")


def test_env_reference_is_expanded(tmp_path, monkeypatch):
    path = tmp_path / "run.yaml"
    path.write_text("run:\n  seed: ${TRANSFER_SEED}\n", encoding="utf-8")
    monkeypatch.setenv("TRANSFER_SEED", "42")
    config = ConfigManager(str(path))
    assert config.seed == 42
    assert config.effective()["run"]["seed"] == 42


def test_overrides_skip_none_and_are_recorded(tmp_path):
    config = ConfigManager(str(tmp_path / "absent.yaml"), quiet=True)
    applied = config.overrides({"run.seed": 9, "tuning.kappa": None, "folds": 4})
    assert applied == {"run.seed": 9, "folds": 4}
    assert config.seed == 9
    assert config.cv_folds == 4
    assert config.kappa is None
    assert config.applied_overrides == {"run.seed": 9, "folds": 4}


@pytest.mark.parametrize("key, value", [
    ("tuning.cv_folds", 1),
    ("bootstrap.level", 1.5),
    ("bootstrap.B", 50),
    ("roc.n_min", 10),
    ("roc.u", [0.1, 1.2]),
    ("tuning.lambda_alpha", -0.1),
])
def test_validate_rejects_unusable_settings(tmp_path, key, value):
    config = ConfigManager(str(tmp_path / "absent.yaml"), quiet=True)
    config.overrides({key: value})
    with pytest.raises(ValueError):
        config.validate()


def test_small_B_is_fine_when_the_bootstrap_is_off(tmp_path):
    config = ConfigManager(str(tmp_path / "absent.yaml"), quiet=True)
    config.overrides({"bootstrap.B": 10, "bootstrap.enabled": False})
    config.validate()


def test_run_settings_from_config(tmp_path):
    config = ConfigManager(str(tmp_path / "absent.yaml"), quiet=True)
    config.overrides({"tuning.lambda_lo": 0.02, "run.threads": 3, "roc.eval_points": 200})
    settings = RunSettings.from_config(config)
    assert (settings.lambda_lo, settings.lambda_hi) == (0.02, 0.5)
    assert settings.threads == 3
    assert settings.eval_points == 200
    assert settings.options.backend == "proximal"


# ---------------- run_history ----------------

def test_append_run_grows_list_and_last_run_is_newest(tmp_path):
    path = tmp_path / "state" / "run_history.json"

    assert run_history.last_run(str(path)) is None

    run_history.append_run(run_history.make_record("fit", 1, "out/a", "ok", ["beta.json"]), path=str(path))
    run_history.append_run(run_history.make_record("roc", 2, "out/b", "error", error="SolverError"),
                           path=str(path))

    data = json.loads(path.read_text(encoding="utf-8"))
    assert isinstance(data, list) and len(data) == 2

    newest = run_history.last_run(str(path))
    assert newest["command"] == "roc"
    assert newest["outcome"] == "error"
    assert newest["error"] == "SolverError"
    assert newest["artifacts"] == []


def test_append_run_tolerates_corrupt_file(tmp_path):
    path = tmp_path / "state" / "run_history.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("{ this is not json", encoding="utf-8")

    run_history.append_run(run_history.make_record("fit", 0, "out", "ok"), path=str(path))
    data = json.loads(path.read_text(encoding="utf-8"))
    assert isinstance(data, list) and len(data) == 1


def test_last_run_by_command_and_bounded_length(tmp_path, monkeypatch):
    path = str(tmp_path / "history.json")
    monkeypatch.setattr(run_history, "MAX_RECORDS", 3)
    for i, command in enumerate(["fit", "roc", "fit", "simulate", "roc"]):
        run_history.append_run(run_history.make_record(command, i, "out", "ok"), path=path)

    assert [r["seed"] for r in run_history.read_history(path)] == [2, 3, 4]
    assert run_history.last_run(path, command="fit")["seed"] == 2
    assert run_history.last_run(path, command="validate") is None
    assert not (tmp_path / "history.json.tmp").exists()


def test_make_record_rejects_unknown_outcome():
    with pytest.raises(ValueError):
        run_history.make_record("fit", 0, "out", "partial")


# ---------------- manifests ----------------

def _manifest(tmp_path):
    return RunManifest(command="fit", seed=7, output_dir=str(tmp_path / "out"), dataset="data.csv",
                       overrides={"run.seed": 7}, config={"run": {"seed": 7}})


def test_json_and_csv_embed_the_same_manifest(tmp_path):
    manifest = _manifest(tmp_path)
    json_path = write_json(manifest.out / "a.json", {"value": np.float64(1.5), "bad": float("nan")}, manifest)
    csv_path = write_csv(manifest.out / "a.csv", pd.DataFrame({"x": [1.0, 2.0]}), manifest)

    body = json.loads(json_path.read_text(encoding="utf-8"))
    assert body["value"] == 1.5
    assert body["bad"] is None
    first = csv_path.read_text(encoding="utf-8").splitlines()[0]
    assert first.startswith("# manifest: ")
    assert json.loads(first[len("# manifest: "):]) == body["manifest"]
    assert "timestamp" not in json.dumps(body["manifest"])
    assert read_csv(csv_path)["x"].tolist() == [1.0, 2.0]


def test_csv_floats_read_back_bit_for_bit(tmp_path):
    values = np.r_[0.1 + 0.2, 1.0 / 3.0, np.random.default_rng(0).random(50)]
    path = write_csv(tmp_path / "floats.csv", pd.DataFrame({"v": values}), _manifest(tmp_path))
    np.testing.assert_array_equal(read_csv(path)["v"].to_numpy(), values)


def test_rewriting_is_byte_identical(tmp_path):
    manifest = _manifest(tmp_path)
    path = write_json(manifest.out / "a.json", {"beta": [0.1, 0.2]}, manifest)
    first = path.read_bytes()
    write_json(path, {"beta": [0.1, 0.2]}, _manifest(tmp_path))
    assert path.read_bytes() == first


def test_curve_csv_has_one_row_per_cutoff(tmp_path):
    d = make_mirrored_dataset(n=80, q=2, p=3)
    beta = np.array([-0.3, 0.8])
    est = roc_curve(d, beta, oracle_calibrations([0.0], np.zeros(d.width), np.zeros(d.width)))
    manifest = _manifest(tmp_path)
    path = write_curve_csv(manifest.out / "roc_curve.csv", est, manifest)
    frame = read_csv(path)
    assert list(frame.columns) == ["c", "fpr_raw", "tpr_raw", "fpr", "tpr"]
    assert len(frame) == est.c.size
    np.testing.assert_array_equal(frame["tpr"].to_numpy(), est.tpr)


def test_error_json_carries_the_row(tmp_path):
    path = write_error(tmp_path / "out", DataError("bad cell", row=4))
    body = json.loads(path.read_text(encoding="utf-8"))
    assert body["error"] == "DataError"
    assert body["row"] == 4
    assert "line 6" in body["message"]


# ---------------- streams and the worker pool ----------------

def test_streams_are_keyed_not_ordered():
    a = stream(5, "bootstrap", 3).standard_normal(4)
    stream(5, "bootstrap", 2).standard_normal(100)
    b = stream(5, "bootstrap", 3).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, stream(5, "bootstrap", 4).standard_normal(4))
    assert sub_seed(1, "cv", "alpha") != sub_seed(1, "cv", "gamma")
    with pytest.raises(ValueError):
        stream(5, -1)


def test_parallel_map_keeps_input_order():
    items = list(range(20))
    assert parallel_map(lambda i: i * i, items, threads=4) == [i * i for i in items]


def test_parallel_map_propagates_errors():
    def boom(i):
        if i == 3:
            raise RuntimeError("boom")
        return i

    with pytest.raises(RuntimeError):
        parallel_map(boom, range(6), threads=3)


# ---------------- stages ----------------

class HalvingStage(BaseStage):
    @property
    def name(self):
        return "halving"

    def process(self, item):
        if item["id"] % 2:
            raise ValueError(f"odd id {item['id']}")
        return {"id": item["id"], "status": "success", "half": item["id"] // 2}


def test_process_batch_counts_failures_in_order(capsys):
    stage = HalvingStage(quiet=True)
    seen = []
    batch = stage.process_batch([{"id": i} for i in range(6)], callback=lambda item, result, i: seen.append(i),
                                threads=3)
    assert (batch["total"], batch["success"], batch["failed"]) == (6, 3, 3)
    assert [r["id"] for r in batch["items"]] == list(range(6))
    assert batch["items"][1]["error"] == "ValueError: odd id 1"
    assert seen == list(range(6))
    assert "[halving] ERROR" in capsys.readouterr().err


def test_stage_log_prefix_and_quiet(capsys):
    HalvingStage().log("hello")
    HalvingStage(quiet=True).log("hidden")
    out = capsys.readouterr().out
    assert "[halving] hello" in out
    assert "hidden" not in out


def test_progress_lines_are_throttled(capsys):
    stage = HalvingStage()
    stage.process_batch([{"id": 2 * i} for i in range(25)])
    progress = [line for line in capsys.readouterr().out.splitlines() if line.startswith("[halving] [")]
    assert [line.split()[1] for line in progress] == ["[10/25]", "[20/25]", "[25/25]"]
    assert "ETA" not in progress[-1]
