import json
import os

import numpy as np
import pytest

from lowprec_gd import harness
from lowprec_gd.__main__ import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    build_parser,
    experiment_config,
    main,
)


@pytest.fixture(autouse=True)
def isolated_config(tmp_path, monkeypatch):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"format": "binary8", "reps": 2, "quadratic": {"setting": "stagnation"}}))
    monkeypatch.setenv("LPGD_CONFIG", str(path))
    monkeypatch.delenv("LPGD_DATA_ROOT", raising=False)
    return str(path)


def test_quadratic_run_writes_csv(tmp_path):
    out = tmp_path / "results"
    assert main(["quadratic", "--iters", "10", "--out", str(out)]) == EXIT_OK
    directory = out / "quadratic"
    assert sorted(os.listdir(directory)) == ["aggregate.csv", "run_000.csv", "run_001.csv"]
    columns = harness.read_columns(str(directory / "aggregate.csv"))
    assert columns["distance_mean"][-1] == 128.0


def test_flags_override_config_file():
    args = build_parser().parse_args(["quadratic", "--reps", "4", "--mode-sub", "ssr_eps", "--eps", "0.3"])
    cfg = experiment_config(args)
    assert cfg.reps == 4
    assert str(cfg.mode_sub) == "ssr_eps:0.3"
    assert cfg.setting == "stagnation"


def test_preset_with_overrides(tmp_path):
    args = build_parser().parse_args(["quadratic", "--preset", "stagnation-1d-sr", "--reps", "3"])
    cfg = experiment_config(args)
    assert cfg.preset == "stagnation-1d-sr"
    assert cfg.reps == 3
    assert str(cfg.mode_sub) == "sr"


def test_paper_preset_flag_and_alias_agree():
    long_form = experiment_config(build_parser().parse_args(["quadratic", "--paper-preset", "setting1-sr"]))
    alias = experiment_config(build_parser().parse_args(["quadratic", "--preset", "setting1-sr"]))
    assert long_form.preset == alias.preset == "setting1-sr"
    assert long_form.to_dict() == alias.to_dict()


def test_paper_preset_runs(tmp_path):
    argv = ["quadratic", "--paper-preset", "stagnation-1d", "--iters", "10", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    columns = harness.read_columns(str(tmp_path / "stagnation-1d" / "aggregate.csv"))
    assert columns["distance_mean"][-1] == 128.0


def test_preset_for_another_experiment():
    assert main(["quadratic", "--preset", "mlr-sr"]) == EXIT_CONFIG


def test_unknown_preset():
    assert main(["nn", "--preset", "nn-imaginary"]) == EXIT_CONFIG


def test_usage_errors():
    assert main(["svm"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG
    assert main(["quadratic", "--mode-sub", "nearest"]) == EXIT_CONFIG
    assert main(["quadratic", "--config", "/nonexistent/config.json"]) == EXIT_CONFIG


def test_help_exits_cleanly():
    assert main(["--help"]) == EXIT_OK


def test_missing_dataset(tmp_path):
    empty = tmp_path / "mnist"
    empty.mkdir()
    assert main(["mlr", "--data-root", str(empty), "--out", str(tmp_path)]) == EXIT_DATA


def test_missing_data_root():
    assert main(["nn"]) == EXIT_CONFIG


def test_overflow_is_a_numeric_error(tmp_path):
    # a stepsize of 1024 pushes the first update past 57344
    assert main(["quadratic", "--t", "1024", "--iters", "3", "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_eval_bounds(tmp_path):
    source = tmp_path / "trace.csv"
    harness.write_columns(
        str(source),
        {"k": np.array([0, 1]), "f": np.array([1.0, 0.25]), "distance": np.array([1.0, 0.5])},
    )
    target = tmp_path / "bounds.csv"
    argv = ["eval-bounds", str(source), "--L", "2", "--t", "0.25", "--format", "bfloat16", "--output", str(target)]
    assert main(argv) == EXIT_OK
    columns = harness.read_columns(str(target))
    assert columns["bound_exact"][0] == 1.0
    assert main(["eval-bounds", str(tmp_path / "missing.csv"), "--L", "1", "--t", "1"]) == EXIT_DATA
