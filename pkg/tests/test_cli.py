import json
from pathlib import Path

import pytest

from gcmetrics.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_IO, main, manifest_digest
from gcmetrics.data import read_manifest
from gcmetrics.metrics import REPORT_COLUMNS, MetricReport


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cohort(workdir):
    out = workdir / "cohort"
    assert run("generate", "--n", 40, "--seed", 7, "--noise", 0.02, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def models(workdir, cohort):
    out = workdir / "models"
    assert run("train", "--target", "referee", "--attribute", "all", "--side", "all",
               "--epochs", 1, "--cohort", cohort, "--models", out) == 0
    assert run("train", "--target", "encoder", "--epochs", 1, "--batch-size", 8,
               "--cohort", cohort, "--models", out) == 0
    return out


def test_generate_counts_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("generate", "--n", 100, "--seed", 7, "--out", a) == 0
    assert run("generate", "--n", 100, "--seed", 7, "--out", b) == 0
    rows = read_manifest(a)
    assert len(rows) == 100
    assert all((a / r["filename"]).is_file() for r in rows)
    assert manifest_digest(a) == manifest_digest(b)
    assert run("generate", "--n", 100, "--seed", 7, "--out", a) == 0
    assert manifest_digest(a) == manifest_digest(b)
    sidecar = json.loads((a / "cohort.json").read_text())
    assert sidecar["config_digest"]


def test_generate_invalid_range(tmp_path, capsys):
    assert run("generate", "--n", 5, "--age-range", 90, 20, "--out", tmp_path / "c") == EXIT_CONFIG
    assert "age_range" in capsys.readouterr().err


def test_generate_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("generate", "--n", 3, "--out", blocker / "cohort") == EXIT_IO
    assert str(blocker / "cohort") in capsys.readouterr().err


def test_generate_config_file_with_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"n": 12, "phantom": {"seed": 3, "noise_level": 0.05}}))
    assert run("--config", cfg, "generate", "--seed", 4, "--out", tmp_path / "c") == 0
    meta = json.loads((tmp_path / "c" / "cohort.json").read_text())
    assert meta["n"] == 12 and meta["phantom"]["seed"] == 4 and meta["phantom"]["noise_level"] == 0.05


def test_build_eval_deterministic(tmp_path, cohort):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("build-eval", "--cohort", cohort, "--seed", 1, "--band", 0.1, "--out", out) == 0
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()
    roles = [r["role"] for r in read_manifest(a)]
    assert roles.count("reference") == 2 and roles.count("inconsistent") == 2


def test_train_referee_sidecar(models):
    meta = json.loads((models / "referee-age-superior" / "metadata.json").read_text())
    assert meta["attribute"] == "age" and meta["side"] == "superior"
    assert meta["input_shape"] == [86, 96]
    assert (models / "referee-age-superior" / "validation.json").is_file()


def test_train_rerun_same_digest(tmp_path, cohort, models):
    out = tmp_path / "m"
    assert run("train", "--target", "referee", "--attribute", "age", "--side", "superior",
               "--epochs", 1, "--cohort", cohort, "--models", out) == 0
    a = json.loads((out / "referee-age-superior" / "metadata.json").read_text())
    b = json.loads((models / "referee-age-superior" / "metadata.json").read_text())
    assert a["training_config_digest"] == b["training_config_digest"]


def test_train_errors(tmp_path, cohort, capsys):
    assert run("train", "--target", "referee", "--attribute", "height", "--side", "superior",
               "--cohort", cohort, "--models", tmp_path) == EXIT_CONFIG
    assert run("train", "--target", "referee", "--attribute", "age",
               "--cohort", cohort, "--models", tmp_path) == EXIT_CONFIG
    assert run("train", "--target", "encoder", "--cohort", tmp_path / "missing",
               "--models", tmp_path) == EXIT_IO
    one = tmp_path / "one"
    assert run("generate", "--n", 1, "--out", one) == 0
    capsys.readouterr()
    assert run("train", "--target", "encoder", "--cohort", one, "--models", tmp_path) == EXIT_INPUT
    assert "batch_size" in capsys.readouterr().err


def test_evaluate_and_report(tmp_path, cohort, models, capsys):
    out = tmp_path / "run"
    assert run("evaluate", "--cohort", cohort, "--models", models, "--out", out) == 0
    printed = capsys.readouterr().out
    assert "Consistent" in printed and "Inconsistent" in printed
    doc = json.loads((out / "report.json").read_text())
    assert doc["columns"] == list(REPORT_COLUMNS)
    assert all(list(r) == list(REPORT_COLUMNS) for r in doc["per_image"])
    assert set(doc) >= {"config_digest", "config", "per_image", "aggregates",
                        "normalization_constants", "fid", "correlation"}
    assert doc["fid"]["extractor"].startswith("contrastive-encoder/halves/backbone")
    assert (out / "fig3_attribute_errors.png").is_file()
    assert (out / "fig4_implicit_vs_explicit.png").is_file()

    plots = tmp_path / "plots"
    assert run("report", "--run", out, "--plots", plots) == 0
    assert "Consistent" in capsys.readouterr().out
    assert sorted(p.name for p in plots.iterdir()) == ["fig3_attribute_errors.png", "fig4_implicit_vs_explicit.png"]
    assert MetricReport.load(out / "report.json").config_digest == doc["config_digest"]


def test_evaluate_on_eval_dir(tmp_path, cohort, models):
    ev = tmp_path / "eval"
    assert run("build-eval", "--cohort", cohort, "--seed", 2, "--out", ev) == 0
    assert run("evaluate", "--cohort", ev, "--models", models, "--out", tmp_path / "run") == 0
    doc = json.loads((tmp_path / "run" / "report.json").read_text())
    assert doc["config"]["evaluation"]["seed"] == 2


def test_evaluate_missing_models(tmp_path, cohort, models, capsys):
    partial = tmp_path / "partial"
    partial.mkdir()
    for name in ("referee-age-superior", "encoder"):
        (partial / name).symlink_to(Path(models) / name)
    assert run("evaluate", "--cohort", cohort, "--models", partial, "--out", tmp_path / "r") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "referee-bmi-inferior" in err and "referee-age-superior" not in err and "encoder" not in err
