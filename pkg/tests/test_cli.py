import csv
import json
import logging

import pytest

from cnts import cli
from cnts.cli import REPORT_FIELDS, main
from cnts.data import load_series_csv
from cnts.errors import NumericError
from cnts.evaluation import EvalReport
from cnts.training import HISTORY_COLUMNS, TrainHistory

TRAIN = {"window": 16, "hidden": [24, 16], "train_stride": 4, "batch_size": 32,
         "epochs": 2, "r_epochs": 2, "d_epochs": 1}
SYNTH = {"seed": 3, "length": 600, "n_spikes": 6, "n_shifts": 1}


def write_config(tmp_path, name="c.json", **extra):
    cfg = {"run_id": "demo", "data": {"synth": SYNTH}, "train": TRAIN, **extra}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_train_run_directory_contract(tmp_path, capsys):
    assert main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "runs")]) == 0
    run = tmp_path / "runs" / "demo"
    for name in ("config.json", "manifest.json", "r.ckpt", "d.ckpt", "history.csv", "data/train.csv", "data/test.csv"):
        assert (run / name).exists(), name
    hist = TrainHistory.from_csv(run / "history.csv")
    assert len(hist) == TRAIN["epochs"] * (TRAIN["r_epochs"] + TRAIN["d_epochs"])
    with (run / "history.csv").open() as fh:
        assert tuple(next(csv.reader(fh))) == HISTORY_COLUMNS
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["mode"] == "cnts" and manifest["seed"] == 0
    assert not load_series_csv(run / "data" / "train.csv").labeled


def test_rerun_is_byte_identical_and_seed_flag_overrides(tmp_path):
    cfg = str(write_config(tmp_path))
    main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b")])
    for name in ("r.ckpt", "d.ckpt", "history.csv"):
        assert (tmp_path / "a/demo" / name).read_bytes() == (tmp_path / "b/demo" / name).read_bytes()
    main(["train", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "5"])
    assert json.loads((tmp_path / "c/demo/manifest.json").read_text())["seed"] == 5
    assert (tmp_path / "c/demo/r.ckpt").read_bytes() != (tmp_path / "a/demo/r.ckpt").read_bytes()


def test_runs_dir_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("CNTS_RUNS_DIR", str(tmp_path / "envruns"))
    assert main(["train", "--config", str(write_config(tmp_path)), "--mode", "baseline_r"]) == 0
    run = tmp_path / "envruns" / "demo"
    assert (run / "r.ckpt").exists() and not (run / "d.ckpt").exists()


def test_missing_dataset_fails_without_run_dir(tmp_path):
    cfg = {"run_id": "nope", "data": {"train": str(tmp_path / "missing.csv"), "test": []}, "train": TRAIN}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "runs")]) == 2
    assert not (tmp_path / "runs").exists()


@pytest.mark.parametrize("bad", [
    {"data": {"synth": SYNTH}, "train": {"epoch": 3}},
    {"data": {"synth": SYNTH}, "train": TRAIN, "mode": "gan"},
    {"data": {"synth": {"lenght": 5}}, "train": TRAIN},
    {"data": {}, "train": TRAIN},
    {"data": {"synth": SYNTH}, "train": TRAIN, "extra": 1},
])
def test_config_errors_exit_2(tmp_path, bad):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "runs")]) == 2
    assert not (tmp_path / "runs").exists()


def test_csv_dataset_train_and_eval(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--seed", "2", "--length", "600"]) == 0
    cfg = {"run_id": "csvrun", "data": {"train": str(tmp_path / "d/train.csv"), "test": [str(tmp_path / "d/test.csv")]},
           "train": TRAIN}
    path = tmp_path / "csv.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "runs")]) == 0
    run = tmp_path / "runs" / "csvrun"
    assert main(["eval", str(run), "--dataset", "synthetic"]) == 0
    report = json.loads((run / "reports" / "test.json").read_text())
    assert tuple(sorted(report)) == tuple(sorted(REPORT_FIELDS))
    assert EvalReport.from_dict(report).tp + report["fp"] + report["fn"] + report["tn"] == 600
    agg = json.loads((run / "reports" / "aggregate.json").read_text())
    assert set(agg) == {"dataset", "n_series", "acc", "f1", "auc"}
    assert (agg["acc"], agg["f1"], agg["auc"]) == (report["acc"], report["f1"], report["auc"])


def test_eval_rejects_unlabeled_series(tmp_path):
    cfg = str(write_config(tmp_path))
    main(["train", "--config", cfg, "--out", str(tmp_path / "runs")])
    run = tmp_path / "runs" / "demo"
    assert main(["eval", str(run), str(run / "data" / "train.csv")]) == 2


def test_eval_rejects_foreign_checkpoint(tmp_path):
    main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "runs")])
    run = tmp_path / "runs" / "demo"
    (run / "r.ckpt").write_bytes((run / "d.ckpt").read_bytes())
    assert main(["eval", str(run)]) == 2


def test_synth_label_rate_matches_file(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--seed", "4"]) == 0
    out = capsys.readouterr().out
    printed = float(out.strip().splitlines()[-1].split()[-1])
    test = load_series_csv(tmp_path / "test.csv")
    assert printed == round(float(test.labels.mean()), 4)
    assert not load_series_csv(tmp_path / "train.csv").labeled
    first = (tmp_path / "test.csv").read_bytes()
    main(["synth", "--out", str(tmp_path), "--seed", "4"])
    assert (tmp_path / "test.csv").read_bytes() == first


def test_ablate_outputs(tmp_path):
    assert main(["ablate", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "runs")]) == 0
    root = tmp_path / "runs" / "demo"
    with (root / "comparison.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["cnts", "baseline_r", "baseline_detection"]
    for mode in ("cnts", "baseline_r", "baseline_detection"):
        hist = TrainHistory.from_csv(root / mode / "history.csv")
        with (root / "curves" / f"{mode}.csv").open() as fh:
            assert len(list(csv.DictReader(fh))) == len(hist)
    # the detection ablation reuses the baseline reconstructor exactly
    assert (root / "baseline_r" / "r.ckpt").read_bytes() == (root / "baseline_detection" / "r.ckpt").read_bytes()


def test_report_table_means_and_digest_warning(tmp_path, capsys, caplog):
    main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "runs")])
    main(["train", "--config", str(write_config(tmp_path, "d.json", run_id="other")), "--seed", "1",
          "--out", str(tmp_path / "runs")])
    runs = [tmp_path / "runs" / "demo", tmp_path / "runs" / "other"]
    for run in runs:
        main(["eval", str(run)])
    capsys.readouterr()

    with caplog.at_level(logging.WARNING, logger="cnts"):
        assert main(["report", str(runs[0])]) == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert len(table) == 2 + 1 + 1  # header, rule, one run, mean
    assert not caplog.records

    with caplog.at_level(logging.WARNING, logger="cnts"):
        assert main(["report", *map(str, runs), "--csv", str(tmp_path / "r.csv")]) == 0
    assert any("digests differ" in r.message for r in caplog.records)
    mean_row = capsys.readouterr().out.strip().splitlines()[-1]
    aggs = [json.loads((r / "reports" / "aggregate.json").read_text()) for r in runs]
    expected = [f"{(aggs[0][k] + aggs[1][k]) / 2:.4f}" for k in ("acc", "f1", "auc")]
    assert [c.strip() for c in mean_row.strip("|").split("|")][-3:] == expected
    with (tmp_path / "r.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_numeric_failure_exit_code_and_manifest(tmp_path, monkeypatch):
    def blow_up(*args, **kwargs):
        raise NumericError("stage 1: reconstructor batch 0: non-finite gradient in layer 0")

    monkeypatch.setattr(cli, "train_cnts", blow_up)
    code = main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "runs")])
    manifest = json.loads((tmp_path / "runs" / "demo" / "manifest.json").read_text())
    assert code == 3
    assert manifest["status"] == "failed" and manifest["partial"] is True
