"""Experiment runner: ``cnts train|eval|synth|ablate|report``.

A run directory looks like::

    <runs>/<run_id>/config.json     resolved experiment config
                    manifest.json   digest, seed, artifacts, timing, status
                    r.ckpt d.ckpt   checkpoints (d.ckpt absent for baseline_r)
                    history.csv     per (stage, phase, sub-epoch) training record
                    reports/        per-series report JSON + aggregate.json
                    data/           materialized series when the config uses synth

Exit codes: 0 ok, 2 config/validation, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import re
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import BenchmarkSpec, TimeSeries, default_benchmark, load_series_csv, save_series_csv
from .errors import CheckpointError, CNTSError, ConfigError, NumericError, ValidationError
from .evaluation import EvalReport, aggregate, auc, best_f1_threshold, dis, evaluate, mse_split, point_recon_errors
from .models import load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    TrainHistory,
    train_baseline_detector,
    train_baseline_reconstructor,
    train_cnts,
)

log = logging.getLogger("cnts")

MODES = ("cnts", "baseline_r", "baseline_detection")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
_SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")
REPORT_FIELDS = tuple(f.name for f in fields(EvalReport))


def runs_root(override: str | None = None, config_out: str | None = None) -> Path:
    if override:
        return Path(override)
    if config_out:
        return Path(config_out)
    return Path(os.environ.get("CNTS_RUNS_DIR", "runs"))


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _synth_spec(d: dict) -> tuple[int, BenchmarkSpec]:
    d = dict(d)
    seed = int(d.pop("seed", 0))
    known = {f.name for f in fields(BenchmarkSpec)}
    if set(d) - known:
        raise ConfigError(f"unknown synth keys: {sorted(set(d) - known)}")
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return seed, BenchmarkSpec(**d)


def resolve_config(path, seed: int | None = None, mode: str | None = None, out: str | None = None) -> dict:
    """Read a config file, apply flag overrides and validate everything up front."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - {"run_id", "mode", "data", "train", "out", "monitor"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = {
        "mode": mode or raw.get("mode", "cnts"),
        "data": raw.get("data"),
        "train": dict(raw.get("train", {})),
        "monitor": bool(raw.get("monitor", False)),
    }
    if seed is not None:
        cfg["train"]["seed"] = seed
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    train_cfg = TrainConfig.from_dict(cfg["train"])
    cfg["train"] = train_cfg.to_dict()

    data = cfg["data"]
    if not isinstance(data, dict) or not (("synth" in data) ^ ("train" in data)):
        raise ConfigError("data must hold either 'synth' or 'train' (+ 'test')")
    if "synth" in data:
        _synth_spec(data["synth"])
    else:
        tests = data.get("test", [])
        data["test"] = [tests] if isinstance(tests, str) else list(tests)
        for p in [data["train"], *data["test"]]:
            if not Path(p).is_file():
                raise ValidationError(f"dataset file not found: {p}")

    digest = config_digest(cfg)
    run_id = raw.get("run_id") or f"{cfg['mode']}-seed{train_cfg.seed}-{digest[:8]}"
    if not _SAFE_ID.match(run_id):
        raise ConfigError(f"run_id {run_id!r} is not filesystem-safe")
    cfg["run_id"] = run_id
    cfg["out"] = str(runs_root(out, raw.get("out")))
    return cfg


def load_data(cfg: dict, materialize_to: Path | None = None) -> tuple[TimeSeries, list[TimeSeries]]:
    data = cfg["data"]
    if "synth" in data:
        seed, spec = _synth_spec(data["synth"])
        train, test = default_benchmark(seed, spec)
        if materialize_to is not None:
            materialize_to.mkdir(parents=True, exist_ok=True)
            save_series_csv(train, materialize_to / "train.csv")
            save_series_csv(test, materialize_to / "test.csv")
        return train, [test]
    train = load_series_csv(data["train"], role="train")
    if train.labeled:
        log.warning("dropping labels from training series %s", train.name)
        train = train.unlabeled()
    return train, [load_series_csv(p, role="test") for p in data["test"]]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _train_mode(mode: str, train: TimeSeries, tcfg: TrainConfig, monitor: TimeSeries | None,
                baseline_r=None):
    """Returns (R, D or None, history)."""
    if mode == "cnts":
        return train_cnts(train, tcfg, monitor)
    if mode == "baseline_r":
        R, hist = train_baseline_reconstructor(train, tcfg, monitor)
        return R, None, hist
    R, hist = baseline_r if baseline_r else (None, None)
    D, R, hist = train_baseline_detector(train, tcfg, monitor, R, hist)
    return R, D, hist


def _execute(cfg: dict, run_dir: Path, train: TimeSeries, tests: list[TimeSeries], baseline_r=None):
    """Train one mode into ``run_dir`` and write every artifact plus the manifest."""
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "config.json", cfg)
    tcfg = TrainConfig.from_dict(cfg["train"])
    monitor = tests[0] if cfg.get("monitor") and tests else None
    manifest = {
        "version": __version__,
        "config_digest": config_digest({k: v for k, v in cfg.items() if k not in ("run_id", "out")}),
        "seed": tcfg.seed,
        "mode": cfg["mode"],
        "status": "running",
        "artifacts": {"config": "config.json"},
    }
    t0 = time.perf_counter()
    try:
        R, D, hist = _train_mode(cfg["mode"], train, tcfg, monitor, baseline_r)
    except NumericError:
        manifest.update(status="failed", partial=True, wall_clock_s=time.perf_counter() - t0)
        _write_json(run_dir / "manifest.json", manifest)
        raise
    save_checkpoint(R, run_dir / "r.ckpt")
    manifest["artifacts"]["r_checkpoint"] = "r.ckpt"
    if D is not None:
        save_checkpoint(D, run_dir / "d.ckpt")
        manifest["artifacts"]["d_checkpoint"] = "d.ckpt"
    hist.to_csv(run_dir / "history.csv")
    manifest["artifacts"]["history"] = "history.csv"
    manifest.update(status="ok", wall_clock_s=round(time.perf_counter() - t0, 3))
    _write_json(run_dir / "manifest.json", manifest)
    return R, D, hist


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.seed, args.mode, args.out)
    run_dir = Path(cfg["out"]) / cfg["run_id"]
    train, tests = load_data(cfg, run_dir / "data" if "synth" in cfg["data"] else None)
    _execute(cfg, run_dir, train, tests)
    print(run_dir)
    return EXIT_OK


def _score_series(R, D, series: TimeSeries, stride: int) -> EvalReport:
    if D is not None:
        return evaluate(D, R, series, stride)
    # reconstruction-only run: its own per-point error is the anomaly score
    if not series.labeled:
        raise ValidationError(f"series {series.name!r} has no labels; cannot evaluate")
    errors = point_recon_errors(R, series, stride)
    delta, _, conf = best_f1_threshold(errors, series.labels)
    mse_n, mse_a = mse_split(errors, series.labels)
    return EvalReport(series.name, conf.acc, conf.precision, conf.recall, conf.f1,
                      auc(errors, series.labels), delta, conf.tp, conf.fp, conf.fn, conf.tn,
                      mse_n, mse_a, dis(mse_n, mse_a))


def load_run(run_dir: Path):
    R = load_checkpoint(run_dir / "r.ckpt", expect="R")
    d_path = run_dir / "d.ckpt"
    D = load_checkpoint(d_path, expect="D") if d_path.exists() else None
    return R, D


def evaluate_run(run_dir: Path, tests: list[TimeSeries], dataset: str = "dataset",
                 stride: int = 1) -> tuple[list[EvalReport], dict]:
    R, D = load_run(run_dir)
    reports = [_score_series(R, D, s, stride) for s in tests]
    rep_dir = run_dir / "reports"
    rep_dir.mkdir(exist_ok=True)
    for rep in reports:
        _write_json(rep_dir / f"{rep.series}.json", rep.to_dict())
    agg = {"dataset": dataset, **aggregate(reports)}
    _write_json(rep_dir / "aggregate.json", agg)
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        manifest["artifacts"]["reports"] = sorted(f"reports/{p.name}" for p in rep_dir.glob("*.json"))
        _write_json(manifest_path, manifest)
    return reports, agg


def _default_tests(run_dir: Path) -> list[TimeSeries]:
    cfg = json.loads((run_dir / "config.json").read_text())
    if "synth" in cfg["data"]:
        materialized = run_dir / "data" / "test.csv"
        if materialized.exists():
            return [load_series_csv(materialized)]
        return load_data(cfg)[1]
    return [load_series_csv(p) for p in cfg["data"]["test"]]


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "r.ckpt").exists():
        raise ValidationError(f"{run_dir} holds no r.ckpt")
    tests = [load_series_csv(p) for p in args.test] if args.test else _default_tests(run_dir)
    stride = json.loads((run_dir / "config.json").read_text())["train"].get("eval_stride", 1) \
        if (run_dir / "config.json").exists() else 1
    reports, agg = evaluate_run(run_dir, tests, args.dataset, stride)
    for rep in reports:
        print(f"{rep.series}: acc {rep.acc:.4f} f1 {rep.f1:.4f} auc {rep.auc:.4f} dis {rep.dis:.3f}")
    print(f"{agg['dataset']} ({agg['n_series']} series): acc {agg['acc']:.4f} f1 {agg['f1']:.4f} auc {agg['auc']:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = BenchmarkSpec(length=args.length, noise_std=args.noise, period=args.period)
    train, test = default_benchmark(args.seed, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_series_csv(train, out / "train.csv")
    save_series_csv(test, out / "test.csv")
    rate = float(test.labels.mean())
    print(f"wrote {out / 'train.csv'} ({len(train)} points, unlabeled)")
    print(f"wrote {out / 'test.csv'} ({len(test)} points)")
    print(f"test label rate: {rate:.4f}")
    return EXIT_OK


def _write_curve(path: Path, hist: TrainHistory) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "phase", "sub_epoch", "dis", "f1", "mse_n", "mse_a"])
        for r in hist.records:
            w.writerow([r.stage, r.phase, r.sub_epoch,
                        *("" if v is None else repr(v) for v in (r.dis, r.f1, r.mse_n, r.mse_a))])


def cmd_ablate(args) -> int:
    base = resolve_config(args.config, args.seed, None, args.out)
    root = Path(base["out"]) / base["run_id"]
    train, tests = load_data(base, root / "data" if "synth" in base["data"] else None)
    if not tests:
        raise ValidationError("ablation needs at least one labeled test series")
    (root / "curves").mkdir(parents=True, exist_ok=True)
    rows, baseline_r = [], None
    for mode in MODES:
        cfg = dict(base, mode=mode, monitor=True, run_id=f"{base['run_id']}-{mode}")
        R, D, hist = _execute(cfg, root / mode, train, tests, baseline_r)
        if mode == "baseline_r":
            baseline_r = (R, hist)
        reports, agg = evaluate_run(root / mode, tests, stride=TrainConfig.from_dict(cfg["train"]).eval_stride)
        rows.append({"mode": mode, "acc": agg["acc"], "f1": agg["f1"], "auc": agg["auc"],
                     "dis": float(np.mean([r.dis for r in reports]))})
        _write_curve(root / "curves" / f"{mode}.csv", hist)
    with (root / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["mode", "acc", "f1", "auc", "dis"])
        w.writeheader()
        w.writerows(rows)
    for row in rows:
        print(f"{row['mode']:20s} acc {row['acc']:.4f} f1 {row['f1']:.4f} auc {row['auc']:.4f} dis {row['dis']:.3f}")
    print(root)
    return EXIT_OK


def collect_runs(run_dirs) -> list[dict]:
    rows = []
    for d in map(Path, run_dirs):
        manifest_path = d / "manifest.json"
        if not manifest_path.exists():
            raise ValidationError(f"{d} has no manifest.json")
        m = json.loads(manifest_path.read_text())
        row = {"run": d.name, "mode": m.get("mode"), "seed": m.get("seed"),
               "config_digest": m.get("config_digest"), "status": m.get("status")}
        agg_path = d / "reports" / "aggregate.json"
        if agg_path.exists():
            agg = json.loads(agg_path.read_text())
            row.update(acc=agg["acc"], f1=agg["f1"], auc=agg["auc"])
        rows.append(row)
    return rows


def cmd_report(args) -> int:
    rows = collect_runs(args.run_dirs)
    digests = {r["config_digest"] for r in rows}
    if len(digests) > 1:
        log.warning("config digests differ across runs: %s", ", ".join(sorted(map(str, digests))))
    cols = ["run", "mode", "seed", "status", "acc", "f1", "auc"]
    metric_rows = [r for r in rows if "f1" in r]
    means = {c: float(np.mean([r[c] for r in metric_rows])) for c in ("acc", "f1", "auc")} if metric_rows else {}
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r.get(c)) for c in cols) + " |")
    if means:
        lines.append("| mean | | | | " + " | ".join(_fmt(means[c]) for c in ("acc", "f1", "auc")) + " |")
    print("\n".join(lines))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols + ["config_digest"], extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnts", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one mode from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--out", help="run root (default $CNTS_RUNS_DIR or ./runs)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a run directory on labeled series")
    e.add_argument("run_dir")
    e.add_argument("test", nargs="*", help="labeled series CSVs (default: the run's test data)")
    e.add_argument("--dataset", default="dataset")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic train/test CSV pair")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--length", type=int, default=BenchmarkSpec.length)
    s.add_argument("--noise", type=float, default=BenchmarkSpec.noise_std)
    s.add_argument("--period", type=float, default=BenchmarkSpec.period)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("ablate", help="paired cnts / baseline_r / baseline_detection runs")
    a.add_argument("--config", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="summarize run directories")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--csv", help="also write the table as CSV")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, ValidationError, CheckpointError, CNTSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
