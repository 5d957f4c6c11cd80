"""Command-line front end: ``deltaflow {synth,train,forecast,evaluate,explain}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pipeline, plotting
from .dataset import SynthConfig, generate_synthetic, load_dataset_dir, write_raw_files, write_truth
from .errors import DeltaFlowError, HourMismatchError, InvalidConfigError
from .nn import dump_json, load_json
from .scoring import QUARTERS, VS_VARIANTS, box_stats, coverage_table, interval_bounds, read_forecasts, write_forecasts
from .xai import shap_report

log = logging.getLogger("deltaflow")

DEFAULTS = {
    "data_dir": None,
    "out": ".",
    "model": "flow",
    "features": "all",
    "train_end": None,
    "test_end": None,
    "samples": 100,
    "seed": 0,
    "gamma": 0.5,
    "alpha": "0.5,0.9",
    "vs_variant": "printed",
    "epochs": 500,
    "batch": 128,
    "days": None,
    "model_file": None,
    "forecasts": None,
    "ablation": False,
    "ablation_sets": ",".join(pipeline.ABLATION_SETS),
}
CASTS = {"samples": int, "seed": int, "gamma": float, "epochs": int, "batch": int, "days": int}
SYNTH_KEYS = set(SynthConfig.__dataclass_fields__)


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args: argparse.Namespace) -> tuple[dict, dict]:
    """Merge flags > config file > environment (seed only) > defaults.

    Returns the run settings and any synthetic-generator overrides.
    """
    file_cfg = read_config_file(args.config) if args.config else {}
    synth = {k: v for k, v in file_cfg.items() if k in SYNTH_KEYS and k != "days"}
    unknown = set(file_cfg) - set(DEFAULTS) - SYNTH_KEYS
    if unknown:
        raise InvalidConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    cfg = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            value = flag
        elif key in file_cfg:
            value = file_cfg[key]
        elif key == "seed" and os.environ.get("DELTAFLOW_SEED"):
            value = os.environ["DELTAFLOW_SEED"]
        else:
            value = default
        if key == "ablation" and isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        if value is not None and key in CASTS:
            try:
                value = CASTS[key](value)
            except (TypeError, ValueError):
                raise InvalidConfigError(f"{key}: expected {CASTS[key].__name__}, got {value!r}") from None
        cfg[key] = value
    cfg["alphas"] = _parse_alphas(cfg["alpha"])
    if cfg["vs_variant"] not in VS_VARIANTS:
        raise InvalidConfigError(f"vs-variant must be one of {', '.join(VS_VARIANTS)}")
    if cfg["samples"] < 2:
        raise InvalidConfigError("samples must be at least 2")
    return cfg, synth


def _parse_alphas(text) -> tuple[float, ...]:
    try:
        vals = tuple(float(a) for a in str(text).split(",") if a.strip())
    except ValueError:
        raise InvalidConfigError(f"alpha: cannot parse {text!r}") from None
    if not vals or any(not 0 < a < 1 for a in vals):
        raise InvalidConfigError("alpha values must lie in (0, 1)")
    return vals


def _need(cfg: dict, key: str) -> str:
    if cfg[key] is None:
        raise InvalidConfigError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


# --------------------------------------------------------------------------- #
# subcommands


def cmd_synth(cfg: dict, synth: dict) -> int:
    values = dict(synth)
    if cfg["days"] is not None:
        values["days"] = cfg["days"]
    config = SynthConfig.from_mapping(values)
    ds = generate_synthetic(config, cfg["seed"])
    out = _out_dir(cfg)
    write_raw_files(ds, out)
    write_truth(ds, out / "truth.json")
    log.info("wrote %d hours to %s", len(ds), out)
    return 0


def cmd_train(cfg: dict) -> int:
    ds = load_dataset_dir(_need(cfg, "data_dir"))
    split = pipeline.split_rows(ds, _need(cfg, "train_end"), cfg["test_end"])
    trained = pipeline.train_model(ds, cfg["model"], split.train_rows, cfg["features"], cfg["seed"], cfg["epochs"], cfg["batch"])
    trained.metadata["train_end"] = str(pipeline.parse_time(cfg["train_end"], "train-end")) + "Z"
    out = _out_dir(cfg)
    dump_json(trained.to_json(), out / "model.json")
    trace = trained.loss_trace
    if trace:
        _write_rows(out / "loss_trace.csv", [["epoch", "nll"]] + [[i + 1, repr(v)] for i, v in enumerate(trace)])
    log.info("trained %s on %d hours", cfg["model"], split.train_rows.size)
    return 0


def _load_trained(cfg: dict) -> pipeline.TrainedModel:
    path = Path(cfg["model_file"] or Path(cfg["out"]) / "model.json")
    try:
        return pipeline.TrainedModel.from_json(load_json(path))
    except FileNotFoundError:
        raise InvalidConfigError(f"model file {path} not found") from None


def cmd_forecast(cfg: dict) -> int:
    ds = load_dataset_dir(_need(cfg, "data_dir"))
    trained = _load_trained(cfg)
    train_end = cfg["train_end"] or trained.metadata.get("train_end")
    if train_end is None:
        raise InvalidConfigError("--train-end is required")
    split = pipeline.split_rows(ds, train_end, cfg["test_end"])
    fc = pipeline.forecast(trained, ds, split.test_rows, cfg["samples"], cfg["seed"])
    out = _out_dir(cfg)
    write_forecasts(fc, out / "forecasts.csv")
    _write_rows(out / "skipped.csv", [["hour", "reason"]] + [list(s) for s in split.skipped])
    log.info("wrote %d x %d samples", len(fc), cfg["samples"])
    return 0


def _emit_reports(out: Path, reports: dict, ds, rows, forecasts: dict) -> None:
    summary = {}
    box = [["model", "score", "min", "q1", "median", "q3", "max", "whisker_low", "whisker_high", "outliers"]]
    for name, rep in reports.items():
        tag = name.replace("[", "_").replace("]", "")
        rep.write_csv(out / f"scores_{tag}.csv")
        summary[name] = rep.summary()
        for score, values in (("energy", rep.energy), ("variogram", rep.variogram)):
            b = box_stats(values)
            box.append([name, score] + [repr(b[k]) for k in ("min", "q1", "median", "q3", "max", "whisker_low", "whisker_high")] + [";".join(repr(v) for v in b["outliers"])])
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_rows(out / "boxplot.csv", box)
    _write_rows(out / "coverage.csv", coverage_table(list(reports.values())))

    real = ds.id3[rows]
    hours = [str(ds.hours[r]) + "Z" for r in rows]
    header = ["model", "hour", "quarter", "realized", "lower_50", "upper_50", "lower_90", "upper_90"]
    lines = [header]
    figs = out / "figures"
    figs.mkdir(exist_ok=True)
    for name, fc in forecasts.items():
        s = np.stack([f.samples for f in fc])
        bands = {lv: interval_bounds(s, lv) for lv in (0.5, 0.9)}
        for i, h in enumerate(hours):
            for q in range(4):
                lines.append([name, h, QUARTERS[q], repr(float(real[i, q]))] + [repr(float(bands[lv][j][i, q])) for lv in (0.5, 0.9) for j in (0, 1)])
        tag = name.replace("[", "_").replace("]", "")
        plotting.interval_plot(hours, real, bands, name, figs / f"intervals_{tag}.png")
    _write_rows(out / "intervals.csv", lines)
    plotting.score_boxplot({n: r.energy for n, r in reports.items()}, "energy score", figs / "energy_score.png")
    plotting.score_boxplot({n: r.variogram for n, r in reports.items()}, "variogram score", figs / "variogram_score.png")


def cmd_evaluate(cfg: dict) -> int:
    ds = load_dataset_dir(_need(cfg, "data_dir"))
    out = _out_dir(cfg)
    score_kw = dict(gamma=cfg["gamma"], alphas=cfg["alphas"], vs_variant=cfg["vs_variant"])
    if cfg["ablation"]:
        split = pipeline.split_rows(ds, _need(cfg, "train_end"), cfg["test_end"])
        sets = [fs.strip() for fs in str(cfg["ablation_sets"]).split(",") if fs.strip()]
        reports, gains = pipeline.run_ablation(
            ds, cfg["train_end"], cfg["test_end"], sets, samples=cfg["samples"], seed=cfg["seed"], epochs=cfg["epochs"], **score_kw
        )
        _write_rows(out / "ablation.csv", [["feature_set", "median_energy_score", "improvement_over_hist"]] + [
            [fs, repr(float(np.median(reports[f"flow[{fs}]"].energy))), repr(g)] for fs, g in gains.items()
        ])
        for name, rep in reports.items():
            rep.write_csv(out / f"scores_{name.replace('[', '_').replace(']', '')}.csv")
        (out / "summary.json").write_text(json.dumps({n: r.summary() for n, r in reports.items()}, sort_keys=True, indent=2) + "\n")
        (out / "figures").mkdir(exist_ok=True)
        plotting.ablation_plot({n: r.energy for n, r in reports.items()}, out / "figures" / "ablation_energy_score.png")
        log.info("ablation on %d test hours", split.test_rows.size)
        return 0

    if cfg["forecasts"]:
        paths = [Path(p) for p in str(cfg["forecasts"]).split(",")]
    else:
        paths = [Path(cfg["out"]) / "forecasts.csv"] if cfg["train_end"] is None else []
    forecasts: dict[str, list] = {}
    if paths:
        for p in paths:
            if not p.exists():
                raise InvalidConfigError(f"forecast file {p} not found")
            fc = read_forecasts(p)
            forecasts[fc[0].model] = fc
        index = {str(h) + "Z": i for i, h in enumerate(ds.hours)}
        first = next(iter(forecasts.values()))
        missing = [f.hour for f in first if f.hour not in index]
        if missing:
            raise HourMismatchError(f"forecast hour {missing[0]} not in the dataset")
        rows = np.array([index[f.hour] for f in first])
    else:
        # end to end: train and forecast every requested model
        split = pipeline.split_rows(ds, cfg["train_end"], cfg["test_end"])
        rows = split.test_rows
        for kind in str(cfg["model"]).split(","):
            trained = pipeline.train_model(ds, kind, split.train_rows, cfg["features"], cfg["seed"], cfg["epochs"], cfg["batch"])
            forecasts[kind] = pipeline.forecast(trained, ds, rows, cfg["samples"], cfg["seed"])
    reports = {name: pipeline.evaluate(fc, ds, rows, **score_kw) for name, fc in forecasts.items()}
    _emit_reports(out, reports, ds, rows, forecasts)
    return 0


def cmd_explain(cfg: dict) -> int:
    ds = load_dataset_dir(_need(cfg, "data_dir"))
    rep = shap_report(ds, cfg["features"], cfg["seed"])
    out = _out_dir(cfg)
    rep.write_csv(out / "fi_all.csv")
    for g in dict.fromkeys(rep.groups):
        rep.write_csv(out / f"fi_{g}.csv", group=g)
    groups = rep.group_table()
    _write_rows(out / "fi_groups.csv", [["group"] + [f"fi_q{q}" for q in QUARTERS]] + [[g] + [repr(float(v)) for v in row] for g, row in groups.items()])
    _write_rows(out / "r2.csv", [["quarter", "test_r2"]] + [[q, repr(float(v))] for q, v in zip(QUARTERS, rep.r2)])
    (out / "figures").mkdir(exist_ok=True)
    plotting.importance_plot(rep.labels, rep.importance, "FI", out / "figures" / "feature_importance.png")
    return 0


# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--data-dir")
    common.add_argument("--out")
    common.add_argument("--seed", help="default: $DELTAFLOW_SEED, else 0")
    common.add_argument("--features", help="comma list of groups, named sets or feature names")
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--model", help="flow, gaussian, copula, hist-multi or hist-uni (evaluate: comma list)")
    run.add_argument("--train-end")
    run.add_argument("--test-end")
    run.add_argument("--samples")
    run.add_argument("--epochs")
    run.add_argument("--batch")

    score = argparse.ArgumentParser(add_help=False)
    score.add_argument("--gamma")
    score.add_argument("--alpha", help="comma list of Winkler confidence levels")
    score.add_argument("--vs-variant", choices=VS_VARIANTS)

    p = argparse.ArgumentParser(prog="deltaflow", description="Probabilistic forecasts of intraday minus day-ahead price differences.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic market dataset")
    s.add_argument("--days")
    sub.add_parser("train", parents=[common, run], help="fit a model")
    f = sub.add_parser("forecast", parents=[common, run], help="sample test-hour forecasts")
    f.add_argument("--model-file")
    e = sub.add_parser("evaluate", parents=[common, run, score], help="score forecasts and emit plot data")
    e.add_argument("--forecasts", help="comma list of forecast CSVs")
    e.add_argument("--ablation", action="store_true", help="flow per feature group against historical selection")
    e.add_argument("--ablation-sets", help="comma list of feature sets for --ablation (default: lags_da,errors,ramps,all)")
    sub.add_parser("explain", parents=[common], help="GBT surrogate feature importance")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        cfg, synth = resolve(args)
        if args.command != "synth" and synth:
            raise InvalidConfigError(f"generator key {sorted(synth)[0]!r} only applies to synth")
        if args.command == "synth":
            return cmd_synth(cfg, synth)
        return {"train": cmd_train, "forecast": cmd_forecast, "evaluate": cmd_evaluate, "explain": cmd_explain}[args.command](cfg)
    except DeltaFlowError as exc:
        print(f"{exc.code}: {exc.message}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"IO_ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
