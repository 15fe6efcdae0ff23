"""Command-line driver: ``arl generate | train | eval | sweep``.

Every subcommand accepts ``--config PATH`` (a JSON document with optional
``population``, ``hyperparams``, ``training``, ``mode``, ``seed`` and
``plant_overlap`` sections; missing sections take the standard defaults) and
``--seed``. Failures exit with status 1 and print one JSON error record to
stderr.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .core import ARLError
from .experiment import ExperimentConfig, evaluate_model, generate, run_baseline, run_training
from .metrics import DEFAULT_FPRS, EvalReport
from .train import MODES

log = logging.getLogger("arl")

STEP_FIELDS = ["step", "phase", "loss_labeled", "loss_unlabeled", "loss_penalty", "total", "n_pairs"]


class UsageError(ARLError, ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", UsageError(message), status=2)


def _fail(command: str, exc: BaseException, status: int = 1):
    record = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    sys.exit(status)


def load_config(path: str | None, seed: int | None = None, mode: str | None = None) -> ExperimentConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise io.IoError(f"cannot read config {path}: {exc}") from exc
    cfg = ExperimentConfig.from_dict(raw)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    if mode is not None:
        cfg = cfg.replace(mode=mode)
    return cfg


def _fpr_key(f: float) -> str:
    return f"{f:g}"


# ------------------------------------------------------------------ steps


def generate_to_dir(cfg: ExperimentConfig, out: Path) -> dict:
    pop = generate(cfg)
    manifest = io.save_dataset(pop, out, cfg.seed)
    io.write_json(Path(out) / "config.json", cfg.to_dict())
    return manifest


def _stamp(cfg_hash: str, dataset_hash: str, seed: int) -> dict:
    return {"config_hash": cfg_hash, "dataset_hash": dataset_hash, "seed": seed}


def train_to_dir(cfg: ExperimentConfig, data: Path, out: Path) -> dict:
    pop, manifest = io.load_dataset(data)
    # the dataset defines the population; keep the config consistent with it
    cfg = cfg.replace(population=pop.spec)
    cfg_hash = io.config_hash(cfg.to_dict())
    data_hash = manifest["dataset_hash"]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    baseline = run_baseline(cfg, pop)
    meta = {"mode": cfg.mode}
    io.save_checkpoint(
        out / "phase1.ckpt",
        io.Checkpoint(baseline.model, baseline.bank, cfg.seed, cfg_hash, data_hash, 1, meta),
    )
    result = run_training(cfg, pop, baseline).final
    checkpoints = ["phase1.ckpt"]
    if cfg.mode != "baseline":
        io.save_checkpoint(
            out / "phase2.ckpt",
            io.Checkpoint(result.model, result.bank, cfg.seed, cfg_hash, data_hash, 2, meta),
        )
        checkpoints.append("phase2.ckpt")
    rows = ([getattr(r, f) for f in STEP_FIELDS] for r in result.log)
    io.write_csv(out / "metrics.csv", STEP_FIELDS, rows, _stamp(cfg_hash, data_hash, cfg.seed))
    summary = {
        **_stamp(cfg_hash, data_hash, cfg.seed),
        "mode": cfg.mode,
        "config": cfg.to_dict(),
        "checkpoints": checkpoints,
        "removed_overlap": result.removed_overlap,
        "selected_unlabeled": 0 if result.selected is None else len(result.selected),
        "steps": len(result.log),
    }
    io.write_json(out / "run.json", summary)
    return summary


def report_dict(report: EvalReport, stamp: dict, fprs=DEFAULT_FPRS) -> dict:
    groups = {}
    for tag, g in sorted(report.groups.items()):
        groups[tag] = {
            "tpr": {_fpr_key(f): g.tpr.get(f) for f in fprs},
            "auc": g.auc,
            "pos_median": g.pos_median,
            "neg_median": g.neg_median,
            "median_diff": g.median_diff,
            "accuracy": g.accuracy,
            "threshold": g.threshold,
            "n_positive": g.n_positive,
            "n_negative": g.n_negative,
        }
    return {
        **stamp,
        "groups": groups,
        "avg_accuracy": report.avg_accuracy,
        "std_accuracy": report.std_accuracy,
        "warnings": list(report.warnings),
    }


def delta_dict(summary: dict, baseline: dict) -> dict:
    """``value(delta)`` strings, in percent, for every metric both reports share."""
    out = {}
    for tag, g in summary["groups"].items():
        b = baseline.get("groups", {}).get(tag)
        if b is None:
            continue
        row = {}
        for f, v in g["tpr"].items():
            bv = b["tpr"].get(f)
            if v is not None and bv is not None:
                row[f"tpr@{f}"] = io.format_delta(v, bv)
        row["accuracy"] = io.format_delta(g["accuracy"], b["accuracy"])
        out[tag] = row
    for key in ("avg_accuracy", "std_accuracy"):
        if summary.get(key) is not None and baseline.get(key) is not None:
            out[key] = io.format_delta(summary[key], baseline[key])
    return out


def eval_to_dir(checkpoint: Path, data: Path, out: Path, baseline_report: Path | None = None) -> dict:
    ckpt = io.load_checkpoint(checkpoint)
    pop, manifest = io.load_dataset(data)
    if ckpt.dataset_hash != manifest["dataset_hash"]:
        raise io.ChecksumMismatch(
            f"checkpoint was trained on dataset {ckpt.dataset_hash[:12]}, not {manifest['dataset_hash'][:12]}"
        )
    report = evaluate_model(ckpt.model, pop)
    stamp = _stamp(ckpt.config_hash, ckpt.dataset_hash, ckpt.seed)
    summary = report_dict(report, stamp)
    summary["phase"] = ckpt.phase
    summary["mode"] = ckpt.meta.get("mode")
    if baseline_report is not None:
        try:
            base = json.loads(Path(baseline_report).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise io.IoError(f"cannot read baseline report {baseline_report}: {exc}") from exc
        summary["deltas"] = delta_dict(summary, base)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for tag, g in summary["groups"].items():
        for key in ("accuracy", "auc", "median_diff", "neg_median", "pos_median"):
            rows.append((tag, key, "", g[key]))
        for f in sorted(DEFAULT_FPRS, reverse=True):
            rows.append((tag, "tpr", _fpr_key(f), g["tpr"][_fpr_key(f)]))
    rows.sort(key=lambda r: (r[0], r[1], -float(r[2]) if r[2] else 0.0))
    io.write_csv(out / "report.csv", ["group", "metric", "fpr", "value"], rows, stamp)
    roc = []
    for tag in sorted(report.groups):
        g = report.groups[tag]
        roc += [(tag, i, x, y) for i, (x, y) in enumerate(zip(g.roc_fpr, g.roc_tpr))]
    io.write_csv(out / "roc.csv", ["group", "index", "fpr", "tpr"], roc, stamp)
    io.write_json(out / "summary.json", summary)
    for w in report.warnings:
        log.warning(w)
    return summary


# ------------------------------------------------------------------ sweep


def grid_cells(grid: dict) -> list[dict]:
    """Cartesian product of a ``{dotted.key: [values]}`` grid, keys sorted."""
    if not grid:
        return [{}]
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise UsageError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _flat_metrics(summary: dict) -> dict:
    flat = {}
    for tag, g in summary["groups"].items():
        for f, v in g["tpr"].items():
            flat[f"{tag}.tpr@{f}"] = v
        for key in ("accuracy", "median_diff", "auc"):
            flat[f"{tag}.{key}"] = g[key]
    flat["avg_accuracy"] = summary["avg_accuracy"]
    flat["std_accuracy"] = summary["std_accuracy"]
    return flat


def _run_cell(args) -> dict:
    base_cfg, params, seed, cell_dir = args
    cfg = base_cfg.replace(seed=seed)
    for k, v in params.items():
        cfg = cfg.with_override(k, v)
    cell_dir = Path(cell_dir)
    generate_to_dir(cfg, cell_dir / "data")
    run = train_to_dir(cfg, cell_dir / "data", cell_dir / "train")
    ckpt = cell_dir / "train" / run["checkpoints"][-1]
    summary = eval_to_dir(ckpt, cell_dir / "data", cell_dir / "eval")
    return _flat_metrics(summary)


def sweep(cfg: ExperimentConfig, grid: dict, seeds: list[int], out: Path, jobs: int = 1) -> tuple[list, list]:
    out = Path(out)
    cells = grid_cells(grid)
    tasks, cell_of = [], []
    for ci, params in enumerate(cells):
        for seed in seeds:
            tasks.append((cfg, params, seed, str(out / f"cell{ci:03d}_seed{seed}")))
            cell_of.append(ci)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            metrics = list(pool.map(_run_cell, tasks))
    else:
        metrics = [_run_cell(t) for t in tasks]

    keys = sorted(grid)
    metric_names = sorted({k for m in metrics for k in m})
    stamp = {"config_hash": io.config_hash(cfg.to_dict()), "seeds": ",".join(map(str, seeds))}
    rows = []
    for ci, (_, params, seed, _), m in zip(cell_of, tasks, metrics):
        rows.append([ci, seed] + [json.dumps(params[k]) for k in keys] + [m.get(n) for n in metric_names])
    io.write_csv(out / "results.csv", ["cell", "seed"] + keys + metric_names, rows, stamp)

    agg = []
    for ci, params in enumerate(cells):
        ms = metrics[ci * len(seeds) : (ci + 1) * len(seeds)]
        row = [ci, len(ms)] + [json.dumps(params[k]) for k in keys]
        for n in metric_names:
            vals = np.array([m[n] for m in ms if m.get(n) is not None], dtype=np.float64)
            row += [float(vals.mean()) if len(vals) else None, float(vals.std(ddof=1)) if len(vals) > 1 else None]
        agg.append(row)
    header = ["cell", "n_seeds"] + keys + [f"{n}:{s}" for n in metric_names for s in ("mean", "std")]
    io.write_csv(out / "aggregate.csv", header, agg, stamp)
    return rows, agg


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arl", description="Asymmetric rejection loss experiments on synthetic identity data.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
        sp.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    common(g)

    t = sub.add_parser("train", help="train phase 1 and, unless mode=baseline, phase 2")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--mode", choices=sorted(MODES))

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--baseline-report", help="summary.json of a baseline evaluation, for deltas")

    s = sub.add_parser("sweep", help="grid x seeds of generate/train/eval with aggregation")
    common(s)
    s.add_argument("--mode", choices=sorted(MODES))
    s.add_argument("--grid", default="{}", help="JSON object or file: {\"section.key\": [values, ...]}")
    s.add_argument("--seeds", default="0", help="comma-separated seeds")
    s.add_argument("--jobs", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _parse_grid(text: str) -> dict:
    path = Path(text)
    if not text.lstrip().startswith("{") and path.exists():
        text = path.read_text()
    try:
        grid = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"grid is not valid JSON: {exc}") from exc
    if not isinstance(grid, dict):
        raise UsageError("grid must be a JSON object")
    return grid


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            cfg = load_config(args.config, args.seed)
            manifest = generate_to_dir(cfg, Path(args.out))
            print(json.dumps({"dataset_hash": manifest["dataset_hash"], "counts": manifest["counts"]}, sort_keys=True))
        elif args.command == "train":
            cfg = load_config(args.config, args.seed, args.mode)
            run = train_to_dir(cfg, Path(args.data), Path(args.out))
            print(json.dumps({k: run[k] for k in ("mode", "checkpoints", "steps", "config_hash")}, sort_keys=True))
        elif args.command == "eval":
            summary = eval_to_dir(Path(args.checkpoint), Path(args.data), Path(args.out), args.baseline_report)
            print(json.dumps({"avg_accuracy": summary["avg_accuracy"], "std_accuracy": summary["std_accuracy"]}))
        elif args.command == "sweep":
            cfg = load_config(args.config, None, args.mode)
            seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
            if args.seed is not None:
                seeds = [args.seed]
            rows, agg = sweep(cfg, _parse_grid(args.grid), seeds, Path(args.out), args.jobs)
            print(json.dumps({"runs": len(rows), "cells": len(agg)}))
    except (ARLError, ValueError, OSError) as exc:
        _fail(args.command, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
