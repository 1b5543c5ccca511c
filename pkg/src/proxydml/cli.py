"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numeric abort,
4 bound violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bounds
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, materialize, model_config, train_config
from .data import (
    Dataset,
    SplitSpec,
    SynthConfig,
    apply_split,
    generate_synthetic,
    load_csv,
    make_split,
    save_csv,
    subset_classes,
)
from .embedding import embed
from .errors import ConfigError, NumericError, ProxyDMLError
from .evaluation import cluster_quality, recall_at_k
from .proxies import proxy_approx_error
from .trainer import MetricsRecord, TrainingAborted, init_run, train

log = logging.getLogger("proxydml")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VIOLATION = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "PROXYDML_OUTPUT_ROOT"


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / name


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ----------------------------------------------------------------- data


def cmd_gen_data(args) -> int:
    cfg = SynthConfig(args.classes, args.per_class, args.dim, args.center_scale, args.stddev, args.seed)
    ds = generate_synthetic(cfg)
    split = make_split(ds.num_classes, args.train_fraction, args.split_seed, args.ordered)
    out = Path(args.output) if args.output else _default_out("data")
    out.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out / "data.csv")
    (out / "split.json").write_text(split.to_json() + "\n", encoding="utf-8")
    echo = {"synth": cfg.to_dict(), "train_fraction": args.train_fraction,
            "split_seed": args.split_seed, "ordered": args.ordered}
    _write_json(out / "synth_config.json", echo)
    print(json.dumps(echo, sort_keys=True))
    return EXIT_OK


def load_run_data(config: dict) -> tuple[Dataset, Dataset]:
    d = config["data"]
    if d["csv"]:
        ds = load_csv(d["csv"])
    else:
        ds = generate_synthetic(SynthConfig(**d["synth"]))
    if d["split"]:
        split = SplitSpec.from_json(Path(d["split"]).read_text(encoding="utf-8"))
    else:
        split = make_split(ds.num_classes, d["train_fraction"], d["split_seed"], d["ordered"])
    return apply_split(ds, split)


def _eval_dataset(args) -> Dataset:
    ds = load_csv(args.data)
    if not args.split:
        return ds
    split = SplitSpec.from_json(Path(args.split).read_text(encoding="utf-8"))
    if args.side == "all":
        return ds
    ids = split.test_class_ids if args.side == "test" else split.train_class_ids
    return subset_classes(ds, ids, f"{ds.name}-{args.side}")


# ---------------------------------------------------------------- train


def run_training(config: dict, out: Path) -> dict:
    """Train per ``config`` into ``out``; returns the last eval record as a dict."""
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config)
    cfg, mcfg = train_config(config), model_config(config)
    train_ds, eval_ds = load_run_data(config)
    model, proxies = init_run(cfg, train_ds, mcfg)
    ckpt = out / "checkpoint.bin"
    save_checkpoint(ckpt, model, proxies, config)
    last_eval: dict = {}
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        def on_record(rec: MetricsRecord) -> None:
            fh.write(rec.to_json() + "\n")
            fh.flush()
            if rec.is_eval:
                last_eval.update(json.loads(rec.to_json()))

        train(cfg, train_ds, eval_ds, mcfg, on_record=on_record,
              on_eval=lambda step, m, p: save_checkpoint(ckpt, m, p, config),
              model=model, proxies=proxies)
    save_checkpoint(ckpt, model, proxies, config)
    last_eval["num_proxies"] = len(proxies)
    return last_eval


def cmd_train(args) -> int:
    config = load_config(args.config, args.set)
    out = Path(args.output) if args.output else _default_out("run")
    try:
        run_training(config, out)
    except TrainingAborted as exc:
        with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"aborted": str(exc), "record": json.loads(exc.record.to_json())}) + "\n")
        raise CommandError(f"{exc}; last good checkpoint kept at {out / 'checkpoint.bin'}", EXIT_NUMERIC)
    print(f"wrote {out / 'metrics.jsonl'} and {out / 'checkpoint.bin'}")
    return EXIT_OK


# ----------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = _eval_dataset(args)
    if ds.dim != ck.model.input_dim:
        raise CommandError(f"dataset dim {ds.dim} does not match model input dim {ck.model.input_dim}")
    emb = embed(ck.model, ds.points)
    retrieval = recall_at_k(emb, ds.labels, args.ks)
    clustering = cluster_quality(emb, ds.labels, seed=args.seed)
    report = {
        "recall_at": {str(k): v for k, v in retrieval.recall_at.items()},
        "nmi": clustering.nmi,
        "kmeans_inertia": clustering.kmeans_inertia,
        "epsilon": proxy_approx_error(emb, ck.proxies.vectors).epsilon,
        "num_queries": retrieval.num_queries,
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# --------------------------------------------------------------- bounds


def bound_reports(emb, labels, proxies, samples: int, seed: int, margin: float, num_negatives: int,
                  norms=None, total_sample: int | None = None, distance_scale: float = 0.5) -> list[dict]:
    """All five bound checks on one (embeddings, proxies) snapshot.

    Euclidean checks run on the raw vectors; the constant-norm checks run on
    the snapshot rescaled to constant norms (means, or ``norms`` if given).
    """
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    neg_avail = int(min(np.sum(labels != c) for c in np.unique(labels)))
    m = max(1, min(num_negatives, neg_avail))
    a, y, z = bounds.sample_labeled_triplets(rng, labels, samples, m)
    trip = np.column_stack([a, y, z[:, 0]])
    ncfg = bounds.normalize_config(emb, proxies)
    x_c, p_c = ncfg.rescaled(*(norms or (None, None)))
    reports = [
        bounds.verify_ordinal_preservation(emb, proxies, trip),
        bounds.verify_ranking_expectation_bound(emb, proxies, trip),
        bounds.verify_nca_bound(x_c, p_c, a, y, z, distance_scale=distance_scale),
        bounds.verify_triplet_bound(x_c, p_c, trip, margin, distance_scale=distance_scale),
    ]
    try:
        reports.append(bounds.verify_total_loss_bound(
            x_c, labels, p_c, margin=margin, sample=total_sample, seed=seed, distance_scale=distance_scale))
        out = [r.to_dict() for r in reports]
    except ConfigError as exc:
        out = [r.to_dict() for r in reports]
        out.append({"bound_name": "total_loss", "skipped": str(exc)})
    for entry in out:
        entry["normalization"] = {"N_x": ncfg.N_x, "N_p": ncfg.N_p, "alpha": ncfg.alpha,
                                  "rescaled_to": list(norms) if norms else None}
    return out


def cmd_verify_bounds(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = _eval_dataset(args)
    if ds.dim != ck.model.input_dim:
        raise CommandError(f"dataset dim {ds.dim} does not match model input dim {ck.model.input_dim}")
    emb = embed(ck.model, ds.points)
    reports = bound_reports(emb, ds.labels, ck.proxies.vectors, args.samples, args.seed, args.margin,
                            args.negatives, args.norms, args.total_sample, args.distance_scale)
    text = json.dumps(reports, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    violated = [r["bound_name"] for r in reports if r.get("violations", 0) > 0]
    if violated:
        print(f"bound violations: {', '.join(violated)}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def _sweep_one(job):
    config, ratio, out = job
    row = {"ratio": ratio, "assignment": config["train"]["assignment"], "num_proxies": "",
           "recall_at_1": "", "nmi": "", "epsilon": "", "status": "ok", "error": ""}
    try:
        last = run_training(config, Path(out))
        row.update(num_proxies=last["num_proxies"], recall_at_1=last["recall_at_k"]["1"],
                   nmi=last["nmi"], epsilon=last["epsilon"])
    except (ProxyDMLError, OSError, KeyError) as exc:
        row.update(status="failed", error=str(exc))
    return row


def cmd_sweep_proxy_ratio(args) -> int:
    base = load_config(args.config, args.set)
    out = Path(args.output) if args.output else _default_out("sweep")
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for r in args.ratios:
        if not r > 0:
            raise CommandError(f"ratios must be positive, got {r}")
        cfg = materialize(base, [f"train.proxy_ratio={r!r}"])
        jobs.append((cfg, r, str(out / f"ratio_{r:g}")))
    if args.parallel > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(row)
    return EXIT_OK


# -------------------------------------------------------------- compare


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "aborted" in obj:
            continue
        records.append(MetricsRecord.from_json(line))
    return records


def steps_to_threshold(records: list[MetricsRecord], threshold: float, k: int = 1) -> float:
    for rec in records:
        if rec.is_eval and rec.recall_at_k.get(k, -1.0) >= threshold:
            return float(rec.step)
    return math.inf


def speedup(steps_self: float, steps_other: float) -> float:
    """How many times fewer steps ``self`` needed than ``other``."""
    if math.isinf(steps_self) and math.isinf(steps_other):
        return math.nan
    if steps_self == 0:
        return 1.0 if steps_other == 0 else math.inf
    return steps_other / steps_self


def compare_runs(paths, threshold: float = 0.8) -> dict:
    runs = []
    for p in paths:
        recs = read_metrics(p)
        evals = [r for r in recs if r.is_eval]
        if not evals:
            raise CommandError(f"{p} has no recall records")
        runs.append({"file": str(p), "steps_to_threshold": steps_to_threshold(recs, threshold),
                     "final_recall_at_1": evals[-1].recall_at_k.get(1)})
    table = {
        a["file"]: {b["file"]: speedup(a["steps_to_threshold"], b["steps_to_threshold"]) for b in runs}
        for a in runs
    }
    return {"threshold": threshold, "runs": runs, "speedup": table}


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "∞"
        if math.isnan(v):
            return "n/a"
        return f"{v:g}"
    return str(v)


def cmd_compare(args) -> int:
    if len(args.metrics) < 2:
        raise CommandError("compare needs at least two metrics files")
    result = compare_runs(args.metrics, args.threshold)
    print(f"threshold recall@1 >= {args.threshold}")
    for run in result["runs"]:
        print(f"  {run['file']}: steps={_fmt(run['steps_to_threshold'])} final_recall@1={_fmt(run['final_recall_at_1'])}")
    print("speedup (row needs N times fewer steps than column):")
    for a, row in result["speedup"].items():
        print(f"  {a}: " + ", ".join(f"{b}={_fmt(v)}" for b, v in row.items()))
    if args.json:
        def enc(v):
            return _fmt(v) if isinstance(v, float) and not math.isfinite(v) else v
        clean = {
            "threshold": result["threshold"],
            "runs": [dict(run, steps_to_threshold=enc(run["steps_to_threshold"])) for run in result["runs"]],
            "speedup": {a: {b: enc(v) for b, v in row.items()} for a, row in result["speedup"].items()},
        }
        Path(args.json).write_text(json.dumps(clean, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proxydml", description="Proxy-based distance metric learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset and a class split")
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--center-scale", type=float, default=10.0)
    p.add_argument("--stddev", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--ordered", action="store_true", help="train on the lowest class ids")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and its proxies")
    p.add_argument("-c", "--config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_train)

    def data_args(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="dataset CSV")
        p.add_argument("--split", help="split JSON; selects --side")
        p.add_argument("--side", choices=("test", "train", "all"), default="test")
        p.add_argument("-o", "--output")

    p = sub.add_parser("eval", help="Recall@K, NMI and proxy error of a checkpoint")
    data_args(p)
    p.add_argument("--ks", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-bounds", help="check the proxy bounds on a checkpoint")
    data_args(p)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--negatives", type=int, default=4, help="|Z| for the NCA bound")
    p.add_argument("--norms", type=float, nargs=2, metavar=("N_X", "N_P"),
                   help="rescale points/proxies to these norms instead of their means")
    p.add_argument("--total-sample", type=int, help="sample this many triplets for large populations")
    p.add_argument("--distance-scale", type=float, default=0.5)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("sweep-proxy-ratio", help="train once per proxy-per-class ratio")
    p.add_argument("-c", "--config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--ratios", type=float, nargs="+", required=True)
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep_proxy_ratio)

    p = sub.add_parser("compare", help="steps-to-threshold table for metrics files")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--json", help="also write the table as JSON")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ProxyDMLError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
