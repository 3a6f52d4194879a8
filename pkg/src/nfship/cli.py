"""Command-line pipeline: synthetic data, datasets, rules, training, evaluation."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, BilinearBaseline
from .cart import CartParams, extract_rules, fit_one_vs_all, RuleSet
from .data import (SplitSpec, build_image_centred, build_vessel_centred, config_hash,
                   filter_rare_classes, load_ais_csv, load_dataset, read_nff1,
                   save_dataset, split, write_ais_csv, write_nff1)
from .evaluation import (ablation_sweep, ablation_to_json, evaluate_classifier,
                         render_ablation_table)
from .model import NeuroFuzzyConfig, NeuroFuzzyModel
from .synthetic import gen_synthetic

log = logging.getLogger("nfship")


def _emit(args, payload: dict, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, default=str))
    elif human:
        print(human)


def _write_loss_csv(path, trace) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(trace, start=1):
            w.writerow([i, repr(float(v))])


def cmd_gen_synthetic(args) -> int:
    ais, images = gen_synthetic(vessels=args.vessels, classes=args.classes,
                                noise=args.noise, seed=args.seed,
                                imbalance=args.imbalance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ais_csv(out / "ais.csv", ais)
    write_nff1(out / "features.nff1", images)
    cfg = {"vessels": args.vessels, "classes": args.classes, "noise": args.noise,
           "seed": args.seed, "imbalance": args.imbalance}
    truth = {
        "seed": args.seed,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "labels": {str(r.mmsi): r.ship_type for r in ais},
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True))
    _emit(args, {"vessels": len(ais), "images": len(images), "out": str(out),
                 "config_hash": truth["config_hash"]},
          f"generated {len(ais)} vessels / {len(images)} images in {out}")
    return 0


def cmd_build_dataset(args) -> int:
    ais = load_ais_csv(args.ais).records
    images = read_nff1(args.features)
    out = Path(args.out)
    built = {}
    for variant in (("ic", "vc") if args.variant == "both" else (args.variant,)):
        ds = (build_image_centred if variant == "ic" else build_vessel_centred)(images, ais)
        if args.min_vessels > 0:
            ds = filter_rare_classes(ds, args.min_vessels)
        spec = SplitSpec(train_fraction=args.train_fraction, seed=args.seed,
                         group_by_mmsi=True)
        train, test = split(ds, spec)
        extra = {"source_config_hash": config_hash({"ais": str(args.ais),
                                                    "features": str(args.features),
                                                    "min_vessels": args.min_vessels,
                                                    "train_fraction": args.train_fraction,
                                                    "seed": args.seed})}
        save_dataset(train, out / variant / "train", seed=args.seed, extra=extra)
        save_dataset(test, out / variant / "test", seed=args.seed, extra=extra)
        built[variant] = {"train_rows": len(train), "test_rows": len(test),
                          "classes": ds.class_names}
    _emit(args, built, "\n".join(f"{k}: {v['train_rows']} train / {v['test_rows']} test rows"
                                 for k, v in built.items()))
    return 0


def cmd_extract_rules(args) -> int:
    ds = load_dataset(args.dataset)
    params = CartParams(max_depth=args.depth, min_samples_leaf=args.min_leaf)
    trees = fit_one_vs_all(ds.ais, ds.labels, list(ds.class_names), params)
    rules = extract_rules(trees, list(ds.class_names))
    payload = rules.to_json_dict()
    payload["seed"] = args.seed
    payload["cart"] = {"max_depth": args.depth, "min_samples_leaf": args.min_leaf}
    payload["config_hash"] = config_hash(payload["cart"])
    Path(args.out).write_text(json.dumps(payload, indent=2))
    _emit(args, {"conditions": rules.n_conditions, "comparisons": rules.n_comparisons,
                 "out": args.out},
          f"extracted {rules.n_conditions} conditions / {rules.n_comparisons} comparisons "
          f"-> {args.out}")
    return 0


def _load_rules(path) -> RuleSet:
    return RuleSet.from_json_dict(json.loads(Path(path).read_text()))


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    out = Path(args.out)
    if args.model in ("neurofuzzy", "global-slopes"):
        if not args.rules:
            print("error: --rules is required for rule-based models", file=sys.stderr)
            return 2
        rules = _load_rules(args.rules)
        cfg = NeuroFuzzyConfig(r_and=-abs(args.r), r_or=abs(args.r), epochs=args.epochs,
                               batch_size=args.batch_size, learning_rate=args.lr,
                               seed=args.seed,
                               slope_mode="global" if args.model == "global-slopes" else "per-sample")
        model = NeuroFuzzyModel(rules, cfg)
        trace = model.train(ds)
        model.save(out)
    elif args.model == "baseline":
        cfg = BaselineConfig(epochs=args.epochs, batch_size=args.batch_size,
                             learning_rate=args.lr, seed=args.seed)
        model = BilinearBaseline(ds.n_classes, cfg)
        trace = model.train(ds)
        model.save(out)
    else:
        print(f"error: unknown model {args.model!r}", file=sys.stderr)
        return 2
    _write_loss_csv(out / "loss.csv", trace)
    _emit(args, {"model": args.model, "epochs": len(trace),
                 "final_loss": trace[-1], "out": str(out)},
          f"trained {args.model} for {len(trace)} epochs, final loss {trace[-1]:.4f} -> {out}")
    return 0


def _load_model(model_dir):
    manifest = json.loads((Path(model_dir) / "manifest.json").read_text())
    if manifest.get("format") == "nfship-baseline-checkpoint":
        return BilinearBaseline.load(model_dir), "baseline"
    return NeuroFuzzyModel.load(model_dir), "neurofuzzy"


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.dataset)
    model, model_id = _load_model(args.model_dir)
    preds, probs = model.predict_batch(ds.features, ds.ais)
    metric = args.metric or ("map" if ds.kind == "ic" else "macro_f1")
    report = evaluate_classifier(preds, probs, ds.labels, ds, model_id, args.seed, metric)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json_dict(), indent=2))
    _emit(args, report.to_json_dict(), report.render_table())
    return 0


def cmd_predict(args) -> int:
    ds = load_dataset(args.dataset)
    model, model_id = _load_model(args.model_dir)
    i = args.row
    if not 0 <= i < len(ds):
        print(f"error: row {i} out of range (dataset has {len(ds)} rows)", file=sys.stderr)
        return 2
    if model_id == "baseline":
        preds, probs = model.predict_batch(ds.features[i:i + 1], ds.ais[i:i + 1])
        payload = {"label": ds.class_names[int(preds[0])], "scores": probs[0].tolist()}
        _emit(args, payload, f"predicted: {payload['label']}")
        return 0
    label, probs, explanation = model.predict(ds.features[i], ds.ais[i])
    payload = {"label": ds.class_names[label], "scores": probs.tolist()}
    human = [f"predicted: {payload['label']} (p={probs[label]:.3f})"]
    if args.explain:
        payload["explanation"] = explanation
        for cond in explanation["conditions"]:
            human.append(f"  {cond['tag']} weight={cond['weight']:.4f} degree={cond['degree']:.4f}")
            for comp in cond["comparisons"]:
                human.append(f"      {comp['field']} {comp['op']} {comp['threshold']} "
                             f"(s={comp['slope']:.3f}, membership={comp['membership']:.4f})")
    _emit(args, payload, "\n".join(human))
    return 0


def cmd_ablate(args) -> int:
    train_ds = load_dataset(args.train)
    test_ds = load_dataset(args.test)
    cfg = NeuroFuzzyConfig(epochs=args.epochs, batch_size=args.batch_size,
                           learning_rate=args.lr, seed=args.seed)
    depths = [int(x) for x in args.depths.split(",")]
    rs = [float(x) for x in args.rs.split(",")]
    cells = ablation_sweep(train_ds, test_ds, depths, rs, cfg,
                           CartParams(min_samples_leaf=args.min_leaf))
    if args.out:
        Path(args.out).write_text(ablation_to_json(cells, cfg))
    _emit(args, {"cells": [c.__dict__ for c in cells]}, render_ablation_table(cells))
    return 0


def cmd_export_losses(args) -> int:
    rows = list(csv.DictReader(Path(args.infile).open()))
    if not rows or not {"epoch", "loss"} <= set(rows[0]):
        print("error: loss CSV must have epoch,loss columns", file=sys.stderr)
        return 2
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for r in rows:
            w.writerow([int(r["epoch"]), float(r["loss"])])
    _emit(args, {"epochs": len(rows), "out": args.out},
          f"exported {len(rows)} epochs -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfship",
                                description="Neuro-fuzzy ship type classification toolkit")
    p.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate a synthetic AIS + feature corpus")
    g.add_argument("--vessels", type=int, default=200)
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--imbalance", choices=["table3"], default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synthetic)

    b = sub.add_parser("build-dataset", help="CSV + NFF1 -> IC/VC train/test manifests")
    b.add_argument("--ais", required=True)
    b.add_argument("--features", required=True)
    b.add_argument("--variant", choices=["ic", "vc", "both"], default="both")
    b.add_argument("--min-vessels", type=int, default=0,
                   help="drop classes with <= this many vessels (0 disables)")
    b.add_argument("--train-fraction", type=float, default=0.75)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_dataset)

    e = sub.add_parser("extract-rules", help="fit one-vs-all trees and extract DNF rules")
    e.add_argument("--dataset", required=True)
    e.add_argument("--depth", type=int, default=6)
    e.add_argument("--min-leaf", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract_rules)

    t = sub.add_parser("train", help="train a model, write checkpoint + loss CSV")
    t.add_argument("--model", choices=["neurofuzzy", "baseline", "global-slopes"],
                   default="neurofuzzy")
    t.add_argument("--dataset", required=True)
    t.add_argument("--rules")
    t.add_argument("--r", type=float, default=5.4)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    v.add_argument("--model-dir", required=True)
    v.add_argument("--dataset", required=True)
    v.add_argument("--metric", choices=["macro_f1", "map"])
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="predict one dataset row, optionally explained")
    pr.add_argument("--model-dir", required=True)
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--row", type=int, default=0)
    pr.add_argument("--explain", action="store_true")
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="depth x orness grid sweep")
    a.add_argument("--train", required=True)
    a.add_argument("--test", required=True)
    a.add_argument("--depths", default="4,6,8,10")
    a.add_argument("--rs", default="2.14,5.4,14")
    a.add_argument("--epochs", type=int, default=100)
    a.add_argument("--batch-size", type=int, default=32)
    a.add_argument("--lr", type=float, default=1e-4)
    a.add_argument("--min-leaf", type=int, default=5)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-losses", help="loss CSV -> plot-ready CSV")
    x.add_argument("--infile", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_losses)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NF_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: missing input file: {e}", file=sys.stderr)
        return 2
    except (ValueError, IOError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
