"""Classification metrics and the depth-by-orness ablation sweep."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .cart import CartParams, extract_rules, fit_one_vs_all
from .data import Dataset, config_hash
from .model import NeuroFuzzyConfig, NeuroFuzzyModel

log = logging.getLogger("nfship.evaluation")

R_LABELS = {14.0: "very high", 5.4: "high", 2.14: "medium high"}


def macro_f1(preds, truth, n_classes: int):
    """Unweighted mean of per-class F1.

    A class with zero support and zero predictions contributes F1 = 0 and is
    flagged, so imbalanced label sets cannot silently inflate the mean.
    """
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if len(preds) != len(truth) or len(preds) == 0:
        raise ValueError("preds and truth must be equal-length and non-empty")
    per_class = []
    flags = []
    for c in range(n_classes):
        tp = int(((preds == c) & (truth == c)).sum())
        fp = int(((preds == c) & (truth != c)).sum())
        fn = int(((preds != c) & (truth == c)).sum())
        if tp == 0 and fp == 0 and fn == 0:
            per_class.append(0.0)
            flags.append(c)
            continue
        per_class.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return float(np.mean(per_class)), per_class, flags


def average_precision(scores, truth) -> float | None:
    """Area under the all-point interpolated precision-recall curve.

    Returns None when there is no positive sample (AP undefined).
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = truth[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / n_pos
    # interpolated precision: running max from the right
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for p, r in zip(interp, recall):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def mean_average_precision(score_matrix, truth, n_classes: int):
    """Unweighted mean of one-vs-rest AP over classes with positives."""
    score_matrix = np.asarray(score_matrix, dtype=float)
    truth = np.asarray(truth)
    per_class = [average_precision(score_matrix[:, c], truth == c) for c in range(n_classes)]
    defined = [a for a in per_class if a is not None]
    return (float(np.mean(defined)) if defined else None), per_class


@dataclass
class EvalReport:
    dataset_kind: str
    model_id: str
    seed: int
    metric: str
    aggregate: float | None
    per_class: list
    class_names: list[str]
    confusion: list[list[int]] | None = None
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset_kind,
            "model": self.model_id,
            "seed": self.seed,
            "metric": self.metric,
            "aggregate": self.aggregate,
            "per_class": self.per_class,
            "class_names": self.class_names,
            "confusion": self.confusion,
            "metadata": self.metadata,
        }

    def render_table(self) -> str:
        lines = [f"{self.metric} scores ({self.dataset_kind}, model={self.model_id})"]
        width = max(len(n) for n in self.class_names) + 2
        for name, score in zip(self.class_names, self.per_class):
            txt = "n/a" if score is None else f"{100 * score:5.1f}"
            lines.append(f"  {name:<{width}}{txt}")
        agg = "n/a" if self.aggregate is None else f"{100 * self.aggregate:5.1f}"
        lines.append(f"  {'All':<{width}}{agg}")
        return "\n".join(lines)


def confusion_matrix(preds, truth, n_classes: int) -> list[list[int]]:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(truth, preds):
        cm[t, p] += 1
    return cm.tolist()


def evaluate_classifier(preds, probs, truth, ds: Dataset, model_id: str,
                        seed: int, metric: str = "macro_f1") -> EvalReport:
    truth = np.asarray(truth)
    if metric == "macro_f1":
        agg, per_class, flags = macro_f1(preds, truth, ds.n_classes)
        meta = {"zero_support_classes": flags}
    elif metric == "map":
        agg, per_class = mean_average_precision(probs, truth, ds.n_classes)
        meta = {"note": "classification AP over per-row confidence (no localization)"}
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return EvalReport(ds.kind, model_id, seed, metric, agg, per_class,
                      list(ds.class_names), confusion_matrix(preds, truth, ds.n_classes), meta)


@dataclass
class AblationCell:
    depth: int
    r: float
    macro_f1: float | None
    n_comparisons: int | None
    n_conditions: int | None
    seed: int
    error: str | None = None


def ablation_sweep(train_ds: Dataset, test_ds: Dataset,
                   depth_grid=(4, 6, 8, 10), r_grid=(2.14, 5.4, 14.0),
                   cfg: NeuroFuzzyConfig | None = None,
                   cart_params: CartParams | None = None) -> list[AblationCell]:
    """Retrain trees and the neuro-fuzzy model for every (depth, r) cell.

    Per-cell failures are recorded and the sweep continues.
    """
    if not depth_grid or not r_grid:
        raise ValueError("grids must be non-empty")
    cfg = cfg or NeuroFuzzyConfig()
    base_cart = cart_params or CartParams()
    class_names = list(train_ds.class_names)
    cells = []
    for depth in depth_grid:
        params = CartParams(max_depth=depth, min_samples_split=base_cart.min_samples_split,
                            min_samples_leaf=base_cart.min_samples_leaf)
        try:
            trees = fit_one_vs_all(train_ds.ais, train_ds.labels, class_names, params)
            rules = extract_rules(trees, class_names)
        except Exception as e:  # noqa: BLE001 - cell failures must not stop the sweep
            for r in r_grid:
                cells.append(AblationCell(depth, r, None, None, None, cfg.seed, str(e)))
            continue
        for r in r_grid:
            cell_cfg = NeuroFuzzyConfig(**{**cfg.to_dict(),
                                           "conv_channels": cfg.conv_channels,
                                           "r_and": -abs(r), "r_or": abs(r)})
            try:
                model = NeuroFuzzyModel(rules, cell_cfg)
                model.train(train_ds)
                preds, _ = model.predict_batch(test_ds.features, test_ds.ais)
                score, _, _ = macro_f1(preds, test_ds.labels, test_ds.n_classes)
                cells.append(AblationCell(depth, r, score, rules.n_comparisons,
                                          rules.n_conditions, cell_cfg.seed))
            except Exception as e:  # noqa: BLE001
                log.warning("ablation cell (D=%d, r=%.2f) failed: %s", depth, r, e)
                cells.append(AblationCell(depth, r, None, rules.n_comparisons,
                                          rules.n_conditions, cell_cfg.seed, str(e)))
    cells.sort(key=lambda c: (c.depth, c.r))
    return cells


def render_ablation_table(cells: list[AblationCell]) -> str:
    depths = sorted({c.depth for c in cells})
    rs = sorted({c.r for c in cells}, reverse=True)
    by_key = {(c.depth, c.r): c for c in cells}
    head = "r \\ D".ljust(24) + "".join(f"D={d:<8}" for d in depths)
    lines = [head]
    for r in rs:
        label = R_LABELS.get(r, "")
        row = f"{label} r={r:<6g}".ljust(24)
        for d in depths:
            c = by_key.get((d, r))
            row += ("fail".ljust(10) if c is None or c.macro_f1 is None
                    else f"{100 * c.macro_f1:<10.1f}")
        lines.append(row)
    comp = "# comparisons".ljust(24)
    cond = "# conditions".ljust(24)
    for d in depths:
        c = next((x for x in cells if x.depth == d and x.n_comparisons is not None), None)
        comp += f"{c.n_comparisons if c else '?':<10}"
        cond += f"{c.n_conditions if c else '?':<10}"
    lines += [comp, cond]
    return "\n".join(lines)


def ablation_to_json(cells: list[AblationCell], cfg: NeuroFuzzyConfig) -> str:
    return json.dumps({
        "config_hash": config_hash(cfg.to_dict()),
        "seed": cfg.seed,
        "cells": [c.__dict__ for c in cells],
    }, indent=2)
