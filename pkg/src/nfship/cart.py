"""CART binary trees (Gini) and DNF rule extraction.

Trees are grown one-vs-all, one per class, and the root-to-positive-leaf
paths become per-class rules: an OR of ANDs of threshold comparisons over
the seven AIS fields.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

AIS_FIELDS = ("to_bow", "to_stern", "to_starboard", "to_port", "width", "length", "draught")

OP_GT = ">"
OP_LE = "<="


@dataclass(frozen=True)
class CartParams:
    max_depth: int = 6
    min_samples_split: int = 2
    min_samples_leaf: int = 5
    criterion: str = "gini"

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.criterion != "gini":
            raise ValueError("only the gini criterion is supported")


@dataclass
class TreeNode:
    """Internal node (feature_index/threshold/left/right) or leaf.

    Routing convention: x[feature_index] <= threshold goes left, > goes right.
    """
    feature_index: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    positive_fraction: float | None = None
    sample_count: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None


@dataclass(frozen=True)
class Comparison:
    feature_index: int
    op: str  # OP_GT or OP_LE
    threshold: float

    def holds(self, x) -> bool:
        v = x[self.feature_index]
        return v > self.threshold if self.op == OP_GT else v <= self.threshold

    def holds_batch(self, X: np.ndarray) -> np.ndarray:
        col = X[:, self.feature_index]
        return col > self.threshold if self.op == OP_GT else col <= self.threshold


@dataclass(frozen=True)
class Condition:
    """Conjunction of comparisons along one root-to-leaf path."""
    comparisons: tuple[Comparison, ...]

    def __post_init__(self):
        if not self.comparisons:
            raise ValueError("a condition must contain at least one comparison")

    def holds(self, x) -> bool:
        return all(c.holds(x) for c in self.comparisons)

    def holds_batch(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(len(X), dtype=bool)
        for c in self.comparisons:
            out &= c.holds_batch(X)
        return out


@dataclass
class ClassRule:
    label: str
    conditions: list[Condition] = field(default_factory=list)

    @property
    def n_comparisons(self) -> int:
        return sum(len(c.comparisons) for c in self.conditions)


@dataclass
class RuleSet:
    class_rules: list[ClassRule]
    feature_names: tuple[str, ...] = AIS_FIELDS

    @property
    def n_classes(self) -> int:
        return len(self.class_rules)

    @property
    def n_conditions(self) -> int:
        return sum(len(r.conditions) for r in self.class_rules)

    @property
    def n_comparisons(self) -> int:
        return sum(r.n_comparisons for r in self.class_rules)

    def to_json_dict(self) -> dict:
        return {
            "feature_order": list(self.feature_names),
            "classes": [
                {
                    "class": r.label,
                    "conditions": [
                        [
                            {
                                "field": self.feature_names[c.feature_index],
                                "op": c.op,
                                "threshold": c.threshold,
                            }
                            for c in cond.comparisons
                        ]
                        for cond in r.conditions
                    ],
                }
                for r in self.class_rules
            ],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)

    @classmethod
    def from_json_dict(cls, d: dict) -> "RuleSet":
        names = tuple(d["feature_order"])
        index = {n: i for i, n in enumerate(names)}
        rules = []
        for entry in d["classes"]:
            conds = [
                Condition(tuple(
                    Comparison(index[c["field"]], c["op"], float(c["threshold"]))
                    for c in cond
                ))
                for cond in entry["conditions"]
            ]
            rules.append(ClassRule(entry["class"], conds))
        return cls(rules, names)

    @classmethod
    def from_json(cls, s: str) -> "RuleSet":
        return cls.from_json_dict(json.loads(s))


def _gini(pos: float, total: float) -> float:
    if total == 0:
        return 0.0
    p = pos / total
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exhaustive (feature, midpoint) search maximizing Gini decrease.

    Ties broken by lowest feature index, then lowest threshold, so fits
    are deterministic and auditable.
    """
    n = len(y)
    pos_total = int(y.sum())
    parent = _gini(pos_total, n)
    best = None  # (decrease, feature, threshold)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        cum_pos = np.cumsum(ys)
        # candidate cut after position i (0-based): left = first i+1 rows
        idx = np.arange(n - 1)
        valid = xs[idx] < xs[idx + 1]
        left_n = idx + 1
        valid &= (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not valid.any():
            continue
        cand = idx[valid]
        ln = cand + 1.0
        rn = n - ln
        lp = cum_pos[cand]
        rp = pos_total - lp
        gl = 1.0 - (lp / ln) ** 2 - (1.0 - lp / ln) ** 2
        gr = 1.0 - (rp / rn) ** 2 - (1.0 - rp / rn) ** 2
        dec = parent - (ln / n) * gl - (rn / n) * gr
        k = int(np.argmax(dec))  # first max: lowest threshold within feature
        d = float(dec[k])
        thr = float((xs[cand[k]] + xs[cand[k] + 1]) / 2.0)
        if best is None or d > best[0] + 1e-12:
            best = (d, f, thr)
    if best is None or best[0] <= 1e-12:
        return None
    return best


def fit_tree(X, y, params: CartParams) -> TreeNode:
    """Grow a binary CART tree with the Gini criterion.

    Stops on purity, identical rows, depth, min_samples_split, or when no
    split leaves both children with min_samples_leaf rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("X must be 2-D and aligned with non-empty y")

    def grow(rows: np.ndarray, depth: int) -> TreeNode:
        yy = y[rows]
        n = len(yy)
        frac = float(yy.mean())
        leaf = TreeNode(positive_fraction=frac, sample_count=n)
        if frac in (0.0, 1.0) or depth >= params.max_depth or n < params.min_samples_split:
            return leaf
        xx = X[rows]
        if (xx == xx[0]).all():
            return leaf
        split = _best_split(xx, yy, params.min_samples_leaf)
        if split is None:
            return leaf
        _, f, thr = split
        go_left = xx[:, f] <= thr
        node = TreeNode(feature_index=f, threshold=thr, sample_count=n)
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return node

    return grow(np.arange(len(y)), 0)


def predict_tree(tree: TreeNode, x) -> tuple[bool, float]:
    """Route x to a leaf; positive iff the leaf's positive fraction > 0.5."""
    node = tree
    while not node.is_leaf:
        node = node.left if x[node.feature_index] <= node.threshold else node.right
    return node.positive_fraction > 0.5, node.positive_fraction


def predict_tree_batch(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.empty(len(X), dtype=bool)
    for i, x in enumerate(X):
        out[i] = predict_tree(tree, x)[0]
    return out


def fit_one_vs_all(X, labels, class_names: list[str], params: CartParams) -> list[TreeNode]:
    """One tree per class, trained with that class positive and the rest negative."""
    if len(class_names) < 2:
        raise ValueError("one-vs-all needs at least 2 classes")
    labels = np.asarray(labels)
    trees = []
    for i, name in enumerate(class_names):
        pos = labels == i
        if not pos.any():
            raise ValueError(f"class {name!r} has no positive examples")
        trees.append(fit_tree(X, pos, params))
    return trees


def extract_rules(trees: list[TreeNode], class_names: list[str],
                  feature_names: tuple[str, ...] = AIS_FIELDS) -> RuleSet:
    """One DNF ClassRule per tree: a condition per leaf with positive majority,
    comparisons in root-to-leaf order."""
    rules = []
    for name, tree in zip(class_names, trees):
        conditions: list[Condition] = []

        def walk(node: TreeNode, path: tuple[Comparison, ...]):
            if node.is_leaf:
                if node.positive_fraction > 0.5 and path:
                    conditions.append(Condition(path))
                elif node.positive_fraction > 0.5 and not path:
                    # degenerate single-leaf tree: always-true rule has no
                    # comparisons to carry; emit nothing and warn below
                    pass
                return
            walk(node.left, path + (Comparison(node.feature_index, OP_LE, node.threshold),))
            walk(node.right, path + (Comparison(node.feature_index, OP_GT, node.threshold),))

        walk(tree, ())
        if not conditions:
            warnings.warn(f"class {name!r}: tree has no positive split path; rule is empty")
        rules.append(ClassRule(name, conditions))
    return RuleSet(rules, feature_names)


def rule_stats(rule: ClassRule, X: np.ndarray, y_positive: np.ndarray):
    """Per-condition (coverage, precision) computed crisply.

    precision = true positives / covered rows; None when nothing is covered.
    """
    X = np.asarray(X, dtype=float)
    y_positive = np.asarray(y_positive, dtype=bool)
    stats = []
    for cond in rule.conditions:
        covered = cond.holds_batch(X)
        n_cov = int(covered.sum())
        prec = float(y_positive[covered].mean()) if n_cov else None
        stats.append((n_cov, prec))
    return stats
