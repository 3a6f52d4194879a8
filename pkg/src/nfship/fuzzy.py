"""Sigmoid memberships, weighted-exponential-mean logic and rule evaluation.

Comparisons are fuzzified with sigmoids centred at the tree thresholds;
conjunction and disjunction are replaced by weighted exponential means
(WEM), which approach hard min/max as |r| grows.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .cart import OP_GT, ClassRule, RuleSet

SIMPLEX_TOL = 1e-6
_EXP_CLAMP = 500.0


class SimplexError(ValueError):
    """Weight vector is not on the probability simplex."""


def membership_gt(x, s, v):
    """Degree of x > v: 1 / (1 + exp(-s (x - v))), saturating, never overflowing."""
    z = np.clip(np.multiply(s, np.subtract(x, v)), -_EXP_CLAMP, _EXP_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def membership_le(x, s, v):
    """Degree of x <= v: 1 / (1 + exp(-s (v - x)))."""
    z = np.clip(np.multiply(s, np.subtract(v, x)), -_EXP_CLAMP, _EXP_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def wem_and(c, r_and: float) -> float:
    """(1/r) ln((1/n) sum e^{r c_i}) with r < 0; lies in [min c, max c]."""
    c = np.asarray(c, dtype=float)
    if r_and >= 0:
        raise ValueError("r_and must be negative")
    if c.size == 0:
        raise ValueError("wem_and needs at least one input")
    # shifted log-sum-exp: logsumexp subtracts the max internally
    return float(logsumexp(r_and * c, b=1.0 / c.size) / r_and)


def wem_or(C, w, r_or: float) -> float:
    """(1/r) ln(sum w_i e^{r C_i}) with r > 0 and w on the simplex."""
    C = np.asarray(C, dtype=float)
    w = np.asarray(w, dtype=float)
    if r_or <= 0:
        raise ValueError("r_or must be positive")
    if C.shape != w.shape:
        raise ValueError("C and w must be aligned")
    validate_simplex(w)
    return float(logsumexp(r_or * C, b=w) / r_or)


def validate_simplex(w, tol: float = SIMPLEX_TOL) -> None:
    w = np.asarray(w, dtype=float)
    if (w < -tol).any() or abs(w.sum() - 1.0) > tol:
        raise SimplexError(f"weights must be >= 0 and sum to 1 +/- {tol}: {w}")


def eval_rule_crisp(rule: ClassRule, x) -> bool:
    """Boolean DNF with strict > and non-strict <=; empty rule is false."""
    return any(cond.holds(x) for cond in rule.conditions)


def eval_rule_fuzzy(rule: ClassRule, x, weights, slopes, r_and: float, r_or: float) -> float:
    """Truth degree of a weighted DNF rule: WEM-or over per-condition WEM-ands.

    `slopes` holds one sigmoid slope per comparison, flattened in condition
    order; `weights` is the rule's simplex weight vector over conditions.
    """
    if not rule.conditions:
        return 0.0
    slopes = np.asarray(slopes, dtype=float)
    if slopes.size != rule.n_comparisons:
        raise ValueError("slope vector length must equal the rule's comparison count")
    degrees = []
    k = 0
    for cond in rule.conditions:
        ms = []
        for comp in cond.comparisons:
            f = membership_gt if comp.op == OP_GT else membership_le
            ms.append(f(x[comp.feature_index], slopes[k], comp.threshold))
            k += 1
        degrees.append(wem_and(ms, r_and))
    return wem_or(degrees, weights, r_or)


def normalize_scores_l1(scores) -> np.ndarray:
    """Scale non-negative scores to sum to 1; all-zero input falls back to uniform."""
    scores = np.asarray(scores, dtype=float)
    total = scores.sum()
    if total <= 0:
        warnings.warn("all scores are zero; returning the uniform distribution")
        return np.full(scores.shape, 1.0 / scores.size)
    return scores / total


def crisp_classify(rules: RuleSet, X) -> np.ndarray:
    """Label by crisp DNF: argmax over boolean class scores, lowest index on ties
    (including the no-rule-fires case)."""
    X = np.asarray(X, dtype=float)
    out = np.empty(len(X), dtype=int)
    for i, x in enumerate(X):
        scores = [eval_rule_crisp(r, x) for r in rules.class_rules]
        out[i] = int(np.argmax(scores))
    return out


@dataclass
class FuzzyRuleSet:
    """A RuleSet plus the parameters of its fuzzification.

    weights: one simplex vector per class rule (over its conditions).
    slopes: one slope per comparison, flattened per rule in condition order.
    """
    rules: RuleSet
    weights: list[np.ndarray]
    slopes: list[np.ndarray]
    r_and: float = -5.4
    r_or: float = 5.4

    def __post_init__(self):
        if len(self.weights) != self.rules.n_classes or len(self.slopes) != self.rules.n_classes:
            raise ValueError("need one weight and one slope vector per class rule")
        for rule, w, s in zip(self.rules.class_rules, self.weights, self.slopes):
            if len(w) != len(rule.conditions):
                raise ValueError(f"class {rule.label!r}: weight count != condition count")
            if len(s) != rule.n_comparisons:
                raise ValueError(f"class {rule.label!r}: slope count != comparison count")
            if len(w):
                validate_simplex(w)

    def class_scores(self, x) -> np.ndarray:
        return np.array([
            eval_rule_fuzzy(rule, x, w, s, self.r_and, self.r_or)
            for rule, w, s in zip(self.rules.class_rules, self.weights, self.slopes)
        ])

    def predict(self, x) -> tuple[int, np.ndarray]:
        scores = normalize_scores_l1(self.class_scores(x))
        return int(np.argmax(scores)), scores

    def to_json_dict(self) -> dict:
        names = self.rules.feature_names
        classes = []
        for ci, (rule, w, s) in enumerate(zip(self.rules.class_rules, self.weights, self.slopes)):
            conds = []
            k = 0
            for i, cond in enumerate(rule.conditions):
                comps = []
                for j, comp in enumerate(cond.comparisons):
                    comps.append({
                        "field": names[comp.feature_index],
                        "op": comp.op,
                        "threshold": comp.threshold,
                        "slope_id": f"s_{i + 1}{j + 1}",
                        "slope": float(s[k]),
                    })
                    k += 1
                conds.append({"weight": float(w[i]), "comparisons": comps})
            classes.append({"class": rule.label, "conditions": conds})
        return {
            "feature_order": list(names),
            "r_and": self.r_and,
            "r_or": self.r_or,
            "classes": classes,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent)


def uniform_fuzzy_ruleset(rules: RuleSet, slope: float = 1.0,
                          r_and: float = -5.4, r_or: float = 5.4) -> FuzzyRuleSet:
    """Fuzzify a RuleSet with uniform condition weights and a constant slope."""
    weights = []
    slopes = []
    for rule in rules.class_rules:
        n = len(rule.conditions)
        weights.append(np.full(n, 1.0 / n) if n else np.empty(0))
        slopes.append(np.full(rule.n_comparisons, float(slope)))
    return FuzzyRuleSet(rules, weights, slopes, r_and, r_or)
