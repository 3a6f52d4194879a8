"""Membership functions, WEM aggregation and crisp/fuzzy rule evaluation."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nfship.cart import ClassRule, Comparison, Condition, RuleSet
from nfship.fuzzy import (FuzzyRuleSet, SimplexError, crisp_classify, eval_rule_crisp,
                          eval_rule_fuzzy, membership_gt, membership_le,
                          normalize_scores_l1, uniform_fuzzy_ruleset, validate_simplex,
                          wem_and, wem_or)

# closed-form values for the {0, 1} two-input case, frozen at full precision:
#   and: ln((1 + e^r) / 2) / r     or: ln((1 + e^r) / 2) / r with w = (.5, .5)
WEM_AND_R14 = 0.04951045350225513
WEM_AND_R54 = 0.12752606828901775
WEM_OR_R54 = 0.8724739317109823


def test_wem_frozen_point_values():
    assert abs(wem_and([0.0, 1.0], -14.0) - WEM_AND_R14) <= 1e-6
    assert abs(wem_and([0.0, 1.0], -5.4) - WEM_AND_R54) <= 1e-6
    assert abs(wem_or([0.0, 1.0], [0.5, 0.5], 5.4) - WEM_OR_R54) <= 1e-6


def test_wem_matches_direct_formula():
    rng = np.random.default_rng(3)
    for _ in range(50):
        c = rng.uniform(0, 1, rng.integers(1, 6))
        r = -float(rng.uniform(0.5, 20))
        direct = math.log(np.mean(np.exp(r * c))) / r
        assert abs(wem_and(c, r) - direct) < 1e-12
        w = rng.uniform(0.1, 1, len(c))
        w /= w.sum()
        direct = math.log(np.sum(w * np.exp(-r * c))) / -r
        assert abs(wem_or(c, w, -r) - direct) < 1e-12


def test_wem_bounds_and_idempotence_bulk():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        c = rng.uniform(0, 1, n)
        r = float(rng.uniform(0.5, 30))
        a = wem_and(c, -r)
        assert c.min() - 1e-12 <= a <= c.max() + 1e-12
        w = rng.dirichlet(np.ones(n))
        o = wem_or(c, w, r)
        assert c.min() - 1e-12 <= o <= c.max() + 1e-12
        v = float(rng.uniform(0, 1))
        assert abs(wem_and([v] * n, -r) - v) < 1e-9
        assert abs(wem_or([v] * n, np.full(n, 1.0 / n), r) - v) < 1e-9


def test_wem_parameter_validation():
    with pytest.raises(ValueError):
        wem_and([0.5], 1.0)
    with pytest.raises(ValueError):
        wem_and([], -5.4)
    with pytest.raises(ValueError):
        wem_or([0.5], [1.0], -1.0)
    with pytest.raises(ValueError):
        wem_or([0.5, 0.5], [1.0], 5.4)
    with pytest.raises(SimplexError):
        wem_or([0.5, 0.5], [0.9, 0.4], 5.4)


def test_wem_extreme_r_no_overflow():
    # large |r| pushes the aggregation toward hard min/max without blowing up
    assert wem_and([0.0, 1.0], -200.0) < 0.01
    assert wem_or([0.0, 1.0], [0.5, 0.5], 200.0) > 0.99
    assert np.isfinite(wem_and([0.0, 1.0], -5000.0))


@given(st.floats(-100, 100), st.floats(0.01, 50), st.floats(-100, 100))
@settings(max_examples=300, deadline=None)
def test_membership_complement_identity(x, s, v):
    assert abs(membership_gt(x, s, v) + membership_le(x, s, v) - 1.0) <= 1e-12


def test_membership_at_threshold_is_half():
    for s in (0.1, 1.0, 42.0):
        assert membership_gt(5.0, s, 5.0) == 0.5
        assert membership_le(5.0, s, 5.0) == 0.5


def test_membership_complement_random_bulk():
    rng = np.random.default_rng(11)
    x, s, v = rng.uniform(-50, 50, 1000), rng.uniform(0.01, 30, 1000), rng.uniform(-50, 50, 1000)
    total = membership_gt(x, s, v) + membership_le(x, s, v)
    assert np.abs(total - 1.0).max() <= 1e-12


def test_membership_saturation_no_overflow():
    assert membership_gt(1e6, 200.0, 0.0) == 1.0
    assert membership_gt(-1e6, 200.0, 0.0) < 1e-100


def test_membership_direction():
    assert membership_gt(10.0, 2.0, 5.0) > 0.9
    assert membership_le(10.0, 2.0, 5.0) < 0.1
    assert membership_le(1.0, 2.0, 5.0) > 0.9


def _toy_rules():
    r0 = ClassRule("small", [Condition((Comparison(5, "<=", 40.0),))])
    r1 = ClassRule("big", [
        Condition((Comparison(5, ">", 40.0), Comparison(6, "<=", 6.0))),
        Condition((Comparison(5, ">", 40.0), Comparison(6, ">", 6.0))),
    ])
    return RuleSet([r0, r1])


def test_eval_rule_crisp():
    rules = _toy_rules()
    x_small = np.array([0, 0, 0, 0, 0, 30.0, 3.0])
    x_big = np.array([0, 0, 0, 0, 0, 80.0, 8.0])
    assert eval_rule_crisp(rules.class_rules[0], x_small)
    assert not eval_rule_crisp(rules.class_rules[0], x_big)
    assert eval_rule_crisp(rules.class_rules[1], x_big)
    assert not eval_rule_crisp(ClassRule("empty", []), x_big)


def test_crisp_classify_tie_goes_to_lowest_index():
    rules = _toy_rules()
    # nothing fires for length exactly above 40 is impossible here, so force
    # the no-fire case with an out-of-domain rule set
    rs = RuleSet([ClassRule("a", [Condition((Comparison(0, ">", 1e9),))]),
                  ClassRule("b", [Condition((Comparison(0, ">", 1e9),))])])
    out = crisp_classify(rs, np.zeros((3, 7)))
    assert (out == 0).all()


def test_eval_rule_fuzzy_approaches_crisp():
    rules = _toy_rules()
    x = np.array([0, 0, 0, 0, 0, 80.0, 8.0])
    big = rules.class_rules[1]
    w = np.array([0.5, 0.5])
    hard = eval_rule_fuzzy(big, x, w, np.full(4, 100.0), -50.0, 50.0)
    soft = eval_rule_fuzzy(big, x, w, np.full(4, 0.05), -2.0, 2.0)
    assert hard > 0.95
    assert 0.2 < soft < 0.9


def test_eval_rule_fuzzy_slope_length_checked():
    rules = _toy_rules()
    with pytest.raises(ValueError):
        eval_rule_fuzzy(rules.class_rules[1], np.zeros(7), [0.5, 0.5], [1.0], -5.4, 5.4)


def test_normalize_scores_l1():
    out = normalize_scores_l1([1.0, 3.0])
    assert np.allclose(out, [0.25, 0.75])
    with pytest.warns(UserWarning):
        out = normalize_scores_l1([0.0, 0.0, 0.0])
    assert np.allclose(out, 1.0 / 3)


def test_validate_simplex_accepts_boundary():
    validate_simplex([1.0, 0.0])
    validate_simplex([0.5, 0.5 + 5e-7])
    with pytest.raises(SimplexError):
        validate_simplex([0.7, 0.7])


def test_fuzzy_ruleset_roundtrip_and_predict():
    rules = _toy_rules()
    frs = uniform_fuzzy_ruleset(rules, slope=2.0)
    label, scores = frs.predict(np.array([0, 0, 0, 0, 0, 20.0, 3.0]))
    assert label == 0
    assert abs(scores.sum() - 1.0) < 1e-12
    d = frs.to_json_dict()
    assert d["classes"][1]["conditions"][0]["comparisons"][0]["slope_id"] == "s_11"
    assert d["r_and"] == -5.4 and d["r_or"] == 5.4


def test_fuzzy_ruleset_validation():
    rules = _toy_rules()
    with pytest.raises(ValueError):
        FuzzyRuleSet(rules, [np.array([1.0])], [np.empty(0)])
    with pytest.raises(SimplexError):
        FuzzyRuleSet(rules, [np.array([1.0]), np.array([0.9, 0.9])],
                     [np.ones(1), np.ones(4)])
