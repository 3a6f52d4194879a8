"""The combined neuro-fuzzy model: forward semantics, training, persistence."""
import numpy as np
import pytest

from nfship.cart import (CartParams, ClassRule, Comparison, Condition, RuleSet,
                         extract_rules, fit_one_vs_all)
from nfship.fuzzy import crisp_classify, eval_rule_fuzzy
from nfship.model import (ChecksumError, NeuroFuzzyConfig, NeuroFuzzyModel,
                          compile_rules, read_params_bin, write_params_bin,
                          EMPTY_RULE_DEGREE)

TINY = dict(conv_channels=(4, 2), a1_width=16, a2_width=8, batch_size=16,
            learning_rate=1e-3, epochs=3, seed=0)


def toy_rules():
    r0 = ClassRule("small", [Condition((Comparison(5, "<=", 40.0),))])
    r1 = ClassRule("big", [
        Condition((Comparison(5, ">", 40.0), Comparison(6, "<=", 6.0))),
        Condition((Comparison(5, ">", 40.0), Comparison(6, ">", 6.0))),
    ])
    return RuleSet([r0, r1])


def fitted_rules(ds, depth=6):
    trees = fit_one_vs_all(ds.ais, ds.labels, list(ds.class_names),
                           CartParams(max_depth=depth, min_samples_leaf=2))
    return extract_rules(trees, list(ds.class_names))


def test_compile_rules_layout():
    cr = compile_rules(toy_rules())
    assert cr.n_comparisons == 5
    assert cr.n_conditions == 3
    assert cr.feat_idx.tolist() == [5, 5, 6, 5, 6]
    assert cr.sign.tolist() == [-1.0, 1.0, -1.0, 1.0, 1.0]
    assert cr.rule_cond_slices == [(0, 1), (1, 3)]
    assert cr.rule_comp_slices == [(0, 1), (1, 5)]
    # conjunction matrix averages memberships within each condition
    assert cr.cond_matrix.sum(axis=0).tolist() == pytest.approx([1.0, 1.0, 1.0])
    assert cr.cond_matrix[0, 0] == 1.0
    assert cr.cond_matrix[1, 1] == 0.5


def test_o1_width_mismatch_rejected():
    with pytest.raises(ValueError, match="o1 width"):
        NeuroFuzzyModel(toy_rules(), NeuroFuzzyConfig(**TINY, o1_width=7))
    NeuroFuzzyModel(toy_rules(), NeuroFuzzyConfig(**TINY, o1_width=5))  # matches


def test_unknown_slope_mode_rejected():
    with pytest.raises(ValueError, match="slope_mode"):
        NeuroFuzzyModel(toy_rules(), NeuroFuzzyConfig(**TINY, slope_mode="??"))


def test_no_conditions_at_all_rejected():
    rs = RuleSet([ClassRule("a", []), ClassRule("b", [])])
    with pytest.raises(ValueError, match="no conditions"):
        NeuroFuzzyModel(rs, NeuroFuzzyConfig(**TINY))


def test_forward_scores_match_scalar_oracle(float64_mode):
    """The vectorized graph must reproduce the reference rule evaluator."""
    rules = toy_rules()
    model = NeuroFuzzyModel(rules, NeuroFuzzyConfig(**TINY))
    rng = np.random.default_rng(0)
    feats = rng.normal(0, 1, (6, 256, 7, 7)).astype(np.float32)
    ais = rng.uniform(0, 100, (6, 7))
    s0 = 0.7
    scores = model.forward_scores(feats, ais, slope_override=s0).data
    for i in range(6):
        for c, rule in enumerate(rules.class_rules):
            w = np.full(len(rule.conditions), 1.0 / len(rule.conditions))
            ref = eval_rule_fuzzy(rule, ais[i], w, np.full(rule.n_comparisons, s0),
                                  -5.4, 5.4)
            assert scores[i, c] == pytest.approx(ref, abs=1e-9)


def test_forward_is_distribution(small_split):
    tr, _ = small_split
    model = NeuroFuzzyModel(fitted_rules(tr), NeuroFuzzyConfig(**TINY))
    probs = model.forward(tr.features[:5], tr.ais[:5]).data
    assert probs.shape == (5, tr.n_classes)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert (probs >= 0).all()


def test_eval_forward_deterministic(small_split):
    tr, _ = small_split
    model = NeuroFuzzyModel(fitted_rules(tr), NeuroFuzzyConfig(**TINY))
    a = model.forward(tr.features[:4], tr.ais[:4]).data
    b = model.forward(tr.features[:4], tr.ais[:4]).data
    assert a.tobytes() == b.tobytes()  # dropout and BN are inert in eval mode


def test_crisp_limit_on_toy_rules():
    rules = toy_rules()
    model = NeuroFuzzyModel(rules, NeuroFuzzyConfig(**TINY))
    rng = np.random.default_rng(1)
    ais = rng.uniform(0, 100, (400, 7))
    # keep a margin around both thresholds
    keep = (np.abs(ais[:, 5] - 40.0) >= 0.1) & (np.abs(ais[:, 6] - 6.0) >= 0.1)
    ais = ais[keep]
    feats = np.zeros((len(ais), 256, 7, 7), np.float32)
    scores = model.forward_scores(feats, ais, slope_override=200.0, r_override=50.0).data
    fuzzy = scores.argmax(axis=1)
    crisp = crisp_classify(rules, ais)
    assert (fuzzy == crisp).mean() == 1.0


def test_empty_rule_gets_constant_pathway():
    rs = RuleSet([ClassRule("has", [Condition((Comparison(5, ">", 40.0),))]),
                  ClassRule("empty", [])])
    with pytest.warns(UserWarning, match="empty rule"):
        model = NeuroFuzzyModel(rs, NeuroFuzzyConfig(**TINY))
    scores = model.forward_scores(np.zeros((2, 256, 7, 7), np.float32),
                                  np.full((2, 7), 80.0), slope_override=1.0).data
    assert np.allclose(scores[:, 1], EMPTY_RULE_DEGREE)


def test_train_reduces_loss_and_keeps_structure(small_split):
    tr, te = small_split
    rules = fitted_rules(tr)
    thresholds_before = rules.to_json()
    model = NeuroFuzzyModel(rules, NeuroFuzzyConfig(**TINY))
    compiled_before = model.compiled.thresholds.copy()
    trace = model.train(tr, epochs=4)
    assert len(trace) == 4
    assert trace[-1] < trace[0]
    # rule structure and thresholds are frozen; only weights and slopes learn
    assert rules.to_json() == thresholds_before
    assert np.array_equal(model.compiled.thresholds, compiled_before)
    assert model.check_simplex()
    preds, probs = model.predict_batch(te.features, te.ais)
    assert preds.shape == (len(te),)
    assert probs.shape == (len(te), te.n_classes)


def test_global_slope_mode_trains(small_split):
    tr, _ = small_split
    cfg = NeuroFuzzyConfig(**{**TINY, "slope_mode": "global", "init_slope": 1.0})
    model = NeuroFuzzyModel(fitted_rules(tr), cfg)
    before = model.params["slopes"].data.copy()
    model.train(tr, epochs=2)
    assert not np.array_equal(model.params["slopes"].data, before)
    assert model.check_simplex()


def test_positive_slopes_guard(small_split):
    tr, _ = small_split
    cfg = NeuroFuzzyConfig(**{**TINY, "positive_slopes": True})
    model = NeuroFuzzyModel(fitted_rules(tr), cfg)
    s = model._slope_tensor(tr.features[:8].astype(np.float32), False, None)
    assert (s.data > 0).all()


def test_predict_single_matches_batch(small_split):
    tr, te = small_split
    model = NeuroFuzzyModel(fitted_rules(tr), NeuroFuzzyConfig(**TINY))
    label, probs, explanation = model.predict(te.features[0], te.ais[0])
    batch_preds, batch_probs = model.predict_batch(te.features[:1], te.ais[:1])
    assert label == batch_preds[0]
    assert np.allclose(probs, batch_probs[0])
    assert explanation["class"] == tr.class_names[label]


def test_explanation_contents(small_split):
    tr, _ = small_split
    model = NeuroFuzzyModel(fitted_rules(tr), NeuroFuzzyConfig(**TINY))
    exp = model.explain(0, tr.features[:1], tr.ais[:1])
    conds = exp["conditions"]
    assert conds[0]["tag"] == "(a)"
    weights = [c["weight"] for c in conds]
    assert sum(weights) == pytest.approx(1.0, abs=1e-9)
    for cond in conds:
        assert 0.0 <= cond["degree"] <= 1.0
        for comp in cond["comparisons"]:
            assert comp["op"] in (">", "<=")
            assert 0.0 <= comp["membership"] <= 1.0
            assert comp["field"] in model.rules.feature_names


def test_effective_weights_start_uniform():
    model = NeuroFuzzyModel(toy_rules(), NeuroFuzzyConfig(**TINY))
    w = model.effective_weights()
    assert np.allclose(w[0], [1.0])
    assert np.allclose(w[1], [0.5, 0.5])


def test_save_load_bit_exact_forward(tmp_path, small_split):
    tr, te = small_split
    model = NeuroFuzzyModel(fitted_rules(tr), NeuroFuzzyConfig(**TINY))
    model.train(tr, epochs=2)
    model.save(tmp_path / "ckpt")
    back = NeuroFuzzyModel.load(tmp_path / "ckpt")
    a = model.forward(te.features[:6], te.ais[:6]).data
    b = back.forward(te.features[:6], te.ais[:6]).data
    assert a.tobytes() == b.tobytes()
    # re-saving produces byte-identical files
    back.save(tmp_path / "ckpt2")
    assert ((tmp_path / "ckpt" / "params.bin").read_bytes()
            == (tmp_path / "ckpt2" / "params.bin").read_bytes())
    assert ((tmp_path / "ckpt" / "manifest.json").read_bytes()
            == (tmp_path / "ckpt2" / "manifest.json").read_bytes())


def test_truncated_checkpoint_detected(tmp_path, small_split):
    tr, _ = small_split
    model = NeuroFuzzyModel(fitted_rules(tr), NeuroFuzzyConfig(**TINY))
    model.save(tmp_path / "ckpt")
    p = tmp_path / "ckpt" / "params.bin"
    raw = p.read_bytes()
    p.write_bytes(raw[:-7])
    with pytest.raises(ChecksumError):
        NeuroFuzzyModel.load(tmp_path / "ckpt")
    p.write_bytes(raw[:100] + b"\x7f" + raw[101:])
    with pytest.raises(ChecksumError):
        NeuroFuzzyModel.load(tmp_path / "ckpt")


def test_params_bin_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    entries = [("w", rng.normal(size=(3, 2)).astype(np.float32)),
               ("b", rng.normal(size=4)),
               ("scalar", np.array(2.5))]
    write_params_bin(tmp_path / "p.bin", entries)
    back = read_params_bin(tmp_path / "p.bin")
    assert [n for n, _ in back] == ["w", "b", "scalar"]
    for (_, a), (_, b) in zip(entries, back):
        assert a.dtype == b.dtype
        assert a.tobytes() == b.tobytes()
    with pytest.raises(ChecksumError):
        read_params_bin(__file__)
