"""The combined neuro-fuzzy classifier.

The image branch (two convolutions, dense head) emits one sigmoid slope per
threshold comparison; AIS inputs are fuzzified with those slopes, conditions
are aggregated with an exponential-mean conjunction, and a learnable
simplex-weighted exponential-mean disjunction produces per-class scores that
feed a softmax. Rule structure and thresholds stay frozen; only the slope
generator and the disjunction weights learn.
"""
from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cart import OP_GT, RuleSet
from .data import Dataset, config_hash
from .fuzzy import SIMPLEX_TOL

CHECKPOINT_MAGIC = b"NFCK"
CHECKPOINT_VERSION = 1
EMPTY_RULE_DEGREE = 1e-6


class ChecksumError(IOError):
    pass


def write_params_bin(path, entries: list[tuple[str, np.ndarray]]) -> None:
    """Versioned binary of (name, shape, little-endian values), sha256-sealed."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(entries))
    for name, arr in entries:
        nb = name.encode("utf-8")
        code = 0 if arr.dtype == np.float32 else 1
        blob += struct.pack("<HBB", len(nb), arr.ndim, code)
        blob += nb
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f4" if code == 0 else "<f8").tobytes()
    digest = hashlib.sha256(bytes(blob)).digest()
    Path(path).write_bytes(bytes(blob) + digest)


def read_params_bin(path) -> list[tuple[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != CHECKPOINT_MAGIC:
        raise ChecksumError("not a checkpoint file")
    blob, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(blob).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch (truncated or corrupted)")
    _, count = struct.unpack_from("<II", blob, 4)
    off = 12
    entries = []
    for _ in range(count):
        nlen, ndim, code = struct.unpack_from("<HBB", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dt = "<f4" if code == 0 else "<f8"
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype=dt, count=size, offset=off).reshape(shape).copy()
        off += size * np.dtype(dt).itemsize
        entries.append((name, arr))
    return entries


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class NeuroFuzzyConfig:
    conv_channels: tuple[int, int] = (64, 32)
    kernel: int = 3
    padding: int = 1
    a1_width: int = 512
    a2_width: int = 256
    r_and: float = -5.4
    r_or: float = 5.4
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01
    seed: int = 0
    slope_mode: str = "per-sample"  # or "global"
    positive_slopes: bool = False   # softplus guard on the slope head
    init_slope: float = 1.0         # global-mode initial slope
    o1_width: int | None = None     # must match the rule set's comparison count if given

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d


@dataclass
class CompiledRules:
    """Rule structure flattened into index arrays for the vectorized graph."""
    feat_idx: np.ndarray       # (K,) comparison -> AIS field
    sign: np.ndarray           # (K,) +1 for '>', -1 for '<='
    thresholds: np.ndarray     # (K,)
    cond_matrix: np.ndarray    # (K, nC) with 1/n_cond entries (conjunction mean)
    rule_cond_slices: list[tuple[int, int]]  # per class: [start, end) into conditions
    rule_comp_slices: list[tuple[int, int]]  # per class: [start, end) into comparisons

    @property
    def n_comparisons(self) -> int:
        return len(self.feat_idx)

    @property
    def n_conditions(self) -> int:
        return self.cond_matrix.shape[1]


def compile_rules(rules: RuleSet) -> CompiledRules:
    feat, sign, thr = [], [], []
    cond_of_comp = []
    rule_cond_slices = []
    rule_comp_slices = []
    cond_sizes = []
    ci = 0
    for rule in rules.class_rules:
        c0, k0 = ci, len(feat)
        for cond in rule.conditions:
            for comp in cond.comparisons:
                feat.append(comp.feature_index)
                sign.append(1.0 if comp.op == OP_GT else -1.0)
                thr.append(comp.threshold)
                cond_of_comp.append(ci)
            cond_sizes.append(len(cond.comparisons))
            ci += 1
        rule_cond_slices.append((c0, ci))
        rule_comp_slices.append((k0, len(feat)))
    k = len(feat)
    m = np.zeros((k, ci))
    for j, c in enumerate(cond_of_comp):
        m[j, c] = 1.0 / cond_sizes[c]
    return CompiledRules(np.array(feat, dtype=int), np.array(sign), np.array(thr),
                         m, rule_cond_slices, rule_comp_slices)


class NeuroFuzzyModel:
    def __init__(self, rules: RuleSet, cfg: NeuroFuzzyConfig):
        if rules.n_conditions == 0:
            raise ValueError("rule set has no conditions at all")
        self.rules = rules
        self.cfg = cfg
        self.compiled = compile_rules(rules)
        k = self.compiled.n_comparisons
        if cfg.o1_width is not None and cfg.o1_width != k:
            raise ValueError(f"configured o1 width {cfg.o1_width} != comparison count {k}")
        for rule in rules.class_rules:
            if not rule.conditions:
                warnings.warn(f"class {rule.label!r} has an empty rule; it gets a constant "
                              f"score pathway of degree {EMPTY_RULE_DEGREE}")
        rng = np.random.default_rng(cfg.seed)
        self.params = ad.ParamStore()
        self.bn_states: dict[str, ad.BatchNormState] = {}
        self._dropout_rng = np.random.default_rng(rng.integers(2**32))
        if cfg.slope_mode == "per-sample":
            c1, c2 = cfg.conv_channels
            wc1, bc1 = ad.init_conv(rng, c1, 256, cfg.kernel, cfg.kernel)
            wc2, bc2 = ad.init_conv(rng, c2, c1, cfg.kernel, cfg.kernel)
            self.params.add("conv1.W", wc1)
            self.params.add("conv1.b", bc1)
            self.params.add("conv2.W", wc2)
            self.params.add("conv2.b", bc2)
            flat = c2 * 7 * 7
            w, b = ad.init_dense(rng, flat, cfg.a1_width)
            self.params.add("a1.W", w)
            self.params.add("a1.b", b)
            w, b = ad.init_dense(rng, cfg.a1_width, cfg.a2_width)
            self.params.add("a2.W", w)
            self.params.add("a2.b", b)
            self.params.add("a2.gamma", np.ones(cfg.a2_width))
            self.params.add("a2.beta", np.zeros(cfg.a2_width))
            self.bn_states["a2"] = ad.BatchNormState(cfg.a2_width)
            w, b = ad.init_dense(rng, cfg.a2_width, k)
            self.params.add("o1.W", w)
            self.params.add("o1.b", b)
        elif cfg.slope_mode == "global":
            self.params.add("slopes", np.full((1, k), cfg.init_slope))
        else:
            raise ValueError(f"unknown slope_mode {cfg.slope_mode!r}")
        # disjunction weight logits, one vector per non-empty rule; zeros give
        # uniform 1/n effective weights
        for i, rule in enumerate(rules.class_rules):
            n = len(rule.conditions)
            if n:
                self.params.add(f"disj.{i}", np.zeros((n, 1)))

    # -- forward ------------------------------------------------------------

    def _slope_tensor(self, features: np.ndarray, training: bool,
                      slope_override: float | None) -> ad.Tensor:
        n = len(features)
        k = self.compiled.n_comparisons
        if slope_override is not None:
            return ad.Tensor(np.full((n, k), slope_override))
        if self.cfg.slope_mode == "global":
            s = ad.add(ad.Tensor(np.zeros((n, k))), self.params["slopes"])
        else:
            x = ad.Tensor(features)
            x = ad.relu(ad.conv2d(x, self.params["conv1.W"], self.params["conv1.b"], self.cfg.padding))
            x = ad.relu(ad.conv2d(x, self.params["conv2.W"], self.params["conv2.b"], self.cfg.padding))
            x = ad.flatten(x)
            x = ad.dense(x, self.params["a1.W"], self.params["a1.b"])
            x = ad.dense(x, self.params["a2.W"], self.params["a2.b"])
            x = ad.batch_norm(x, self.params["a2.gamma"], self.params["a2.beta"],
                              self.bn_states["a2"], training)
            x = ad.relu(x)
            x = ad.dropout(x, self.cfg.dropout_rate, self._dropout_rng, training)
            s = ad.dense(x, self.params["o1.W"], self.params["o1.b"])
        if self.cfg.positive_slopes:
            return ad.softplus(s)
        return ad.leaky_relu(s, self.cfg.leaky_slope)

    def forward_scores(self, features: np.ndarray, ais: np.ndarray,
                       training: bool = False, slope_override: float | None = None,
                       r_override: float | None = None) -> ad.Tensor:
        """Per-class pre-softmax rule degrees R, shape (N, m)."""
        cr = self.compiled
        r_and = -abs(r_override) if r_override is not None else self.cfg.r_and
        r_or = abs(r_override) if r_override is not None else self.cfg.r_or
        ais = np.asarray(ais, dtype=float).reshape(len(features), 7)
        margins = cr.sign * (ais[:, cr.feat_idx] - cr.thresholds)  # (N, K), constant
        s = self._slope_tensor(np.asarray(features), training, slope_override)
        memberships = ad.sigmoid(ad.mul(s, ad.Tensor(margins)))
        cond = ad.scale(ad.log(ad.matmul(ad.exp(ad.scale(memberships, r_and)),
                                         ad.Tensor(cr.cond_matrix))), 1.0 / r_and)
        self._check_finite(cond, "condition degrees")
        cols = []
        n = len(features)
        for i, (c0, c1) in enumerate(cr.rule_cond_slices):
            if c0 == c1:
                cols.append(ad.Tensor(np.full((n, 1), EMPTY_RULE_DEGREE)))
                continue
            ci = ad.gather_cols(cond, np.arange(c0, c1))
            w = ad.simplex_weights_col(self.params[f"disj.{i}"])
            ri = ad.scale(ad.log(ad.matmul(ad.exp(ad.scale(ci, r_or)), w)), 1.0 / r_or)
            cols.append(ri)
        scores = ad.concat_cols(cols)
        self._check_finite(scores, "rule scores")
        return scores

    def forward(self, features, ais, training: bool = False, **kw) -> ad.Tensor:
        """Class distribution F = softmax over the per-class rule degrees."""
        return ad.softmax(self.forward_scores(features, ais, training, **kw), axis=1)

    @staticmethod
    def _check_finite(t: ad.Tensor, stage: str) -> None:
        if not np.isfinite(t.data).all():
            raise NonFiniteLossError(f"non-finite values at stage: {stage}")

    def effective_weights(self) -> list[np.ndarray]:
        out = []
        for i, rule in enumerate(self.rules.class_rules):
            if rule.conditions:
                z = self.params[f"disj.{i}"].data.reshape(-1)
                e = np.exp(z - z.max())
                out.append(e / e.sum())
            else:
                out.append(np.empty(0))
        return out

    def check_simplex(self, tol: float = SIMPLEX_TOL) -> bool:
        return all(w.size == 0 or (w.min() >= -tol and abs(w.sum() - 1.0) <= tol)
                   for w in self.effective_weights())

    # -- training -----------------------------------------------------------

    def train(self, ds: Dataset, epochs: int | None = None) -> list[float]:
        """Adam descent on cross-entropy; returns the per-epoch mean loss trace."""
        if len(ds) == 0:
            raise ValueError("training dataset is empty")
        cfg = self.cfg
        epochs = epochs if epochs is not None else cfg.epochs
        m = ds.n_classes
        onehot = np.eye(m)[ds.labels]
        opt = ad.Adam(self.params, lr=cfg.learning_rate)
        shuffle_rng = np.random.default_rng(cfg.seed + 1)
        trace = []
        for epoch in range(epochs):
            order = shuffle_rng.permutation(len(ds))
            losses = []
            for b0 in range(0, len(ds), cfg.batch_size):
                idx = order[b0:b0 + cfg.batch_size]
                self.params.zero_grad()
                scores = self.forward_scores(ds.features[idx], ds.ais[idx], training=True)
                loss = ad.softmax_cross_entropy(scores, onehot[idx])
                if not np.isfinite(loss.data):
                    raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}")
                loss.backward()
                opt.step()
                losses.append(loss.item() * len(idx))
            trace.append(sum(losses) / len(ds))
            if not self.check_simplex():
                raise AssertionError(f"disjunction weights left the simplex at epoch {epoch}")
        return trace

    # -- prediction and explanation ------------------------------------------

    def predict_batch(self, features, ais) -> tuple[np.ndarray, np.ndarray]:
        probs = self.forward(features, ais, training=False).data
        return probs.argmax(axis=1), probs

    def predict(self, feature, ais) -> tuple[int, np.ndarray, dict]:
        """Single-sample prediction with a per-rule explanation for the winner."""
        features = np.asarray(feature, dtype=np.float32)[None]
        ais = np.asarray(ais, dtype=float)[None]
        scores = self.forward_scores(features, ais, training=False)
        probs = ad.softmax(scores, axis=1).data[0]
        label = int(probs.argmax())
        explanation = self.explain(label, features, ais)
        return label, probs, explanation

    def explain(self, class_index: int, features: np.ndarray, ais: np.ndarray) -> dict:
        cr = self.compiled
        ais = np.asarray(ais, dtype=float).reshape(1, 7)
        margins = cr.sign * (ais[:, cr.feat_idx] - cr.thresholds)
        s = self._slope_tensor(np.asarray(features), False, None).data
        memb = 1.0 / (1.0 + np.exp(-np.clip(s * margins, -500, 500)))
        cond_deg = (np.log(np.exp(self.cfg.r_and * memb) @ cr.cond_matrix) / self.cfg.r_and)[0]
        weights = self.effective_weights()[class_index]
        rule = self.rules.class_rules[class_index]
        c0, _ = cr.rule_cond_slices[class_index]
        k0, _ = cr.rule_comp_slices[class_index]
        conds = []
        k = k0
        for i, cond in enumerate(rule.conditions):
            tag = chr(ord("a") + i) if i < 26 else f"c{i}"
            comps = []
            for comp in cond.comparisons:
                comps.append({
                    "field": self.rules.feature_names[comp.feature_index],
                    "op": comp.op,
                    "threshold": comp.threshold,
                    "slope": float(s[0, k]),
                    "membership": float(memb[0, k]),
                })
                k += 1
            conds.append({
                "tag": f"({tag})",
                "weight": float(weights[i]),
                "degree": float(cond_deg[c0 + i]),
                "comparisons": comps,
            })
        return {"class": rule.label, "conditions": conds,
                "r_and": self.cfg.r_and, "r_or": self.cfg.r_or}

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = [(name, t.data) for name, t in self.params.items()]
        for name, st in self.bn_states.items():
            entries.append((f"bn.{name}.running_mean", st.running_mean))
            entries.append((f"bn.{name}.running_var", st.running_var))
        write_params_bin(out_dir / "params.bin", entries)
        manifest = {
            "format": "nfship-checkpoint",
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "config_hash": config_hash(self.cfg.to_dict()),
            "rules": self.rules.to_json_dict(),
            "params": [{"name": n, "shape": list(a.shape)} for n, a in entries],
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, in_dir) -> "NeuroFuzzyModel":
        in_dir = Path(in_dir)
        manifest = json.loads((in_dir / "manifest.json").read_text())
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ChecksumError(f"unsupported checkpoint version {manifest.get('version')}")
        cfgd = dict(manifest["config"])
        cfgd["conv_channels"] = tuple(cfgd["conv_channels"])
        cfg = NeuroFuzzyConfig(**cfgd)
        rules = RuleSet.from_json_dict(manifest["rules"])
        model = cls(rules, cfg)
        for name, arr in read_params_bin(in_dir / "params.bin"):
            if name.startswith("bn."):
                _, key, stat = name.split(".")
                setattr(model.bn_states[key], stat, arr.astype(np.float64))
            else:
                model.params[name].data = arr.astype(model.params[name].data.dtype)
        return model
