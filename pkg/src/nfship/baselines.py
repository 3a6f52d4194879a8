"""Comparison models: the bilinear-fusion network and classical AIS-only classifiers."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset, config_hash
from .model import NonFiniteLossError, read_params_bin, write_params_bin


@dataclass
class BaselineConfig:
    conv_channels: tuple[int, int] = (64, 32)
    kernel: int = 3
    padding: int = 1
    a1_width: int = 512
    b1_width: int = 256
    b2_width: int = 256
    b3_width: int = 256
    bilinear_width: int = 256
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    dropout_rate: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d


class BilinearBaseline:
    """Conv branch to a1 (images) and a 7-input dense branch (AIS),
    fused by a bilinear layer and a softmax output head."""

    def __init__(self, n_classes: int, cfg: BaselineConfig):
        self.cfg = cfg
        self.n_classes = n_classes
        rng = np.random.default_rng(cfg.seed)
        self.params = ad.ParamStore()
        self.bn_states: dict[str, ad.BatchNormState] = {}
        self._dropout_rng = np.random.default_rng(rng.integers(2**32))
        c1, c2 = cfg.conv_channels
        wc, bc = ad.init_conv(rng, c1, 256, cfg.kernel, cfg.kernel)
        self.params.add("conv1.W", wc)
        self.params.add("conv1.b", bc)
        wc, bc = ad.init_conv(rng, c2, c1, cfg.kernel, cfg.kernel)
        self.params.add("conv2.W", wc)
        self.params.add("conv2.b", bc)
        w, b = ad.init_dense(rng, c2 * 7 * 7, cfg.a1_width)
        self.params.add("a1.W", w)
        self.params.add("a1.b", b)
        w, b = ad.init_dense(rng, 7, cfg.b1_width)
        self.params.add("b1.W", w)
        self.params.add("b1.b", b)
        for name, wi, wo in (("b2", cfg.b1_width, cfg.b2_width),
                             ("b3", cfg.b2_width, cfg.b3_width)):
            w, b = ad.init_dense(rng, wi, wo)
            self.params.add(f"{name}.W", w)
            self.params.add(f"{name}.b", b)
            self.params.add(f"{name}.gamma", np.ones(wo))
            self.params.add(f"{name}.beta", np.zeros(wo))
            self.bn_states[name] = ad.BatchNormState(wo)
        bound = 1.0 / np.sqrt(cfg.a1_width * cfg.b3_width)
        self.params.add("bl.A", rng.uniform(-bound, bound,
                                            size=(cfg.bilinear_width, cfg.a1_width, cfg.b3_width)))
        self.params.add("bl.b", np.zeros(cfg.bilinear_width))
        self.params.add("bl.gamma", np.ones(cfg.bilinear_width))
        self.params.add("bl.beta", np.zeros(cfg.bilinear_width))
        self.bn_states["bl"] = ad.BatchNormState(cfg.bilinear_width)
        w, b = ad.init_dense(rng, cfg.bilinear_width, n_classes)
        self.params.add("out.W", w)
        self.params.add("out.b", b)

    def _dense_block(self, x, name: str, training: bool) -> ad.Tensor:
        x = ad.dense(x, self.params[f"{name}.W"], self.params[f"{name}.b"])
        x = ad.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                          self.bn_states[name], training)
        x = ad.relu(x)
        return ad.dropout(x, self.cfg.dropout_rate, self._dropout_rng, training)

    def forward_logits(self, features, ais, training: bool = False) -> ad.Tensor:
        x = ad.Tensor(np.asarray(features))
        x = ad.relu(ad.conv2d(x, self.params["conv1.W"], self.params["conv1.b"], self.cfg.padding))
        x = ad.relu(ad.conv2d(x, self.params["conv2.W"], self.params["conv2.b"], self.cfg.padding))
        x = ad.flatten(x)
        a1 = ad.dense(x, self.params["a1.W"], self.params["a1.b"])
        y = ad.Tensor(np.asarray(ais, dtype=float).reshape(len(features), 7))
        y = ad.dense(y, self.params["b1.W"], self.params["b1.b"])
        y = self._dense_block(y, "b2", training)
        y = self._dense_block(y, "b3", training)
        z = ad.bilinear(a1, y, self.params["bl.A"], self.params["bl.b"])
        z = ad.batch_norm(z, self.params["bl.gamma"], self.params["bl.beta"],
                          self.bn_states["bl"], training)
        z = ad.relu(z)
        z = ad.dropout(z, self.cfg.dropout_rate, self._dropout_rng, training)
        return ad.dense(z, self.params["out.W"], self.params["out.b"])

    def forward(self, features, ais, training: bool = False) -> ad.Tensor:
        return ad.softmax(self.forward_logits(features, ais, training), axis=1)

    def train(self, ds: Dataset, epochs: int | None = None) -> list[float]:
        """Same training contract as the neuro-fuzzy model: Adam on cross-entropy."""
        if len(ds) == 0:
            raise ValueError("training dataset is empty")
        cfg = self.cfg
        epochs = epochs if epochs is not None else cfg.epochs
        onehot = np.eye(self.n_classes)[ds.labels]
        opt = ad.Adam(self.params, lr=cfg.learning_rate)
        shuffle_rng = np.random.default_rng(cfg.seed + 1)
        trace = []
        for epoch in range(epochs):
            order = shuffle_rng.permutation(len(ds))
            losses = []
            for b0 in range(0, len(ds), cfg.batch_size):
                idx = order[b0:b0 + cfg.batch_size]
                self.params.zero_grad()
                logits = self.forward_logits(ds.features[idx], ds.ais[idx], training=True)
                loss = ad.softmax_cross_entropy(logits, onehot[idx])
                if not np.isfinite(loss.data):
                    raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}")
                loss.backward()
                opt.step()
                losses.append(loss.item() * len(idx))
            trace.append(sum(losses) / len(ds))
        return trace

    def predict_batch(self, features, ais) -> tuple[np.ndarray, np.ndarray]:
        probs = self.forward(features, ais, training=False).data
        return probs.argmax(axis=1), probs

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = [(name, t.data) for name, t in self.params.items()]
        for name, st in self.bn_states.items():
            entries.append((f"bn.{name}.running_mean", st.running_mean))
            entries.append((f"bn.{name}.running_var", st.running_var))
        write_params_bin(out_dir / "params.bin", entries)
        manifest = {
            "format": "nfship-baseline-checkpoint",
            "version": 1,
            "n_classes": self.n_classes,
            "config": self.cfg.to_dict(),
            "config_hash": config_hash(self.cfg.to_dict()),
            "params": [{"name": n, "shape": list(a.shape)} for n, a in entries],
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, in_dir) -> "BilinearBaseline":
        in_dir = Path(in_dir)
        manifest = json.loads((in_dir / "manifest.json").read_text())
        cfgd = dict(manifest["config"])
        cfgd["conv_channels"] = tuple(cfgd["conv_channels"])
        model = cls(manifest["n_classes"], BaselineConfig(**cfgd))
        for name, arr in read_params_bin(in_dir / "params.bin"):
            if name.startswith("bn."):
                _, key, stat = name.split(".")
                setattr(model.bn_states[key], stat, arr.astype(np.float64))
            else:
                model.params[name].data = arr.astype(model.params[name].data.dtype)
        return model


def knn_predict(train_X, train_y, x, k: int = 5) -> int:
    """Majority label among the k Euclidean-nearest AIS rows; ties broken by
    the class with the smallest summed neighbour distance."""
    train_X = np.asarray(train_X, dtype=float)
    train_y = np.asarray(train_y)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(train_X):
        warnings.warn(f"k={k} exceeds training size {len(train_X)}; clamping")
        k = len(train_X)
    d = np.linalg.norm(train_X - np.asarray(x, dtype=float), axis=1)
    nearest = np.argsort(d, kind="stable")[:k]
    labels, counts = np.unique(train_y[nearest], return_counts=True)
    winners = labels[counts == counts.max()]
    if len(winners) == 1:
        return int(winners[0])
    sums = {int(c): d[nearest][train_y[nearest] == c].sum() for c in winners}
    return min(sums, key=lambda c: (sums[c], c))


class GaussianNB:
    """Per-class diagonal Gaussians over the 7 AIS fields, variance floored."""

    VAR_FLOOR = 1e-9

    def __init__(self):
        self.means = None
        self.vars = None
        self.log_priors = None

    def fit(self, X, y, n_classes: int) -> "GaussianNB":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        if len(np.unique(y)) < 2:
            raise ValueError("training set holds a single class")
        self.means = np.zeros((n_classes, X.shape[1]))
        self.vars = np.full((n_classes, X.shape[1]), self.VAR_FLOOR)
        priors = np.zeros(n_classes)
        for c in range(n_classes):
            rows = X[y == c]
            if len(rows) == 0:
                priors[c] = 1e-12
                continue
            self.means[c] = rows.mean(axis=0)
            self.vars[c] = np.maximum(rows.var(axis=0), self.VAR_FLOOR)
            priors[c] = len(rows)
        self.log_priors = np.log(priors / priors.sum())
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ll = -0.5 * (((X[:, None, :] - self.means) ** 2) / self.vars
                     + np.log(2 * np.pi * self.vars)).sum(axis=2)
        ll += self.log_priors
        ll -= ll.max(axis=1, keepdims=True)
        p = np.exp(ll)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


class LogisticRegression:
    """Multinomial softmax regression trained by full-batch gradient descent."""

    def __init__(self, lr: float = 1e-2, epochs: int = 2000, seed: int = 0):
        self.lr = lr
        self.epochs = epochs
        self.seed = seed
        self.W = None
        self.b = None
        self._mu = None
        self._sigma = None

    def fit(self, X, y, n_classes: int) -> "LogisticRegression":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        if len(np.unique(y)) < 2:
            raise ValueError("training set holds a single class")
        self._mu = X.mean(axis=0)
        self._sigma = np.maximum(X.std(axis=0), 1e-9)
        Xs = (X - self._mu) / self._sigma
        rng = np.random.default_rng(self.seed)
        self.W = rng.normal(0, 0.01, size=(X.shape[1], n_classes))
        self.b = np.zeros(n_classes)
        onehot = np.eye(n_classes)[y]
        n = len(X)
        for _ in range(self.epochs):
            z = Xs @ self.W + self.b
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            g = (p - onehot) / n
            self.W -= self.lr * (Xs.T @ g)
            self.b -= self.lr * g.sum(axis=0)
        return self

    def predict_proba(self, X) -> np.ndarray:
        Xs = (np.asarray(X, dtype=float) - self._mu) / self._sigma
        z = Xs @ self.W + self.b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)
