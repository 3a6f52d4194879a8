"""Minimal reverse-mode differentiation over numpy arrays.

A Tensor records the operation that produced it; backward() replays the
tape in reverse topological order. Only the primitives the two networks
need are provided, each with an exact backward rule, plus the Adam update
and a central finite-difference gradient checker.

Default numeric width is float32; set_default_dtype(np.float64) switches the
engine into the 64-bit verification mode used by grad_check.
"""
from __future__ import annotations

import numpy as np

_default_dtype = np.float32
_EXP_CLAMP = 500.0


def _exp_clamp(dtype) -> float:
    # float32 exp overflows near 88; float64 near 709
    return 80.0 if dtype == np.float32 else _EXP_CLAMP


def set_default_dtype(dtype) -> None:
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in ts)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _needs_grad(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.shape))
        b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.shape))
        b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def scale(a, k: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data * k

    def backward(g):
        a.accumulate_grad(g * k)

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(np.clip(a.data, -_exp_clamp(a.dtype), _exp_clamp(a.dtype)))

    def backward(g):
        a.accumulate_grad(g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    z = np.clip(a.data, -_exp_clamp(a.dtype), _exp_clamp(a.dtype))
    out_data = 1.0 / (1.0 + np.exp(-z))

    def backward(g):
        a.accumulate_grad(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    z = a.data
    out_data = np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(np.minimum(z, _exp_clamp(a.dtype)))))

    def backward(g):
        s = 1.0 / (1.0 + np.exp(-np.clip(z, -_exp_clamp(a.dtype), _exp_clamp(a.dtype))))
        a.accumulate_grad(g * s)

    return _make(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out_data = a.data * mask

    def backward(g):
        a.accumulate_grad(g * mask)

    return _make(out_data, (a,), backward)


def leaky_relu(a, negative_slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out_data = np.where(mask, a.data, negative_slope * a.data)

    def backward(g):
        a.accumulate_grad(g * np.where(mask, 1.0, negative_slope))

    return _make(out_data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        a.accumulate_grad(g @ b.data.T)
        b.accumulate_grad(a.data.T @ g)

    return _make(out_data, (a, b), backward)


def dense(x, W, b) -> Tensor:
    """Affine map x @ W + b with x:(N,I), W:(I,O), b:(O,)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense shapes do not conform: x{x.shape} W{W.shape} b{b.shape}")
    out_data = x.data @ W.data + b.data

    def backward(g):
        x.accumulate_grad(g @ W.data.T)
        W.accumulate_grad(x.data.T @ g)
        b.accumulate_grad(g.sum(axis=0))

    return _make(out_data, (x, W, b), backward)


def flatten(a) -> Tensor:
    a = as_tensor(a)
    n = a.shape[0]
    out_data = a.data.reshape(n, -1)

    def backward(g):
        a.accumulate_grad(g.reshape(a.shape))

    return _make(out_data, (a,), backward)


def concat_cols(parts: list[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    datas = [p.data if p.data.ndim == 2 else p.data.reshape(-1, 1) for p in parts]
    out_data = np.concatenate(datas, axis=1)
    widths = [d.shape[1] for d in datas]

    def backward(g):
        k = 0
        for p, w in zip(parts, widths):
            seg = g[:, k:k + w]
            p.accumulate_grad(seg.reshape(p.shape))
            k += w

    return _make(out_data, tuple(parts), backward)


def gather_cols(a, idx) -> Tensor:
    """Select columns of a 2-D tensor by a constant index array."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=int)
    out_data = a.data[:, idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (slice(None), idx), g)
        a.accumulate_grad(ga)

    return _make(out_data, (a,), backward)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), backward)


def mean_all(a) -> Tensor:
    return scale(sum_all(a), 1.0 / as_tensor(a).data.size)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a.accumulate_grad(out_data * (g - dot))

    return _make(out_data, (a,), backward)


def simplex_weights(logits) -> Tensor:
    """Simplex reparameterization of an unconstrained weight vector."""
    return softmax(logits, axis=-1)


def simplex_weights_col(logits) -> Tensor:
    """Simplex reparameterization of an (n, 1) column of logits."""
    return softmax(logits, axis=0)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # win: (n, c, oh, ow, kh, kw) -> (n, oh*ow, c*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols6 = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + oh, j:j + ow] += cols6[:, :, :, :, i, j]
    if pad:
        xp = xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x, W, b, padding: int = 1) -> Tensor:
    """2-D convolution, stride 1. x:(N,C,H,W), W:(O,C,kh,kw), b:(O,)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.data.ndim != 4 or W.data.ndim != 4 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"conv2d shapes do not conform: x{x.shape} W{W.shape}")
    o, c, kh, kw = W.shape
    cols, oh, ow = _im2col(x.data, kh, kw, padding)
    wmat = W.data.reshape(o, -1)
    out = cols @ wmat.T + b.data  # (n, oh*ow, o)
    out_data = out.transpose(0, 2, 1).reshape(x.shape[0], o, oh, ow)

    def backward(g):
        gmat = g.reshape(x.shape[0], o, oh * ow).transpose(0, 2, 1)  # (n, ohw, o)
        W.accumulate_grad(np.einsum("npo,npk->ok", gmat, cols).reshape(W.shape))
        b.accumulate_grad(gmat.sum(axis=(0, 1)))
        dcols = gmat @ wmat  # (n, ohw, c*kh*kw)
        x.accumulate_grad(_col2im(dcols, x.shape, kh, kw, padding))

    return _make(out_data, (x, W, b), backward)


# ---------------------------------------------------------------------------
# batch normalization and dropout
# ---------------------------------------------------------------------------

class BatchNormState:
    """Running statistics for one batch-norm layer over (N, F) activations."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(num_features, dtype=np.float64)
        self.running_var = np.ones(num_features, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm shapes do not conform: x{x.shape} gamma{gamma.shape}")
    eps = state.eps
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        gamma.accumulate_grad((g * xhat).sum(axis=0))
        beta.accumulate_grad(g.sum(axis=0))
        gx = g * gamma.data
        if training:
            n = x.shape[0]
            dxhat = gx
            dx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) * inv_std
            x.accumulate_grad(dx)
        else:
            x.accumulate_grad(gx * inv_std)

    return _make(out_data, (x, gamma, beta), backward)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; exact identity in eval mode."""
    x = as_tensor(x)
    if not training or rate == 0.0:
        out_data = x.data.copy()

        def backward_id(g):
            x.accumulate_grad(g)

        return _make(out_data, (x,), backward_id)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    keep = keep.astype(x.dtype)
    out_data = x.data * keep

    def backward(g):
        x.accumulate_grad(g * keep)

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# bilinear combination and loss
# ---------------------------------------------------------------------------

def bilinear(x, y, A, b) -> Tensor:
    """out[n,o] = sum_ij x[n,i] A[o,i,j] y[n,j] + b[o]."""
    x, y, A, b = as_tensor(x), as_tensor(y), as_tensor(A), as_tensor(b)
    o, i, j = A.shape
    if x.shape[1] != i or y.shape[1] != j or b.shape != (o,):
        raise ShapeError(f"bilinear shapes do not conform: x{x.shape} y{y.shape} A{A.shape}")
    out_data = np.einsum("ni,oij,nj->no", x.data, A.data, y.data, optimize=True) + b.data

    def backward(g):
        x.accumulate_grad(np.einsum("no,oij,nj->ni", g, A.data, y.data, optimize=True))
        y.accumulate_grad(np.einsum("no,oij,ni->nj", g, A.data, x.data, optimize=True))
        A.accumulate_grad(np.einsum("no,ni,nj->oij", g, x.data, y.data, optimize=True))
        b.accumulate_grad(g.sum(axis=0))

    return _make(out_data, (x, y, A, b), backward)


def softmax_cross_entropy(logits, onehot) -> Tensor:
    """Mean over the batch of -sum_c y_c log softmax(logits)_c.

    Gradient w.r.t. logits is (softmax - y) / N, stabilized by max-shift.
    """
    logits = as_tensor(logits)
    y = np.asarray(onehot if not isinstance(onehot, Tensor) else onehot.data, dtype=logits.dtype)
    if logits.shape != y.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {y.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = logits.shape[0]
    loss = -(y * logp).sum() / n
    probs = np.exp(logp)

    def backward(g):
        logits.accumulate_grad(g * (probs - y) / n)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------

class ParamStore:
    """Named trainable tensors plus a train/eval flag."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.training = True

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False


class NonFiniteGradientError(RuntimeError):
    pass


class Adam:
    """Adaptive-moment update with bias correction."""

    def __init__(self, params: ParamStore, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NonFiniteGradientError(f"non-finite gradient in {name!r}")
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            t.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def grad_check(loss_fn, params: ParamStore, h: float = 1e-5, tol: float = 1e-4,
               max_entries_per_param: int = 20, rng: np.random.Generator | None = None):
    """Central finite-difference check of d loss / d params.

    loss_fn must be deterministic (eval-mode dropout, fixed batch-norm
    statistics). Returns {name: max relative error} and an overall pass flag.
    """
    rng = rng or np.random.default_rng(0)
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}
    report: dict[str, float] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        idxs = np.arange(n) if n <= max_entries_per_param else rng.choice(n, max_entries_per_param, replace=False)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = float(analytic[name].reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1.0)
            worst = max(worst, err)
        report[name] = worst
    return report, all(e <= tol for e in report.values())


def init_dense(rng: np.random.Generator, fan_in: int, fan_out: int):
    """Fan-in-scaled uniform initialization; biases start at zero."""
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return W, b


def init_conv(rng: np.random.Generator, out_ch: int, in_ch: int, kh: int, kw: int):
    fan_in = in_ch * kh * kw
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(out_ch, in_ch, kh, kw))
    b = np.zeros(out_ch)
    return W, b
