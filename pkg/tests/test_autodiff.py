"""Finite-difference checks for every primitive, plus Adam and the tape."""
import numpy as np
import pytest

from nfship import autodiff as ad


@pytest.fixture(autouse=True)
def _f64(float64_mode):
    # every gradient comparison here runs in the 64-bit engine mode
    yield


def _check(build_loss, arrays, tol=1e-6, h=1e-6):
    """FD-check d(build_loss)/d(each array) at float64."""
    params = ad.ParamStore()
    tensors = [params.add(f"p{i}", a) for i, a in enumerate(arrays)]
    report, ok = ad.grad_check(lambda: build_loss(*tensors), params, h=h, tol=tol)
    assert ok, report


def test_tensor_basics():
    t = ad.Tensor([[1.0, 2.0]], requires_grad=True)
    assert t.shape == (1, 2)
    assert t.dtype == np.float64
    with pytest.raises(ValueError):
        t.backward()  # non-scalar


def test_add_sub_mul_broadcast_grads():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3,))
    _check(lambda x, y: ad.mean_all(ad.mul(ad.add(x, y), ad.sub(x, y))), [a, b])


def test_scale_exp_log_sigmoid_softplus_grads():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.1, 2.0, (3, 4))
    _check(lambda x: ad.mean_all(ad.log(ad.exp(ad.scale(x, 0.7)))), [a])
    _check(lambda x: ad.mean_all(ad.sigmoid(x)), [rng.normal(size=(5, 2))])
    _check(lambda x: ad.mean_all(ad.softplus(x)), [rng.normal(size=(5, 2))])


def test_relu_leaky_grads():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(6, 3)) + 0.3  # keep clear of the kink
    a[np.abs(a) < 0.05] = 0.1
    _check(lambda x: ad.mean_all(ad.relu(x)), [a])
    _check(lambda x: ad.mean_all(ad.leaky_relu(x, 0.01)), [a])


def test_matmul_dense_grads():
    rng = np.random.default_rng(3)
    x, W, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    _check(lambda a, c: ad.mean_all(ad.matmul(a, c)), [x, W])
    _check(lambda a, c, d: ad.mean_all(ad.dense(a, c, d)), [x, W, b])
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.Tensor(x), ad.Tensor(x))


def test_flatten_concat_gather_grads():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 2, 2))
    _check(lambda a: ad.mean_all(ad.flatten(a)), [x])
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 1))
    _check(lambda u, v: ad.mean_all(ad.concat_cols([u, v])), [a, b])
    c = rng.normal(size=(3, 5))
    # repeated indices exercise gradient accumulation in gather
    _check(lambda u: ad.mean_all(ad.gather_cols(u, np.array([0, 2, 2, 4]))), [c])


def test_softmax_grads_both_axes():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3))
    t1 = rng.normal(size=(4, 3))
    _check(lambda a: ad.mean_all(ad.mul(ad.softmax(a, axis=1), ad.Tensor(t1))), [x])
    col = rng.normal(size=(5, 1))
    t2 = rng.normal(size=(5, 1))
    _check(lambda a: ad.mean_all(ad.mul(ad.simplex_weights_col(a), ad.Tensor(t2))), [col])


def test_simplex_weights_output():
    w = ad.simplex_weights_col(ad.Tensor(np.zeros((4, 1)))).data
    assert np.allclose(w, 0.25)
    w = ad.simplex_weights(ad.Tensor([[0.0, 1000.0]])).data
    assert w[0, 1] > 0.999


def test_conv2d_grads():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 5, 5))
    W = rng.normal(size=(4, 3, 3, 3)) * 0.3
    b = rng.normal(size=4)
    _check(lambda a, w, c: ad.mean_all(ad.conv2d(a, w, c, padding=1)), [x, W, b])
    _check(lambda a, w, c: ad.mean_all(ad.conv2d(a, w, c, padding=0)), [x, W, b])


def test_conv2d_matches_naive():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 4, 4))
    W = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(W), ad.Tensor(b), padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 4, 4))
    for o in range(3):
        for i in range(4):
            for j in range(4):
                ref[0, o, i, j] = (xp[0, :, i:i + 3, j:j + 3] * W[o]).sum() + b[o]
    assert np.allclose(out, ref, atol=1e-12)


def test_batch_norm_train_and_eval():
    rng = np.random.default_rng(8)
    x = rng.normal(2.0, 3.0, (16, 4))
    gamma, beta = np.ones(4), np.zeros(4)
    state = ad.BatchNormState(4)
    out = ad.batch_norm(ad.Tensor(x), ad.Tensor(gamma), ad.Tensor(beta), state, training=True)
    assert np.allclose(out.data.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(out.data.std(axis=0), 1.0, atol=1e-3)
    # running stats moved toward the batch statistics
    assert np.allclose(state.running_mean, 0.1 * x.mean(axis=0), atol=1e-12)
    # eval mode uses the stored statistics, not the batch
    out2 = ad.batch_norm(ad.Tensor(x[:2]), ad.Tensor(gamma), ad.Tensor(beta), state, training=False)
    expect = (x[:2] - state.running_mean) / np.sqrt(state.running_var + state.eps)
    assert np.allclose(out2.data, expect, atol=1e-12)


def test_batch_norm_train_mode_grads():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(8, 3))
    gamma = rng.uniform(0.5, 1.5, 3)
    beta = rng.normal(size=3)
    state = ad.BatchNormState(3)
    tgt = rng.normal(size=(8, 3))

    def loss(a, g, b):
        out = ad.batch_norm(a, g, b, state, training=True)
        return ad.mean_all(ad.mul(out, ad.Tensor(tgt)))

    _check(loss, [x, gamma, beta])


def test_dropout_eval_identity_and_train_scaling():
    x = np.ones((1000, 4))
    out = ad.dropout(ad.Tensor(x), 0.5, None, training=False)
    assert (out.data == x).all()
    rng = np.random.default_rng(10)
    out = ad.dropout(ad.Tensor(x), 0.5, rng, training=True)
    kept = out.data != 0
    assert 0.4 < kept.mean() < 0.6
    assert np.allclose(out.data[kept], 2.0)  # inverted scaling
    with pytest.raises(ValueError):
        ad.dropout(ad.Tensor(x), 0.5, None, training=True)


def test_bilinear_grads():
    rng = np.random.default_rng(11)
    x, y = rng.normal(size=(3, 4)), rng.normal(size=(3, 2))
    A, b = rng.normal(size=(5, 4, 2)) * 0.2, rng.normal(size=5)
    _check(lambda u, v, a, c: ad.mean_all(ad.bilinear(u, v, a, c)), [x, y, A, b])


def test_softmax_cross_entropy_value_and_grad():
    logits = np.log(np.array([[0.7, 0.2, 0.1]]))
    onehot = np.array([[1.0, 0.0, 0.0]])
    loss = ad.softmax_cross_entropy(ad.Tensor(logits, requires_grad=True), onehot)
    assert loss.item() == pytest.approx(-np.log(0.7))
    rng = np.random.default_rng(12)
    z = rng.normal(size=(6, 4))
    y = np.eye(4)[rng.integers(0, 4, 6)]
    _check(lambda a: ad.softmax_cross_entropy(a, y), [z])


def test_adam_minimizes_quadratic_bowl():
    params = ad.ParamStore()
    x = params.add("x", np.array([3.0, -2.0]))
    opt = ad.Adam(params, lr=1e-2)
    for _ in range(2000):
        params.zero_grad()
        loss = ad.sum_all(ad.mul(x, x))
        loss.backward()
        opt.step()
    assert np.abs(x.data).max() < 1e-3


def test_adam_rejects_nonfinite_gradient():
    params = ad.ParamStore()
    x = params.add("x", np.array([1.0]))
    opt = ad.Adam(params)
    x.grad = np.array([np.nan])
    with pytest.raises(ad.NonFiniteGradientError):
        opt.step()


def test_grad_check_negative_control():
    """A deliberately corrupted backward rule must be caught."""
    params = ad.ParamStore()
    x = params.add("x", np.random.default_rng(13).normal(size=(3, 2)))

    def corrupted_square(a):
        out = ad.mul(a, a)
        orig = out._backward
        out._backward = lambda g: orig(g * 1.5)
        return out

    _, ok = ad.grad_check(lambda: ad.mean_all(corrupted_square(x)), params, tol=1e-4)
    assert not ok


def test_backward_accumulates_through_shared_nodes():
    x = ad.Tensor(np.array([2.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, x))  # 2x^2, dy/dx = 4x
    ad.sum_all(y).backward()
    assert np.allclose(x.grad, 8.0)


def test_param_store_duplicate_and_modes():
    params = ad.ParamStore()
    params.add("a", np.zeros(2))
    with pytest.raises(ValueError):
        params.add("a", np.zeros(2))
    assert "a" in params and "b" not in params
    params.eval()
    assert not params.training


def test_default_dtype_switching():
    ad.set_default_dtype(np.float32)
    assert ad.Tensor([1.0]).dtype == np.float32
    ad.set_default_dtype(np.float64)
    assert ad.Tensor([1.0]).dtype == np.float64
    with pytest.raises(ValueError):
        ad.set_default_dtype(np.int32)
