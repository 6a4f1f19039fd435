import numpy as np
import pytest

from patterncraft.autoenc import AeConfig, AeNetwork
from patterncraft.nn import (Adam, Conv2D, ConvTranspose2D, Dense, Dropout, Relu, ShapeMismatch,
                             Sigmoid, Upsample2x, mse, mse_grad, numeric_grad, rel_error,
                             softmax_xent)

RNG = np.random.default_rng(42)
TOL = 1e-4


def check_layer_grads(layer, x, dy_shape=None, train=False, rng_seed=None):
    """Finite-difference check of input and parameter gradients."""
    rng = np.random.default_rng(rng_seed) if rng_seed is not None else None
    y, cache = layer.forward(x, train=train, rng=rng)
    target = np.zeros_like(y)
    dy = mse_grad(y, target)
    dx, pgrads = layer.backward(dy, cache)

    def loss():
        r = np.random.default_rng(rng_seed) if rng_seed is not None else None
        out, _ = layer.forward(x, train=train, rng=r)
        return mse(out, target)

    assert rel_error(numeric_grad(loss, x), dx) < TOL
    for p, g in zip(layer.params(), pgrads):
        assert rel_error(numeric_grad(loss, p), g) < TOL


def test_conv_identity_kernel():
    conv = Conv2D(3, 3, 4, 4, 1, 1, dtype=np.float64)
    conv.w = np.zeros_like(conv.w)
    for c in range(4):
        conv.w[1, 1, c, c] = 1.0
    x = RNG.standard_normal((2, 6, 6, 4))
    y, _ = conv.forward(x)
    assert np.allclose(y, x)


def test_conv_same_padding_shape():
    conv = Conv2D(3, 3, 5, 7, 1, 1)
    x = RNG.standard_normal((3, 8, 8, 5)).astype(np.float32)
    y, _ = conv.forward(x)
    assert y.shape == (3, 8, 8, 7)


def test_conv_stride2_shape():
    conv = Conv2D(3, 3, 4, 6, 2, 1)
    y, _ = conv.forward(np.zeros((1, 8, 8, 4), dtype=np.float32))
    assert y.shape == (1, 4, 4, 6)


def test_conv_gradients():
    conv = Conv2D(3, 3, 3, 4, 1, 1, np.random.default_rng(0), dtype=np.float64)
    check_layer_grads(conv, RNG.standard_normal((2, 5, 5, 3)))


def test_conv_stride2_gradients():
    conv = Conv2D(3, 3, 3, 4, 2, 1, np.random.default_rng(0), dtype=np.float64)
    check_layer_grads(conv, RNG.standard_normal((2, 6, 6, 3)))


def test_deconv_shape_formula():
    for stride, pad, op, h in [(1, 1, 0, 5), (2, 1, 1, 4), (2, 0, 0, 3)]:
        layer = ConvTranspose2D(3, 3, 4, 2, stride, pad, op, rng=np.random.default_rng(1))
        x = RNG.standard_normal((1, h, h, 4)).astype(np.float32)
        y, _ = layer.forward(x)
        want = (h - 1) * stride - 2 * pad + 3 + op
        assert y.shape == (1, want, want, 2)


def test_deconv_gradients():
    layer = ConvTranspose2D(3, 3, 3, 4, 1, 1, rng=np.random.default_rng(0), dtype=np.float64)
    check_layer_grads(layer, RNG.standard_normal((2, 5, 5, 3)))


def test_deconv_stride2_gradients():
    layer = ConvTranspose2D(3, 3, 3, 2, 2, 1, 1, rng=np.random.default_rng(0), dtype=np.float64)
    check_layer_grads(layer, RNG.standard_normal((2, 4, 4, 3)))


def test_dense_gradients():
    layer = Dense(7, 5, np.random.default_rng(0), dtype=np.float64)
    check_layer_grads(layer, RNG.standard_normal((3, 7)))


def test_relu_sigmoid_gradients():
    check_layer_grads(Relu(), RNG.standard_normal((4, 9)) + 0.1)
    check_layer_grads(Sigmoid(), RNG.standard_normal((4, 9)))


def test_upsample_shape_and_gradients():
    up = Upsample2x()
    x = RNG.standard_normal((2, 3, 5, 4))
    y, _ = up.forward(x)
    assert y.shape == (2, 6, 10, 4)
    assert np.allclose(y[:, ::2, ::2], x)
    check_layer_grads(up, x)


def test_dropout_gradients_with_fixed_mask():
    check_layer_grads(Dropout(0.4), RNG.standard_normal((3, 8)), train=True, rng_seed=7)


def test_dropout_rate_zero_is_identity():
    d = Dropout(0.0)
    x = RNG.standard_normal((2, 5))
    train, _ = d.forward(x, train=True, rng=np.random.default_rng(0))
    infer, _ = d.forward(x, train=False)
    assert np.array_equal(train, infer) and np.array_equal(train, x)


def test_dropout_inverted_scaling():
    d = Dropout(0.5)
    x = np.ones((200, 50))
    y, _ = d.forward(x, train=True, rng=np.random.default_rng(3))
    kept = y[y > 0]
    assert np.allclose(kept, 2.0)
    assert abs(y.mean() - 1.0) < 0.05


def test_mse_values():
    assert mse(np.ones(4), np.ones(4)) == 0.0
    assert mse(np.ones(4), np.zeros(4)) == 1.0
    assert mse(np.array([0.0, 1.0]), np.array([1.0, 1.0])) == 0.5


def test_mse_nonnegative_zero_iff_equal():
    a = RNG.standard_normal(10)
    b = a + 1e-3
    assert mse(a, a) == 0.0
    assert mse(a, b) > 0.0


def test_mse_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        mse(np.ones(3), np.ones(4))


def test_softmax_xent_gradients():
    logits = RNG.standard_normal((6, 4))
    onehot = np.zeros((6, 4))
    onehot[np.arange(6), RNG.integers(0, 4, 6)] = 1.0
    loss, grad = softmax_xent(logits, onehot)

    def f():
        return softmax_xent(logits, onehot)[0]

    assert rel_error(numeric_grad(f, logits), grad) < TOL


def test_adam_first_step_is_lr_sign():
    p = np.array([2.0, -3.0, 0.5])
    g = np.array([0.7, -0.2, 1.3])
    opt = Adam([p], lr=0.01)
    before = p.copy()
    opt.step([g])
    assert np.all(np.abs((before - p) - 0.01 * np.sign(g)) < 1e-9)


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, 2.0])
    opt = Adam([p], lr=0.1)
    for _ in range(5):
        opt.step([np.zeros_like(p)])
    assert np.array_equal(p, [1.0, 2.0])


def test_adam_minimizes_quadratic():
    x = np.array([5.0])
    opt = Adam([x], lr=0.01)
    for _ in range(2000):
        opt.step([2 * x])
    assert abs(x[0]) < 1e-2


def mini_net(n_labels, seed=0):
    cfg = AeConfig(n_labels=n_labels, embedding_size=8, conv_filters=(4, 4),
                   dropout_rate=0.0, seed=seed)
    return AeNetwork(3, 4, 4, cfg, dtype=np.float64)


@pytest.mark.parametrize("n_labels", [0, 2])
def test_composed_autoencoder_gradients(n_labels):
    net = mini_net(n_labels)
    x = np.random.default_rng(5).random((2, 4, 4, 3))
    lab = np.random.default_rng(6).random((2, n_labels)) if n_labels else None
    ti = np.random.default_rng(7).random(x.shape)
    tl = np.random.default_rng(8).random((2, n_labels)) if n_labels else None

    def loss():
        oi, ol, _ = net.forward(x, lab)
        val = mse(oi, ti)
        if n_labels:
            val += mse(ol, tl)
        return val

    oi, ol, cache = net.forward(x, lab)
    grads = net.backward(cache, mse_grad(oi, ti), mse_grad(ol, tl) if n_labels else None)
    for p, g in zip(net.params(), grads):
        assert rel_error(numeric_grad(loss, p), g) < TOL, "composed gradient mismatch"


def test_forward_infer_deterministic():
    net = mini_net(2)
    x = np.random.default_rng(5).random((3, 4, 4, 3))
    lab = np.random.default_rng(6).random((3, 2))
    a = net.forward(x, lab)[0]
    b = net.forward(x, lab)[0]
    assert np.array_equal(a, b)


def test_shape_mismatch_raises():
    net = mini_net(2)
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((1, 4, 4, 5)), np.zeros((1, 2)))
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((1, 4, 4, 3)), np.zeros((1, 3)))
