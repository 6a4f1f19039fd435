"""Dense-tensor layer kit: conv, transposed conv, upsampling, dropout, dense.

All image tensors are NHWC. Layers are functional: ``forward`` returns
``(y, cache)`` and ``backward(dy, cache)`` returns ``(dx, param_grads)`` with
``param_grads`` ordered like ``params()``. Parameters live on the layer; a
whole-network parameter list is the concatenation over layers.
"""
from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


def _pad_hw(x: np.ndarray, pt: int, pb: int, pl: int, pr: int) -> np.ndarray:
    if pt or pb or pl or pr:
        return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return x


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N,H,W,C) -> (N*Ho*Wo, kh*kw*C) patch matrix."""
    n, h, w, c = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = _pad_hw(x, pad, pad, pad, pad)
    s = xp.strides
    shape = (n, ho, wo, kh, kw, c)
    strides = (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3])
    win = np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)
    return np.ascontiguousarray(win).reshape(n * ho * wo, kh * kw * c)


def conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> tuple[np.ndarray, np.ndarray]:
    """Correlate x (N,H,W,C) with w (kh,kw,C,F); returns (y, cols)."""
    n, h, wd, c = x.shape
    kh, kw, ci, f = w.shape
    if ci != c:
        raise ShapeMismatch(f"conv expects {ci} input channels, got {c}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cols = im2col(x, kh, kw, stride, pad)
    y = cols @ w.reshape(kh * kw * c, f)
    return y.reshape(n, ho, wo, f), cols


def conv_bwd_weights(cols: np.ndarray, dy: np.ndarray, w_shape: tuple[int, ...]) -> np.ndarray:
    f = dy.shape[-1]
    return (cols.T @ dy.reshape(-1, f)).reshape(w_shape)


def conv_bwd_input(dy: np.ndarray, w: np.ndarray, stride: int, pad: int,
                   in_h: int, in_w: int) -> np.ndarray:
    """Gradient of conv_fwd w.r.t. its input (also transposed-conv forward)."""
    kh, kw, c, f = w.shape
    n, ho, wo, _ = dy.shape
    if stride > 1:
        dyd = np.zeros((n, (ho - 1) * stride + 1, (wo - 1) * stride + 1, f), dtype=dy.dtype)
        dyd[:, ::stride, ::stride] = dy
    else:
        dyd = dy
    extra_h = in_h + 2 * pad - kh - (ho - 1) * stride
    extra_w = in_w + 2 * pad - kw - (wo - 1) * stride
    dyp = _pad_hw(dyd, kh - 1 - pad, kh - 1 - pad + extra_h, kw - 1 - pad, kw - 1 - pad + extra_w)
    w_flip = w[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh,kw,F,C)
    dx, _ = conv_fwd(dyp, np.ascontiguousarray(w_flip), 1, 0)
    return dx


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D:
    def __init__(self, kh: int, kw: int, c_in: int, c_out: int, stride: int = 1, pad: int = 1,
                 rng: np.random.Generator | None = None, init: str = "he", dtype=np.float32):
        self.kh, self.kw, self.c_in, self.c_out = kh, kw, c_in, c_out
        self.stride, self.pad = stride, pad
        rng = rng or np.random.default_rng(0)
        fan_in = kh * kw * c_in
        if init == "he":
            self.w = he_normal(rng, (kh, kw, c_in, c_out), fan_in, dtype)
        else:
            self.w = glorot_uniform(rng, (kh, kw, c_in, c_out), fan_in, kh * kw * c_out, dtype)
        self.b = np.zeros(c_out, dtype=dtype)

    def params(self):
        return [self.w, self.b]

    def set_params(self, ps):
        self.w, self.b = ps

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return ((h + 2 * self.pad - self.kh) // self.stride + 1,
                (w + 2 * self.pad - self.kw) // self.stride + 1)

    def forward(self, x, train=False, rng=None):
        y, cols = conv_fwd(x, self.w, self.stride, self.pad)
        return y + self.b, (cols, x.shape)

    def backward(self, dy, cache):
        cols, x_shape = cache
        dw = conv_bwd_weights(cols, dy, self.w.shape)
        db = dy.sum(axis=(0, 1, 2))
        dx = conv_bwd_input(dy, self.w, self.stride, self.pad, x_shape[1], x_shape[2])
        return dx, [dw, db]


class ConvTranspose2D:
    """Adjoint of Conv2D: out = (in-1)*stride - 2*pad + k + output_padding."""

    def __init__(self, kh: int, kw: int, c_in: int, c_out: int, stride: int = 1, pad: int = 1,
                 output_padding: int = 0, rng: np.random.Generator | None = None,
                 init: str = "he", dtype=np.float32):
        if output_padding >= stride:
            raise ValueError("output_padding must be smaller than stride")
        self.kh, self.kw, self.c_in, self.c_out = kh, kw, c_in, c_out
        self.stride, self.pad, self.output_padding = stride, pad, output_padding
        rng = rng or np.random.default_rng(0)
        fan_in = kh * kw * c_in
        # stored in conv orientation (kh, kw, c_out, c_in); forward is the
        # conv input-gradient, so channels map c_in -> c_out
        if init == "he":
            self.w = he_normal(rng, (kh, kw, c_out, c_in), fan_in, dtype)
        else:
            self.w = glorot_uniform(rng, (kh, kw, c_out, c_in), fan_in, kh * kw * c_out, dtype)
        self.b = np.zeros(c_out, dtype=dtype)

    def params(self):
        return [self.w, self.b]

    def set_params(self, ps):
        self.w, self.b = ps

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return ((h - 1) * self.stride - 2 * self.pad + self.kh + self.output_padding,
                (w - 1) * self.stride - 2 * self.pad + self.kw + self.output_padding)

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.c_in:
            raise ShapeMismatch(f"deconv expects {self.c_in} input channels, got {x.shape[-1]}")
        oh, ow = self.out_hw(x.shape[1], x.shape[2])
        y = conv_bwd_input(x, self.w, self.stride, self.pad, oh, ow)
        return y + self.b, x

    def backward(self, dy, cache):
        x = cache
        dx, cols = conv_fwd(dy, self.w, self.stride, self.pad)
        dw = conv_bwd_weights(cols, x, self.w.shape)
        db = dy.sum(axis=(0, 1, 2))
        return dx, [dw, db]


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 init: str = "he", dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        rng = rng or np.random.default_rng(0)
        if init == "he":
            self.w = he_normal(rng, (n_in, n_out), n_in, dtype)
        else:
            self.w = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.b = np.zeros(n_out, dtype=dtype)

    def params(self):
        return [self.w, self.b]

    def set_params(self, ps):
        self.w, self.b = ps

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"dense expects {self.n_in} features, got {x.shape[-1]}")
        return x @ self.w + self.b, x

    def backward(self, dy, cache):
        x = cache
        return dy @ self.w.T, [x.T @ dy, dy.sum(axis=0)]


class Relu:
    def params(self):
        return []

    def forward(self, x, train=False, rng=None):
        return np.maximum(x, 0), x > 0

    def backward(self, dy, cache):
        return dy * cache, []


class Sigmoid:
    def params(self):
        return []

    def forward(self, x, train=False, rng=None):
        # clip keeps float32 exp from overflowing; sigmoid is saturated flat
        # far beyond +-60 anyway
        y = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
        return y, y

    def backward(self, dy, cache):
        y = cache
        return dy * y * (1.0 - y), []


class Dropout:
    """Inverted dropout: active only in train mode, survivors scaled by 1/(1-p)."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def params(self):
        return []

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        mask = mask.astype(x.dtype)
        return x * mask, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, []
        return dy * cache, []


class Upsample2x:
    """Nearest-neighbor upsampling; doubles H and W, preserves channels."""

    def params(self):
        return []

    def forward(self, x, train=False, rng=None):
        return x.repeat(2, axis=1).repeat(2, axis=2), x.shape

    def backward(self, dy, cache):
        n, h, w, c = cache
        return dy.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)), []


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over every element of the squared difference."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    d = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(d * d))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    return (2.0 / pred.size) * (pred - target)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    if logits.shape != onehot.shape:
        raise ShapeMismatch(f"xent shapes differ: {logits.shape} vs {onehot.shape}")
    p = softmax(logits)
    n = logits.shape[0]
    loss = float(-np.sum(onehot * np.log(np.maximum(p, 1e-12))) / n)
    return loss, (p - onehot) / n
