"""Layer primitives with explicit forward/backward passes.

Every layer works on NHWC (images) or (N, D) (vectors) arrays. ``forward``
returns the output together with whatever the layer needs to run
``backward`` later; the tape in :mod:`prefnav.nn.network` keeps those caches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Param:
    """A trainable array. Identity (not value) is used as the dict key for
    gradients and optimizer state."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


# --------------------------------------------------------------------------
# Layer specs (serializable architecture description)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel: int = 5
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Dense:
    out_dim: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Softplus:
    pass


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


LayerSpec = Conv2D | Dense | ReLU | Softplus | MaxPool


# --------------------------------------------------------------------------
# Concrete layers
# --------------------------------------------------------------------------

class Layer:
    params: tuple[Param, ...] = ()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, grad, need_input_grad=True):
        """Return ``(grad_input, {param: grad})``."""
        raise NotImplementedError

    def output_shape(self, in_shape):
        return in_shape


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ConvLayer(Layer):
    """5x5 (or k x k) convolution over NHWC input via im2col."""

    def __init__(self, in_channels, spec: Conv2D, rng=None, dtype=np.float32):
        self.spec = spec
        self.in_channels = in_channels
        k = spec.kernel
        shape = (spec.out_channels, in_channels, k, k)
        fan_in = in_channels * k * k
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = _kaiming_uniform(rng, shape, fan_in, dtype)
        self.W = Param("W", w)
        self.b = Param("b", np.zeros(spec.out_channels, dtype=dtype))
        self.params = (self.W, self.b)

    def output_shape(self, in_shape):
        h, w, _ = in_shape
        k, s, p = self.spec.kernel, self.spec.stride, self.spec.padding
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1, self.spec.out_channels)

    def forward(self, x):
        k, s, p = self.spec.kernel, self.spec.stride, self.spec.padding
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ValueError(f"conv expects (N, H, W, {self.in_channels}), got {x.shape}")
        n = x.shape[0]
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        ho, wo = win.shape[1], win.shape[2]
        cols = win.reshape(n * ho * wo, self.in_channels * k * k)
        wmat = self.W.value.reshape(self.spec.out_channels, -1)
        y = cols @ wmat.T + self.b.value
        return y.reshape(n, ho, wo, -1), (cols, xp.shape, ho, wo)

    def backward(self, cache, grad, need_input_grad=True):
        cols, xp_shape, ho, wo = cache
        k, s, p = self.spec.kernel, self.spec.stride, self.spec.padding
        g = grad.reshape(-1, self.spec.out_channels)
        dW = (g.T @ cols).reshape(self.W.value.shape)
        db = g.sum(axis=0)
        grads = {self.W: dW, self.b: db}
        if not need_input_grad:
            return None, grads
        n = xp_shape[0]
        # one matmul per kernel tap keeps the scatter-add contiguous
        taps = np.ascontiguousarray(self.W.value.transpose(2, 3, 0, 1))
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                contrib = (g @ taps[i, j]).reshape(n, ho, wo, self.in_channels)
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += contrib
        if p:
            dxp = dxp[:, p:-p, p:-p, :]
        return dxp, grads


class DenseLayer(Layer):
    """Affine map. Inputs with more than two axes are flattened first."""

    def __init__(self, in_dim, spec: Dense, rng=None, dtype=np.float32):
        self.spec = spec
        self.in_dim = in_dim
        shape = (in_dim, spec.out_dim)
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = _kaiming_uniform(rng, shape, in_dim, dtype)
        self.W = Param("W", w)
        self.b = Param("b", np.zeros(spec.out_dim, dtype=dtype))
        self.params = (self.W, self.b)

    def output_shape(self, in_shape):
        return (self.spec.out_dim,)

    def forward(self, x):
        in_shape = x.shape
        x2 = x.reshape(in_shape[0], -1)
        if x2.shape[1] != self.in_dim:
            raise ValueError(f"dense expects {self.in_dim} inputs, got {x2.shape[1]}")
        return x2 @ self.W.value + self.b.value, (x2, in_shape)

    def backward(self, cache, grad, need_input_grad=True):
        x2, in_shape = cache
        grads = {self.W: x2.T @ grad, self.b: grad.sum(axis=0)}
        if not need_input_grad:
            return None, grads
        return (grad @ self.W.value.T).reshape(in_shape), grads


class ReLULayer(Layer):
    # ReLU'(0) = 0
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, grad, need_input_grad=True):
        return grad * cache, {}


class SoftplusLayer(Layer):
    def forward(self, x):
        y = np.logaddexp(0, x).astype(x.dtype, copy=False)
        return y, x

    def backward(self, cache, grad, need_input_grad=True):
        sig = 0.5 * (1.0 + np.tanh(0.5 * cache))
        return grad * sig, {}


class MaxPoolLayer(Layer):
    """Non-overlapping size x size max pooling; ties route to the first max."""

    def __init__(self, spec: MaxPool):
        self.spec = spec

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return (h // self.spec.size, w // self.spec.size, c)

    def forward(self, x):
        q = self.spec.size
        n, h, w, c = x.shape
        ho, wo = h // q, w // q
        blocks = x[:, :ho * q, :wo * q, :].reshape(n, ho, q, wo, q, c)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, q * q)
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, cache, grad, need_input_grad=True):
        idx, in_shape = cache
        q = self.spec.size
        n, h, w, c = in_shape
        ho, wo = h // q, w // q
        blocks = np.zeros((n, ho, wo, c, q * q), dtype=grad.dtype)
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(n, ho, wo, c, q, q).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(in_shape, dtype=grad.dtype)
        dx[:, :ho * q, :wo * q, :] = blocks.reshape(n, ho * q, wo * q, c)
        return dx, {}


def build_layer(spec: LayerSpec, in_shape, rng=None, dtype=np.float32) -> Layer:
    if isinstance(spec, Conv2D):
        if len(in_shape) != 3:
            raise ValueError(f"Conv2D needs an (H, W, C) input, got {in_shape}")
        return ConvLayer(in_shape[2], spec, rng, dtype)
    if isinstance(spec, Dense):
        return DenseLayer(int(np.prod(in_shape)), spec, rng, dtype)
    if isinstance(spec, ReLU):
        return ReLULayer()
    if isinstance(spec, Softplus):
        return SoftplusLayer()
    if isinstance(spec, MaxPool):
        if len(in_shape) != 3:
            raise ValueError(f"MaxPool needs an (H, W, C) input, got {in_shape}")
        return MaxPoolLayer(spec)
    raise TypeError(f"unknown layer spec {spec!r}")
