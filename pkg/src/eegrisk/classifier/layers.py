"""Layer kit for the image classifiers.

Activations use NHWC layout: ``(batch, height, width, channels)``.  Every
layer caches what its backward pass needs during ``forward(..., train=True)``
and writes parameter gradients into ``self.grads`` on ``backward``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NORM_EPS = 1e-5


class Layer:
    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.needs_input_grad = True

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def init_params(self, in_shape, rng, dtype) -> None:
        pass

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError


def conv_output_size(size: int, kernel: int, stride: int, pad_a: int, pad_b: int) -> int:
    return (size + pad_a + pad_b - kernel) // stride + 1


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, filters, kernel, stride=(1, 1), padding=(0, 0, 0, 0)):
        super().__init__()
        self.filters = int(filters)
        self.kernel = tuple(int(k) for k in kernel)
        self.stride = tuple(int(s) for s in stride)
        # (top, bottom, left, right)
        self.padding = tuple(int(p) for p in padding)
        self.in_channels = None

    def output_shape(self, shape):
        h, w, _ = shape
        top, bottom, left, right = self.padding
        return (
            conv_output_size(h, self.kernel[0], self.stride[0], top, bottom),
            conv_output_size(w, self.kernel[1], self.stride[1], left, right),
            self.filters,
        )

    def init_params(self, in_shape, rng, dtype):
        c = in_shape[2]
        self.in_channels = c
        kh, kw = self.kernel
        fan_in = c * kh * kw
        limit = np.sqrt(6.0 / fan_in)
        # weights stored as (kh, kw, c_in, filters) so they reshape directly to
        # the im2col matrix
        self.params["weight"] = rng.uniform(-limit, limit, (kh, kw, c, self.filters)).astype(dtype)
        self.params["bias"] = np.zeros(self.filters, dtype=dtype)

    def _pad(self, x):
        top, bottom, left, right = self.padding
        if not any(self.padding):
            return x
        return np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))

    def forward(self, x, train=False, rng=None):
        kh, kw = self.kernel
        sh, sw = self.stride
        xp = self._pad(x)
        b = x.shape[0]
        ho, wo, _ = self.output_shape(x.shape[1:])
        # (B, Ho, Wo, C, kh, kw) -> (B, Ho, Wo, kh, kw, C)
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * ho * wo, -1)
        wmat = self.params["weight"].reshape(-1, self.filters)
        out = cols @ wmat
        out += self.params["bias"]
        if train:
            self._cache = (cols, xp.shape, x.shape)
        return out.reshape(b, ho, wo, self.filters)

    def backward(self, grad):
        cols, xp_shape, x_shape = self._cache
        self._cache = None
        kh, kw = self.kernel
        sh, sw = self.stride
        b, ho, wo, f = grad.shape
        g = grad.reshape(-1, f)
        self.grads["weight"] = (cols.T @ g).reshape(self.params["weight"].shape)
        self.grads["bias"] = g.sum(axis=0)
        if not self.needs_input_grad:
            return None
        c = xp_shape[3]
        dcols = (g @ self.params["weight"].reshape(-1, f).T).reshape(b, ho, wo, kh, kw, c)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, :] += dcols[:, :, :, i, j, :]
        top, bottom, left, right = self.padding
        return dxp[:, top : xp_shape[1] - bottom, left : xp_shape[2] - right, :]


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, momentum: float = 0.1):
        super().__init__()
        self.momentum = momentum

    def init_params(self, in_shape, rng, dtype):
        c = in_shape[-1]
        self.params["scale"] = np.ones(c, dtype=dtype)
        self.params["shift"] = np.zeros(c, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        c = x.shape[-1]
        flat = x.reshape(-1, c)
        if train:
            n = flat.shape[0]
            mean = flat.sum(axis=0) / n
            centered = flat - mean
            var = (centered * centered).sum(axis=0) / n
            m = self.momentum
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * var).astype(x.dtype)
            inv_std = (1.0 / np.sqrt(var + NORM_EPS)).astype(x.dtype)
            xhat = centered * inv_std
            self._cache = (xhat, inv_std)
        else:
            inv_std = (1.0 / np.sqrt(self.buffers["running_var"] + NORM_EPS)).astype(x.dtype)
            xhat = (flat - self.buffers["running_mean"]) * inv_std
        return (xhat * self.params["scale"] + self.params["shift"]).reshape(x.shape)

    def backward(self, grad):
        xhat, inv_std = self._cache
        self._cache = None
        g = grad.reshape(xhat.shape)
        n = g.shape[0]
        self.grads["scale"] = (g * xhat).sum(axis=0)
        self.grads["shift"] = g.sum(axis=0)
        dxhat = g * self.params["scale"]
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx.reshape(grad.shape)


class InstanceNorm(Layer):
    """Per-sample, per-channel normalization over the spatial axes; no running state."""

    kind = "instancenorm"

    def init_params(self, in_shape, rng, dtype):
        c = in_shape[-1]
        self.params["scale"] = np.ones(c, dtype=dtype)
        self.params["shift"] = np.zeros(c, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        mean = x.mean(axis=(1, 2), keepdims=True)
        var = x.var(axis=(1, 2), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + NORM_EPS)
        xhat = (x - mean) * inv_std
        if train:
            self._cache = (xhat, inv_std)
        return xhat * self.params["scale"] + self.params["shift"]

    def backward(self, grad):
        xhat, inv_std = self._cache
        self._cache = None
        n = grad.shape[1] * grad.shape[2]
        self.grads["scale"] = (grad * xhat).sum(axis=(0, 1, 2))
        self.grads["shift"] = grad.sum(axis=(0, 1, 2))
        dxhat = grad * self.params["scale"]
        return (inv_std / n) * (
            n * dxhat
            - dxhat.sum(axis=(1, 2), keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
        )


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        out = np.maximum(x, 0)
        if train:
            self._mask = x > 0
        return out

    def backward(self, grad):
        mask = self._mask
        self._mask = None
        return grad * mask


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, pool, stride):
        super().__init__()
        self.pool = tuple(int(p) for p in pool)
        self.stride = tuple(int(s) for s in stride)

    def output_shape(self, shape):
        h, w, c = shape
        return (
            conv_output_size(h, self.pool[0], self.stride[0], 0, 0),
            conv_output_size(w, self.pool[1], self.stride[1], 0, 0),
            c,
        )

    def _slices(self, x, ho, wo):
        """View of ``x`` at every pooling-window offset, in row-major window order."""
        ph, pw = self.pool
        sh, sw = self.stride
        return [
            x[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, :]
            for i in range(ph)
            for j in range(pw)
        ]

    def forward(self, x, train=False, rng=None):
        ho, wo, _ = self.output_shape(x.shape[1:])
        views = self._slices(x, ho, wo)
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        if train:
            self._cache = (x, out)
        return out

    def backward(self, grad):
        x, out = self._cache
        self._cache = None
        ho, wo = out.shape[1:3]
        dx = np.zeros(x.shape, dtype=grad.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        # route each gradient to the first maximal element of its window
        for v, dv in zip(self._slices(x, ho, wo), self._slices(dx, ho, wo)):
            hit = (v == out) & ~taken
            taken |= hit
            dv += grad * hit
        return dx


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs a random generator")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad):
        if self.rate == 0.0:
            return grad
        mask = self._mask
        self._mask = None
        return grad * mask


class FullyConnected(Layer):
    kind = "fullyconnected"

    def __init__(self, units: int):
        super().__init__()
        self.units = int(units)

    def output_shape(self, shape):
        return (self.units,)

    def init_params(self, in_shape, rng, dtype):
        fan_in = int(np.prod(in_shape))
        limit = np.sqrt(6.0 / fan_in)
        self.params["weight"] = rng.uniform(-limit, limit, (fan_in, self.units)).astype(dtype)
        self.params["bias"] = np.zeros(self.units, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        flat = x.reshape(x.shape[0], -1)
        if train:
            self._cache = (flat, x.shape)
        return flat @ self.params["weight"] + self.params["bias"]

    def backward(self, grad):
        flat, x_shape = self._cache
        self._cache = None
        self.grads["weight"] = flat.T @ grad
        self.grads["bias"] = grad.sum(axis=0)
        if not self.needs_input_grad:
            return None
        return (grad @ self.params["weight"].T).reshape(x_shape)


class Softmax(Layer):
    """Softmax over the last axis.

    The backward pass here is the full Jacobian-vector product; training uses
    the fused softmax/cross-entropy gradient in the network instead.
    """

    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        out = softmax(x)
        if train:
            self._out = out
        return out

    def backward(self, grad):
        p = self._out
        self._out = None
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
