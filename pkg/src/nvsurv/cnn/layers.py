"""Layer kernels over batched NHWC arrays.

Every layer caches what it needs in ``forward`` and returns the input
gradient from ``backward``, accumulating parameter gradients into
``Param.grad``. Convolutions are "valid" (no padding) with stride 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(eq=False)
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray | None = None

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def _relu_backward(dout, out):
    return dout * (out > 0)


class Layer:
    params: list[Param] = []
    # the first layer of a network has no use for its input gradient
    needs_input_grad: bool = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError


def _valid(in_shape, kh, kw, cin, who):
    h, w, c = in_shape
    if c != cin:
        raise ValueError(f"{who}: expected {cin} input channels, got {c}")
    if h < kh or w < kw:
        raise ValueError(f"{who}: {kh}x{kw} kernel does not fit a {h}x{w} input")
    return h - kh + 1, w - kw + 1


def conv2d_forward(x, kernel, bias, activation="none"):
    """Cross-correlate ``x`` (N,H,W,Cin) with ``kernel`` (kh,kw,Cin,F). Returns (out, cols)."""
    kh, kw, cin, f = kernel.shape
    n, h, w, c = x.shape
    ho, wo = _valid((h, w, c), kh, kw, cin, "conv2d")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N,Ho,Wo,C,kh,kw
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    out = (cols @ kernel.reshape(-1, f) + bias).reshape(n, ho, wo, f)
    if activation == "relu":
        out = np.maximum(out, 0)
    return out, cols


def depthwise_forward(x, depthwise):
    kh, kw, c = depthwise.shape
    n, h, w, _ = x.shape
    ho, wo = _valid(x.shape[1:], kh, kw, c, "depthwise")
    out = np.zeros((n, ho, wo, c), np.result_type(x, depthwise))
    for i in range(kh):
        for j in range(kw):
            out += x[:, i:i + ho, j:j + wo, :] * depthwise[i, j]
    return out


def sepconv_forward(x, depthwise, pointwise, bias, activation="none"):
    """Depthwise spatial filter per channel, then a 1x1 projection to F channels."""
    d = depthwise_forward(x, depthwise)
    out = d @ pointwise.reshape(pointwise.shape[-2], pointwise.shape[-1]) + bias
    if activation == "relu":
        out = np.maximum(out, 0)
    return out, d


class Conv2D(Layer):
    def __init__(self, kernel: np.ndarray, bias: np.ndarray, activation: str = "relu"):
        self.kernel = Param("kernel", kernel)
        self.bias = Param("bias", bias)
        self.params = [self.kernel, self.bias]
        self.activation = activation

    def output_shape(self, in_shape):
        kh, kw, cin, f = self.kernel.value.shape
        return (*_valid(in_shape, kh, kw, cin, "conv2d"), f)

    def forward(self, x):
        out, cols = conv2d_forward(x, self.kernel.value, self.bias.value, self.activation)
        self._cache = (x.shape, cols, out)
        return out

    def backward(self, dout):
        x_shape, cols, out = self._cache
        if self.activation == "relu":
            dout = _relu_backward(dout, out)
        kh, kw, cin, f = self.kernel.value.shape
        n, ho, wo, _ = dout.shape
        d2 = dout.reshape(-1, f)
        self.kernel.grad += (cols.T @ d2).reshape(self.kernel.value.shape)
        self.bias.grad += d2.sum(axis=0)
        if not self.needs_input_grad:
            return None
        dx = np.zeros(x_shape, dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + ho, j:j + wo, :] += dout @ self.kernel.value[i, j].T
        return dx


class SepConv2D(Layer):
    def __init__(self, depthwise: np.ndarray, pointwise: np.ndarray, bias: np.ndarray,
                 activation: str = "relu"):
        self.depthwise = Param("depthwise", depthwise)
        self.pointwise = Param("pointwise", pointwise)
        self.bias = Param("bias", bias)
        self.params = [self.depthwise, self.pointwise, self.bias]
        self.activation = activation

    def output_shape(self, in_shape):
        kh, kw, c = self.depthwise.value.shape
        return (*_valid(in_shape, kh, kw, c, "sepconv"), self.pointwise.value.shape[-1])

    def forward(self, x):
        out, d = sepconv_forward(x, self.depthwise.value, self.pointwise.value, self.bias.value,
                                 self.activation)
        self._cache = (x, d, out)
        return out

    def backward(self, dout):
        x, d, out = self._cache
        if self.activation == "relu":
            dout = _relu_backward(dout, out)
        kh, kw, c = self.depthwise.value.shape
        pw = self.pointwise.value.reshape(c, -1)
        f = pw.shape[1]
        n, ho, wo, _ = dout.shape
        self.pointwise.grad += (d.reshape(-1, c).T @ dout.reshape(-1, f)).reshape(
            self.pointwise.value.shape)
        self.bias.grad += dout.reshape(-1, f).sum(axis=0)
        dd = dout @ pw.T
        dx = np.zeros(x.shape, dd.dtype) if self.needs_input_grad else None
        dw = self.depthwise.grad
        dd2 = dd.reshape(-1, c)
        for i in range(kh):
            for j in range(kw):
                xs = x[:, i:i + ho, j:j + wo, :]
                dw[i, j] += np.einsum("nc,nc->c", xs.reshape(-1, c), dd2)
                if dx is not None:
                    dx[:, i:i + ho, j:j + wo, :] += dd * self.depthwise.value[i, j]
        return dx


class AvgPool2D(Layer):
    """2x2 average pooling with stride 2; a trailing odd row/column is dropped."""

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ValueError(f"avgpool: input {h}x{w} too small")
        return h // 2, w // 2, c

    def forward(self, x):
        n, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        self._shape = x.shape
        return x[:, :2 * ho, :2 * wo].reshape(n, ho, 2, wo, 2, c).mean(axis=(2, 4))

    def backward(self, dout):
        n, h, w, c = self._shape
        ho, wo = dout.shape[1:3]
        dx = np.zeros(self._shape, dout.dtype)
        g = np.repeat(np.repeat(dout * 0.25, 2, axis=1), 2, axis=2)
        dx[:, :2 * ho, :2 * wo] = g
        return dx


class GlobalAvgPool(Layer):
    def output_shape(self, in_shape):
        return (in_shape[2],)

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._shape
        return np.broadcast_to(dout[:, None, None, :] / (h * w), self._shape).copy()


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: str = "none"):
        self.weight = Param("kernel", weight)
        self.bias = Param("bias", bias)
        self.params = [self.weight, self.bias]
        self.activation = activation

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.weight.value.shape[0]:
            raise ValueError(f"dense: expected ({self.weight.value.shape[0]},) input, got {in_shape}")
        return (self.weight.value.shape[1],)

    def forward(self, x):
        out = x @ self.weight.value + self.bias.value
        if self.activation == "relu":
            out = np.maximum(out, 0)
        self._cache = (x, out)
        return out

    def backward(self, dout):
        x, out = self._cache
        if self.activation == "relu":
            dout = _relu_backward(dout, out)
        self.weight.grad += x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.value.T


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        self._out = softmax(x)
        return self._out

    def backward(self, dout):
        p = self._out
        return p * (dout - (dout * p).sum(axis=-1, keepdims=True))
