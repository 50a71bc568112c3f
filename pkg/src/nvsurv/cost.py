"""FLOPs and memory footprint of layer-list networks.

Conventions:

* one multiply-accumulate is two FLOPs; bias adds are counted; ReLU is free;
  a 2x2 average costs three adds and one scaling multiply; softmax costs a
  nominal five operations per class.
* memory is the peak working set over layers, where a layer's working set
  is its own weights plus the activation buffers it reads and writes.
  Flatten and softmax work in place. In tiled mode a ``tile`` x ``tile``
  input window is pushed through the convolution/pooling trunk; the first
  flatten or fully connected layer needs the whole feature map, so the last
  trunk layer writes into a full-size buffer.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .cnn.network import (
    AVGPOOL,
    CONV2D,
    FC,
    FLATTEN,
    GLOBALAVGPOOL,
    SEPCONV,
    SOFTMAX,
    ARCHITECTURES,
    Network,
    build_architecture,
    layer_shapes,
    param_shapes,
)


def _specs_shapes(net):
    if isinstance(net, Network):
        return net.specs, net.shapes
    specs, input_shape = net
    return list(specs), layer_shapes(specs, input_shape)


def layer_flops(spec, in_shape, out_shape) -> int:
    k = spec.kind
    if k == CONV2D:
        kh, kw = spec.kernel
        ho, wo, f = out_shape
        return 2 * kh * kw * in_shape[2] * f * ho * wo + ho * wo * f
    if k == SEPCONV:
        kh, kw = spec.kernel
        ho, wo, f = out_shape
        c = in_shape[2]
        return 2 * kh * kw * c * ho * wo + 2 * c * f * ho * wo + ho * wo * f
    if k == FC:
        return 2 * in_shape[0] * out_shape[0] + out_shape[0]
    if k == AVGPOOL:
        ho, wo, c = out_shape
        return ho * wo * c * 4
    if k == GLOBALAVGPOOL:
        return int(np.prod(in_shape))
    if k == SOFTMAX:
        return 5 * in_shape[0]
    return 0


def flops(net) -> int:
    """Analytic FLOP count; ``net`` is a Network or ``(specs, input_shape)``."""
    specs, shapes = _specs_shapes(net)
    return sum(layer_flops(s, shapes[i], shapes[i + 1]) for i, s in enumerate(specs))


class OpCounter:
    """Element-wise arithmetic that tallies one operation per output element."""

    def __init__(self):
        self.count = 0

    def _tally(self, out):
        self.count += int(np.size(out))
        return out

    def mul(self, a, b):
        return self._tally(np.multiply(a, b))

    def add(self, a, b):
        return self._tally(np.add(a, b))

    def sub(self, a, b):
        return self._tally(np.subtract(a, b))

    def div(self, a, b):
        return self._tally(np.divide(a, b))

    def exp(self, a):
        return self._tally(np.exp(a))

    def max(self, a, b):
        return self._tally(np.maximum(a, b))


def _counted_layer(ops: OpCounter, spec, layer, x):
    k = spec.kind
    if k == CONV2D:
        w, b = layer.kernel.value, layer.bias.value
        kh, kw, cin, f = w.shape
        ho, wo = x.shape[0] - kh + 1, x.shape[1] - kw + 1
        out = np.zeros((ho, wo, f))
        for i in range(kh):
            for j in range(kw):
                for c in range(cin):
                    out = ops.add(out, ops.mul(x[i:i + ho, j:j + wo, c:c + 1], w[i, j, c]))
        out = ops.add(out, b)
    elif k == SEPCONV:
        dw, pw, b = layer.depthwise.value, layer.pointwise.value[0, 0], layer.bias.value
        kh, kw, cin = dw.shape
        ho, wo = x.shape[0] - kh + 1, x.shape[1] - kw + 1
        d = np.zeros((ho, wo, cin))
        for i in range(kh):
            for j in range(kw):
                d = ops.add(d, ops.mul(x[i:i + ho, j:j + wo, :], dw[i, j]))
        out = np.zeros((ho, wo, pw.shape[1]))
        for c in range(cin):
            out = ops.add(out, ops.mul(d[:, :, c:c + 1], pw[c]))
        out = ops.add(out, b)
    elif k == AVGPOOL:
        ho, wo = x.shape[0] // 2, x.shape[1] // 2
        q = x[:2 * ho, :2 * wo]
        acc = q[0::2, 0::2]
        for di, dj in ((0, 1), (1, 0), (1, 1)):
            acc = ops.add(acc, q[di::2, dj::2])
        return ops.mul(acc, 0.25)
    elif k == GLOBALAVGPOOL:
        h, w, _ = x.shape
        acc = x[0, 0]
        for idx in range(1, h * w):
            acc = ops.add(acc, x[idx // w, idx % w])
        return ops.mul(acc, 1.0 / (h * w))
    elif k == FLATTEN:
        return x.reshape(-1)
    elif k == FC:
        w, b = layer.weight.value, layer.bias.value
        acc = np.zeros(w.shape[1])
        for i in range(w.shape[0]):
            acc = ops.add(acc, ops.mul(x[i], w[i]))
        out = ops.add(acc, b)
    elif k == SOFTMAX:
        m = np.array(-np.inf)
        for v in x:
            m = ops.max(m, v)
        e = ops.exp(ops.sub(x, m))
        s = np.array(0.0)
        for v in e:
            s = ops.add(s, v)
        return ops.div(e, s)
    else:
        raise ValueError(f"unknown layer kind {k}")
    if spec.activation == "relu":
        out = np.maximum(out, 0)
    return out


def flops_instrumented(net: Network, x: np.ndarray | None = None) -> int:
    """Count the arithmetic actually performed by a naive forward pass of one sample."""
    ops = OpCounter()
    if not net.specs:
        return 0
    if x is None:
        x = np.random.default_rng(0).random(net.input_shape)
    x = np.asarray(x, np.float64)
    for spec, layer in zip(net.specs, net.layers):
        x = _counted_layer(ops, spec, layer, x)
    return ops.count


def counted_forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Output of the instrumented pass, for cross-checking against ``Network.forward``."""
    ops = OpCounter()
    x = np.asarray(x, np.float64)
    for spec, layer in zip(net.specs, net.layers):
        x = _counted_layer(ops, spec, layer, x)
    return x


@dataclass(frozen=True)
class CostReport:
    label: str
    flops: int
    param_bytes: int
    act_bytes_layerwise: int
    act_bytes_tiled: int
    total_layerwise: int
    total_tiled: int
    tile: int
    mode: str = "tiled"

    @property
    def total(self) -> int:
        return self.total_tiled if self.mode == "tiled" else self.total_layerwise


def _n_params(spec, in_shape) -> int:
    return sum(int(np.prod(sh)) for _, sh in param_shapes(spec, in_shape))


def _elems(shape) -> int:
    return int(np.prod(shape))


def _layerwise(specs, shapes):
    acts, weights = [], []
    for i, s in enumerate(specs):
        a_in, a_out = _elems(shapes[i]), _elems(shapes[i + 1])
        acts.append(a_in if s.kind in (FLATTEN, SOFTMAX) else a_in + a_out)
        weights.append(_n_params(s, shapes[i]))
    return acts, weights


def _tiled(specs, shapes, tile, strict=True):
    acts, weights = [], []
    side = tile
    n_trunk = next((i for i, s in enumerate(specs) if s.kind in (FLATTEN, FC, SOFTMAX)), len(specs))
    for i, s in enumerate(specs):
        weights.append(_n_params(s, shapes[i]))
        if i >= n_trunk:
            a_in, a_out = _elems(shapes[i]), _elems(shapes[i + 1])
            acts.append(a_in if s.kind in (FLATTEN, SOFTMAX) else a_in + a_out)
            continue
        h_in, w_in, c_in = shapes[i]
        t_in = min(side, h_in)
        window = s.kernel[0] if s.kind in (CONV2D, SEPCONV) else 2 if s.kind == AVGPOOL else 1
        if t_in < window:
            if strict:
                raise ValueError(f"tile {tile} shrinks to {t_in} before layer {i} ({s.kind}, "
                                 f"window {window})")
            # the layer reads its smallest legal window instead
            t_in = min(window, h_in)
        if s.kind in (CONV2D, SEPCONV):
            side = t_in - (window - 1)
        elif s.kind == AVGPOOL:
            side = t_in // 2
        in_buf = t_in * min(t_in, w_in) * c_in
        if s.kind == GLOBALAVGPOOL:
            out_buf = shapes[i + 1][0]
        elif i == n_trunk - 1 and n_trunk < len(specs):
            out_buf = _elems(shapes[i + 1])
        else:
            out_buf = side * side * shapes[i + 1][2]
        acts.append(in_buf + out_buf)
    return acts, weights


def memory(net, mode: str = "tiled", tile: int = 21, act_byte_width: int = 1,
           weight_byte_width: int = 1, label: str | None = None, strict: bool = True) -> CostReport:
    """Both execution modes of the memory model; ``mode`` picks ``CostReport.total``.

    With ``strict`` a tile that shrinks below some layer's window is an error;
    otherwise that layer is charged for its minimum window.
    """
    if mode not in ("tiled", "layerwise"):
        raise ValueError(f"mode must be 'tiled' or 'layerwise', got {mode!r}")
    specs, shapes = _specs_shapes(net)
    if len(shapes[0]) == 3 and tile > min(shapes[0][:2]):
        raise ValueError(f"tile {tile} exceeds input {shapes[0][:2]}")
    if tile < 1:
        raise ValueError("tile must be >= 1")
    la, lw = _layerwise(specs, shapes)
    ta, tw = _tiled(specs, shapes, tile, strict)
    param_bytes = sum(lw) * weight_byte_width

    def peak(acts, weights):
        return max((a * act_byte_width + w * weight_byte_width for a, w in zip(acts, weights)),
                   default=0)

    return CostReport(
        label=label or getattr(net, "label", ""),
        flops=flops(net),
        param_bytes=param_bytes,
        act_bytes_layerwise=max(la, default=0) * act_byte_width,
        act_bytes_tiled=max(ta, default=0) * act_byte_width,
        total_layerwise=peak(la, lw),
        total_tiled=peak(ta, tw),
        tile=tile,
        mode=mode,
    )


COST_CSV_HEADER = ("label", "flops", "param_bytes", "act_layerwise", "act_tiled", "total_tiled")


def cost_table(labels=tuple(ARCHITECTURES), channels: int = 2, tile: int = 21,
               act_byte_width: int = 1, weight_byte_width: int = 1) -> list[CostReport]:
    return [memory(build_architecture(lab, channels), "tiled", tile, act_byte_width,
                   weight_byte_width, strict=False) for lab in labels]


def cost_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COST_CSV_HEADER)
    for r in reports:
        w.writerow((r.label, r.flops, r.param_bytes, r.act_bytes_layerwise, r.act_bytes_tiled,
                    r.total_tiled))
    return buf.getvalue()
