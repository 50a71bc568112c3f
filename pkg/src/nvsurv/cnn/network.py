"""Layer-list network descriptions, the seven named architectures, and model files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import layers as L

N_CLASSES = 4
INPUT_SIDE = 42

CONV2D = "CONV2D"
SEPCONV = "SEPCONV"
AVGPOOL = "AVGPOOL"
GLOBALAVGPOOL = "GLOBALAVGPOOL"
FLATTEN = "FLATTEN"
FC = "FC"
SOFTMAX = "SOFTMAX"
KINDS = (CONV2D, SEPCONV, AVGPOOL, GLOBALAVGPOOL, FLATTEN, FC, SOFTMAX)

ARCHITECTURES = {
    "BL": "Base LeNet5",
    "BN": "Base SepNet",
    "MA": "Mixed Architecture",
    "TN": "TinyNet",
    "LG": "LeNet with Global Pooling",
    "LK": "LeNet Large Kernel",
    "SN": "Small LeNet",
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: tuple[int, int] = (1, 1)
    filters: int = 0
    units: int = 0
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in (CONV2D, SEPCONV):
            kh, kw = self.kernel
            if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
                raise ValueError(f"{self.kind} kernel must be odd and >= 1, got {self.kernel}")
            if self.filters < 1:
                raise ValueError(f"{self.kind} needs >= 1 filter")
        if self.kind == FC and self.units < 1:
            raise ValueError("FC needs >= 1 unit")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


def conv(k, f):
    return LayerSpec(CONV2D, (k, k), filters=f, activation="relu")


def sep(k, f):
    return LayerSpec(SEPCONV, (k, k), filters=f, activation="relu")


def fc(units, activation="relu"):
    return LayerSpec(FC, units=units, activation=activation)


POOL = LayerSpec(AVGPOOL, (2, 2))
GAP = LayerSpec(GLOBALAVGPOOL)
FLAT = LayerSpec(FLATTEN)
SMAX = LayerSpec(SOFTMAX)
HEAD = [fc(120), fc(84), fc(N_CLASSES, "none"), SMAX]
SOFTMAX_HEAD = [fc(N_CLASSES, "none"), SMAX]


def architecture_specs(label: str) -> list[LayerSpec]:
    if label == "BL":
        return [conv(5, 6), POOL, conv(5, 16), POOL, FLAT, *HEAD]
    if label == "BN":
        return [sep(5, 6), POOL, sep(5, 16), POOL, FLAT, *HEAD]
    if label == "MA":
        return [conv(5, 6), POOL, sep(5, 16), POOL, FLAT, *HEAD]
    if label == "TN":
        return [conv(5, 6), POOL, sep(5, 5), POOL, FLAT, *SOFTMAX_HEAD]
    if label == "LG":
        return [conv(5, 6), POOL, conv(5, 16), POOL, GAP, *HEAD]
    if label == "LK":
        return [conv(7, 6), POOL, conv(7, 16), POOL, FLAT, *HEAD]
    if label == "SN":
        return [conv(5, 6), POOL, conv(5, 16), POOL, FLAT, *SOFTMAX_HEAD]
    raise ValueError(f"unknown architecture {label!r}; valid labels: {', '.join(ARCHITECTURES)}")


def layer_shapes(specs, input_shape) -> list[tuple]:
    """Shape entering each layer followed by the final output shape."""
    shapes = [tuple(input_shape)]
    for spec in specs:
        shapes.append(_out_shape(spec, shapes[-1]))
    return shapes


def _out_shape(spec: LayerSpec, s: tuple) -> tuple:
    k = spec.kind
    if k in (CONV2D, SEPCONV):
        if len(s) != 3:
            raise ValueError(f"{k} needs an HxWxC input, got {s}")
        kh, kw = spec.kernel
        h, w = s[0] - kh + 1, s[1] - kw + 1
        if h < 1 or w < 1:
            raise ValueError(f"{k} {kh}x{kw} does not fit input {s}")
        return h, w, spec.filters
    if k == AVGPOOL:
        if len(s) != 3 or s[0] < 2 or s[1] < 2:
            raise ValueError(f"AVGPOOL cannot reduce {s}")
        return s[0] // 2, s[1] // 2, s[2]
    if k == GLOBALAVGPOOL:
        if len(s) != 3:
            raise ValueError(f"GLOBALAVGPOOL needs an HxWxC input, got {s}")
        return (s[2],)
    if k == FLATTEN:
        return (int(np.prod(s)),)
    if k == FC:
        if len(s) != 1:
            raise ValueError(f"FC needs a flat input, got {s}")
        return (spec.units,)
    return s


def param_shapes(spec: LayerSpec, in_shape: tuple) -> list[tuple[str, tuple]]:
    """Parameter tensors of one layer, in file order."""
    if spec.kind == CONV2D:
        kh, kw = spec.kernel
        return [("kernel", (kh, kw, in_shape[2], spec.filters)), ("bias", (spec.filters,))]
    if spec.kind == SEPCONV:
        kh, kw = spec.kernel
        c = in_shape[2]
        return [("depthwise", (kh, kw, c)), ("pointwise", (1, 1, c, spec.filters)),
                ("bias", (spec.filters,))]
    if spec.kind == FC:
        return [("kernel", (in_shape[0], spec.units)), ("bias", (spec.units,))]
    return []


def _fans(name, shape):
    if name == "depthwise":
        kh, kw, c = shape
        return kh * kw * c, kh * kw
    if len(shape) == 2:
        return shape
    receptive = int(np.prod(shape[:-2]))
    return shape[-2] * receptive, shape[-1] * receptive


class Network:
    """Ordered layers plus their weights; consumes (N, 42, 42, C) batches."""

    def __init__(self, label: str, specs, input_shape, weights=None, dtype=np.float64):
        self.label = label
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.shapes = layer_shapes(self.specs, self.input_shape)
        if weights is None:
            weights = [
                [np.zeros(shape, self.dtype) for _, shape in param_shapes(s, self.shapes[i])]
                for i, s in enumerate(self.specs)
            ]
        self.layers = [self._make_layer(s, self.shapes[i], w) for i, (s, w) in
                       enumerate(zip(self.specs, weights))]
        if self.layers:
            self.layers[0].needs_input_grad = False

    def _make_layer(self, spec, in_shape, weights):
        expected = [shape for _, shape in param_shapes(spec, in_shape)]
        weights = [np.asarray(w, self.dtype) for w in weights]
        if [w.shape for w in weights] != expected:
            raise ValueError(f"{spec.kind}: weight shapes {[w.shape for w in weights]} != {expected}")
        act = spec.activation
        if spec.kind == CONV2D:
            return L.Conv2D(*weights, activation=act)
        if spec.kind == SEPCONV:
            return L.SepConv2D(*weights, activation=act)
        if spec.kind == FC:
            return L.Dense(*weights, activation=act)
        return {AVGPOOL: L.AvgPool2D, GLOBALAVGPOOL: L.GlobalAvgPool, FLATTEN: L.Flatten,
                SOFTMAX: L.Softmax}[spec.kind]()

    @property
    def params(self) -> list[L.Param]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def init_weights(self, seed: int = 0) -> Network:
        """Glorot-uniform kernels, zero biases."""
        rng = np.random.default_rng(seed)
        for p in self.params:
            if p.name == "bias":
                p.value[...] = 0
            else:
                fan_in, fan_out = _fans(p.name, p.value.shape)
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                p.value[...] = rng.uniform(-limit, limit, p.value.shape)
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"{self.label}: expected input (N, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray, layers=None, input_grad: bool = False):
        """Backpropagate ``dout``; returns the input gradient when ``input_grad``."""
        if self.layers:
            self.layers[0].needs_input_grad = input_grad
        for layer in reversed(self.layers if layers is None else layers):
            dout = layer.backward(dout)
            if dout is None:
                break
        return dout

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean cross-entropy of a batch; fills parameter grads, returns (loss, probs).

        With a trailing softmax the gradient enters the logits directly as
        ``(p - onehot) / N``.
        """
        self.zero_grad()
        probs = self.forward(x)
        n = len(y)
        p_true = probs[np.arange(n), y]
        loss = float(-np.log(np.maximum(p_true, np.finfo(probs.dtype).tiny)).mean())
        if self.specs[-1].kind == SOFTMAX:
            g = probs.copy()
            g[np.arange(n), y] -= 1
            self.backward(g / n, self.layers[:-1])
        else:
            g = np.zeros_like(probs)
            g[np.arange(n), y] = -1.0 / (n * p_true)
            self.backward(g)
        return loss, probs

    def get_weights(self) -> list[list[np.ndarray]]:
        return [[p.value.copy() for p in layer.params] for layer in self.layers]

    def set_weights(self, weights):
        for layer, ws in zip(self.layers, weights):
            for p, w in zip(layer.params, ws):
                p.value[...] = w

    def astype(self, dtype) -> Network:
        return Network(self.label, self.specs, self.input_shape, self.get_weights(), dtype)

    def copy(self) -> Network:
        return Network(self.label, self.specs, self.input_shape, self.get_weights(), self.dtype)


def build_architecture(label: str, input_channels: int, dtype=np.float64) -> Network:
    if input_channels not in (1, 2):
        raise ValueError(f"input_channels must be 1 or 2, got {input_channels}")
    return Network(label, architecture_specs(label), (INPUT_SIDE, INPUT_SIDE, input_channels),
                   dtype=dtype)


def predict(net: Network, patches: np.ndarray, divisor: float = 15.0) -> np.ndarray:
    """Class probabilities for one (42,42,C) patch or a batch of them."""
    x = np.asarray(patches)
    single = x.ndim == 3
    if single:
        x = x[None]
    probs = net.forward(x.astype(net.dtype) / divisor)
    return probs[0] if single else probs


def predict_batched(net: Network, patches: np.ndarray, divisor: float = 15.0,
                    batch_size: int = 512) -> np.ndarray:
    out = [predict(net, patches[i:i + batch_size], divisor) for i in range(0, len(patches), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


MODEL_FORMAT = "nvsurv-model/1"


def save_model(net: Network, path, divisor: float = 15.0) -> tuple[Path, Path]:
    """Write ``<path>.json`` (descriptor) and ``<path>.bin`` (little-endian float32 weights)."""
    path = Path(path)
    json_path, bin_path = path.with_suffix(".json"), path.with_suffix(".bin")
    desc = {
        "format": MODEL_FORMAT,
        "label": net.label,
        "input_shape": list(net.input_shape),
        "normalization_divisor": divisor,
        "layers": [
            {**asdict(s), "kernel": list(s.kernel), "input_shape": list(net.shapes[i]),
             "output_shape": list(net.shapes[i + 1]),
             "params": [{"name": n, "shape": list(sh)} for n, sh in param_shapes(s, net.shapes[i])]}
            for i, s in enumerate(net.specs)
        ],
        "weights_file": bin_path.name,
        "weights_dtype": "<f4",
    }
    json_path.write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")
    blob = b"".join(p.value.astype("<f4").tobytes() for p in net.params)
    bin_path.write_bytes(blob)
    return json_path, bin_path


def load_model(path, dtype=np.float64) -> tuple[Network, float]:
    path = Path(path)
    desc = json.loads(path.with_suffix(".json").read_text())
    if desc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {desc.get('format')!r}")
    specs = [LayerSpec(d["kind"], tuple(d["kernel"]), d["filters"], d["units"], d["activation"])
             for d in desc["layers"]]
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), "<f4")
    weights, offset = [], 0
    for d in desc["layers"]:
        ws = []
        for p in d["params"]:
            n = int(np.prod(p["shape"]))
            ws.append(flat[offset:offset + n].reshape(p["shape"]))
            offset += n
        weights.append(ws)
    if offset != len(flat):
        raise ValueError(f"weight file holds {len(flat)} values, descriptor needs {offset}")
    net = Network(desc["label"], specs, tuple(desc["input_shape"]), weights, dtype)
    return net, float(desc["normalization_divisor"])
