"""Central finite-difference gradient checking.

A coordinate whose +-eps perturbation flips any ReLU on/off is skipped: the
loss is not differentiable across that kink, so the central difference there
says nothing about the analytic gradient. Replacement coordinates are drawn
until ``k`` smooth ones have been checked.
"""

import numpy as np

EPS = 1e-5
TOL = 1e-4
# denominators below this are treated as absolute error
FLOOR = 1e-6


def rel_error(analytic, numeric):
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR),
                        initial=0.0))


def relu_masks(layers):
    masks = []
    for layer in layers:
        if getattr(layer, "activation", "none") == "relu":
            out = layer._cache[-1]
            masks.append(out > 0)
    return masks


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def smooth_numeric(f, layers, arr, idx, base_masks, eps=EPS):
    """Central difference at ``arr[idx]``, or None when a ReLU flips within +-eps."""
    old = arr[idx]
    arr[idx] = old + eps
    fp = f()
    ok = _same(relu_masks(layers), base_masks)
    arr[idx] = old - eps
    fm = f()
    ok = ok and _same(relu_masks(layers), base_masks)
    arr[idx] = old
    return (fp - fm) / (2 * eps) if ok else None


def _check_tensor(analytic, arr, f, layers, base_masks, rng, k):
    size = arr.size
    order = rng.permutation(size)
    a, n = [], []
    for flat in order:
        idx = np.unravel_index(int(flat), arr.shape)
        num = smooth_numeric(f, layers, arr, idx, base_masks)
        if num is None:
            continue
        a.append(analytic[idx])
        n.append(num)
        if len(a) == k:
            break
    if len(a) < min(k, size) // 2:
        raise AssertionError(f"only {len(a)} smooth coordinates found")
    return rel_error(a, n)


def check_layer(layer, x, rng, k=40):
    """Max relative error over sampled input and parameter coordinates for
    the scalar loss ``sum(layer(x) * r)``."""
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)
    for p in layer.params:
        p.zero_grad()
    layer.needs_input_grad = True
    dx = layer.backward(r)
    layer.forward(x)
    base = relu_masks([layer])

    def loss():
        return float(np.sum(layer.forward(x) * r))

    worst = {"input": _check_tensor(dx, x, loss, [layer], base, rng, k)}
    for p in layer.params:
        worst[p.name] = _check_tensor(p.grad, p.value, loss, [layer], base, rng, k)
    return worst


def check_network(net, x, y, rng, k=6):
    """Max relative error of cross-entropy gradients (every parameter tensor
    and the input) on sampled coordinates."""
    net.loss_and_grad(x, y)
    grads = [p.grad.copy() for p in net.params]
    net.zero_grad()
    probs = net.forward(x)
    g = probs.copy()
    g[np.arange(len(y)), y] -= 1
    dx = net.backward(g / len(y), net.layers[:-1], input_grad=True)
    net.forward(x)
    base = relu_masks(net.layers)

    def loss():
        probs = net.forward(x)
        return float(-np.log(probs[np.arange(len(y)), y]).mean())

    worst = {"input": _check_tensor(dx, x, loss, net.layers, base, rng, k)}
    for pi, p in enumerate(net.params):
        worst[f"{pi}:{p.name}"] = _check_tensor(grads[pi], p.value, loss, net.layers, base, rng, k)
    return worst
