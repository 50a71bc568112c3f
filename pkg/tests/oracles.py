"""Brute-force reference implementations used as test oracles."""

from collections import deque

import numpy as np

OFFSETS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx),
}


def flood_fill_labels(img, connectivity=8):
    """Breadth-first labeling in raster order of first encounter."""
    img = np.asarray(img).astype(bool)
    h, w = img.shape
    labels = np.zeros((h, w), np.int64)
    n = 0
    for y in range(h):
        for x in range(w):
            if not img[y, x] or labels[y, x]:
                continue
            n += 1
            labels[y, x] = n
            queue = deque([(y, x)])
            while queue:
                cy, cx = queue.popleft()
                for dy, dx in OFFSETS[connectivity]:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and img[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = n
                        queue.append((ny, nx))
    return labels, n


def same_partition(a, b):
    """True when two label maps induce the same partition of the foreground."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if not np.array_equal(a > 0, b > 0):
        return False
    fg = a > 0
    pairs = set(zip(a[fg].tolist(), b[fg].tolist()))
    return len(pairs) == len(set(a[fg].tolist())) == len(set(b[fg].tolist()))


def downsample_loop(img, pw=6, ph=3):
    h, w = img.shape
    out = np.zeros((h // ph, w // pw), np.uint8)
    for i in range(h // ph):
        for j in range(w // pw):
            v = 0
            for dy in range(ph):
                for dx in range(pw):
                    v |= int(img[i * ph + dy, j * pw + dx])
            out[i, j] = v
    return out


def conv2d_loop(x, k, b):
    """Valid cross-correlation of one (H, W, Cin) image, six nested loops."""
    h, w, cin = x.shape
    kh, kw, _, f = k.shape
    out = np.zeros((h - kh + 1, w - kw + 1, f))
    for i in range(h - kh + 1):
        for j in range(w - kw + 1):
            for o in range(f):
                s = b[o]
                for di in range(kh):
                    for dj in range(kw):
                        for c in range(cin):
                            s += x[i + di, j + dj, c] * k[di, dj, c, o]
                out[i, j, o] = s
    return out


def random_stack(rng):
    """A random valid layer list and its input shape, small enough for the
    instrumented forward pass."""
    from nvsurv.cnn.network import LayerSpec

    input_shape = (int(rng.integers(6, 20)), int(rng.integers(6, 20)), int(rng.integers(1, 4)))
    h, w = input_shape[:2]
    specs = []
    for _ in range(int(rng.integers(0, 4))):
        kind = str(rng.choice(["CONV2D", "SEPCONV", "AVGPOOL"]))
        if kind == "AVGPOOL":
            if min(h, w) < 2:
                continue
            specs.append(LayerSpec("AVGPOOL", (2, 2)))
            h, w = h // 2, w // 2
        else:
            k = int(rng.choice([1, 3, 5]))
            if min(h, w) < k:
                continue
            specs.append(LayerSpec(kind, (k, k), filters=int(rng.integers(1, 6)),
                                   activation=str(rng.choice(["relu", "none"]))))
            h, w = h - k + 1, w - k + 1
    specs.append(LayerSpec(str(rng.choice(["FLATTEN", "GLOBALAVGPOOL"]))))
    for _ in range(int(rng.integers(0, 3))):
        specs.append(LayerSpec("FC", units=int(rng.integers(1, 10)),
                               activation=str(rng.choice(["relu", "none"]))))
    if rng.random() < 0.5:
        specs.append(LayerSpec("SOFTMAX"))
    return specs, input_shape
