"""Mini-batch Adam training with best-validation checkpointing."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from ..dataset import DatasetSplit, stack
from ..metrics import per_sample_balanced
from .network import Network, predict_batched

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    divisor: float = 15.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.divisor <= 0:
            raise ValueError("divisor must be > 0")


class Adam:
    """Adam with bias-corrected moment estimates, updating params in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train(net: Network, split: DatasetSplit, cfg: TrainConfig = TrainConfig()):
    """Fit ``net`` on ``split.train``; return the best-on-validation copy and the history.

    History rows are ``{"epoch", "train_loss", "val_balanced_acc"}``. Without a
    validation set the training accuracy drives checkpoint selection.
    """
    if not split.train:
        raise ValueError("empty training set")
    net = net.astype(cfg.dtype)
    x_raw, y, _ = stack(split.train)
    if x_raw.shape[1:] != net.input_shape:
        raise ValueError(f"samples are {x_raw.shape[1:]}, network expects {net.input_shape}")
    x = x_raw.astype(net.dtype) / np.asarray(cfg.divisor, net.dtype)
    xv, yv, _ = stack(split.val) if split.val else (x_raw, y, None)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    best_acc, best_weights, history = -1.0, net.get_weights(), []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, _ = net.loss_and_grad(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch {start // cfg.batch_size}")
            opt.step()
            total += loss * len(idx)
        pred = predict_batched(net, xv, cfg.divisor)
        acc, _ = per_sample_balanced(yv, pred.argmax(axis=1))
        history.append({"epoch": epoch, "train_loss": total / len(y), "val_balanced_acc": acc})
        log.info("epoch %d loss %.4f val %.2f", epoch, total / len(y), acc)
        if acc > best_acc:
            best_acc, best_weights = acc, net.get_weights()
    net.set_weights(best_weights)
    return net, history


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_balanced_acc"])
    for h in history:
        w.writerow([h["epoch"], repr(float(h["train_loss"])), repr(float(h["val_balanced_acc"]))])
    return buf.getvalue()
