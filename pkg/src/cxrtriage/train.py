"""Optimizers, the training loop, evaluation metrics, and history export.

A run is fully determined by (seed, archive bytes, config): epoch
shuffles come from one seeded generator, batches keep their final partial
remainder, and validation runs in inference mode so it never touches
parameters or batchnorm running statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import CLASS_NAMES, DatasetArchive, SplitPlan
from .errors import ConfigError, ShapeError

OPTIMIZERS = ("adam", "sgd")
WEIGHTINGS = ("off", "inverse")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 120
    val_fraction: float = 0.2
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    seed: int = 0
    class_weighting: str = "off"

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.class_weighting not in WEIGHTINGS:
            raise ConfigError(
                f"class_weighting must be one of {WEIGHTINGS}, "
                f"got {self.class_weighting!r}")
        return self


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            dt = p.value.dtype.type
            g = p.grad
            m *= dt(self.beta1)
            m += dt(1 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1 - self.beta2) * (g * g)
            mhat = m / dt(1 - self.beta1 ** self.t)
            vhat = v / dt(1 - self.beta2 ** self.t)
            p.value -= dt(self.lr) * mhat / (np.sqrt(vhat) + dt(self.eps))


class SGDMomentum:
    def __init__(self, params, lr=1e-2, momentum=0.9):
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.v):
            dt = p.value.dtype.type
            v *= dt(self.momentum)
            v += p.grad
            p.value -= dt(self.lr) * v


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return SGDMomentum(params, cfg.lr, cfg.momentum)


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def class_weights(labels: np.ndarray, mode: str) -> np.ndarray | None:
    """Per-class weights; inverse-frequency gives n/(k*count)."""
    if mode == "off":
        return None
    counts = np.bincount(np.asarray(labels, dtype=np.int64),
                         minlength=len(CLASS_NAMES))
    if np.any(counts == 0):
        missing = [CLASS_NAMES[i] for i in np.flatnonzero(counts == 0)]
        raise ConfigError(
            f"inverse-frequency weighting impossible: no samples for {missing}")
    return (counts.sum() / (len(counts) * counts)).astype(np.float32)


def _check_compat(net: nn.Network, x_shape: tuple) -> None:
    if net.input_shape is None:
        raise ConfigError("network was never validated against an input shape")
    if tuple(x_shape[1:]) != tuple(net.input_shape):
        raise ShapeError(
            f"data samples are {tuple(x_shape[1:])} but the network expects "
            f"{tuple(net.input_shape)}")


def train_arrays(net: nn.Network, x: np.ndarray, y: np.ndarray,
                 plan: SplitPlan, cfg: TrainConfig,
                 epoch_callback=None) -> History:
    """Core loop over float arrays; `train` wraps it for archives."""
    cfg.validate()
    _check_compat(net, x.shape)
    tr, va = plan.train_indices, plan.val_indices
    if len(tr) == 0:
        raise ConfigError("training split is empty")
    if len(va) == 0:
        raise ConfigError("validation split is empty")
    if len(tr) + len(va) > len(x):
        raise ConfigError("split plan indexes more samples than provided")
    weights = class_weights(y[tr], cfg.class_weighting)
    opt = make_optimizer(net.params(), cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    history = History()
    k = len(CLASS_NAMES)
    for epoch in range(cfg.epochs):
        order = tr[rng.permutation(len(tr))]
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx]
            yb = y[idx]
            onehot = one_hot(yb, k, dtype=x.dtype)
            sw = None if weights is None else weights[yb]
            net.zero_grads()
            probs = net.forward(xb, train=True)
            loss, dlogits = nn.cross_entropy(probs, onehot, sw)
            net.backward_from_logits(dlogits)
            opt.step()
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == yb))
        val_loss, val_acc, _ = evaluate_arrays(net, x, y, va,
                                               batch_size=cfg.batch_size)
        history.train_loss.append(loss_sum / len(order))
        history.train_acc.append(correct / len(order))
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        if epoch_callback is not None:
            epoch_callback(epoch, history)
    return history


def train(net: nn.Network, archive: DatasetArchive, plan: SplitPlan,
          cfg: TrainConfig, epoch_callback=None) -> History:
    if archive.count == 0:
        raise ConfigError("archive holds no samples; nothing to train on")
    x = archive.to_float()
    y = archive.labels.astype(np.int64)
    return train_arrays(net, x, y, plan, cfg, epoch_callback)


@dataclass
class EvalResult:
    accuracy: float
    mean_loss: float
    confusion: np.ndarray  # [K,K], rows = true class
    count: int

    def majority_baseline(self) -> float:
        """Accuracy of always predicting the most frequent true class."""
        per_class = self.confusion.sum(axis=1)
        return float(per_class.max() / max(1, per_class.sum()))


def evaluate_arrays(net: nn.Network, x: np.ndarray, y: np.ndarray,
                    indices: np.ndarray, batch_size: int = 256):
    """(mean_loss, accuracy, confusion) over `indices`, inference mode."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ConfigError("evaluation index set is empty")
    k = len(CLASS_NAMES)
    confusion = np.zeros((k, k), dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        probs = net.forward(x[idx], train=False)
        yb = y[idx]
        p_true = np.maximum(probs[np.arange(len(idx)), yb],
                            probs.dtype.type(1e-12))
        loss_sum += float(-np.log(p_true).sum())
        pred = np.argmax(probs, axis=1)
        np.add.at(confusion, (yb, pred), 1)
    accuracy = float(np.trace(confusion) / len(indices))
    return loss_sum / len(indices), accuracy, confusion


def evaluate(net: nn.Network, archive: DatasetArchive,
             indices: np.ndarray) -> EvalResult:
    if archive.count == 0:
        raise ConfigError("archive holds no samples; nothing to evaluate")
    x = archive.to_float()
    _check_compat(net, x.shape)
    y = archive.labels.astype(np.int64)
    loss, acc, confusion = evaluate_arrays(net, x, y, indices)
    return EvalResult(accuracy=acc, mean_loss=loss, confusion=confusion,
                      count=int(len(indices)))


HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def export_history(history: History, path: str) -> None:
    """One CSV row per epoch, LF endings, repr-exact floats."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(HISTORY_COLUMNS) + "\n")
        for i in range(len(history)):
            row = (str(i + 1),
                   repr(float(history.train_loss[i])),
                   repr(float(history.train_acc[i])),
                   repr(float(history.val_loss[i])),
                   repr(float(history.val_acc[i])))
            f.write(",".join(row) + "\n")


def load_history(path: str) -> History:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != ",".join(HISTORY_COLUMNS):
        raise ConfigError(f"unrecognized history header in {path!r}")
    hist = History()
    for ln in lines[1:]:
        _, tl, ta, vl, va = ln.split(",")
        hist.train_loss.append(float(tl))
        hist.train_acc.append(float(ta))
        hist.val_loss.append(float(vl))
        hist.val_acc.append(float(va))
    return hist
