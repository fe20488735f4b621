"""Perceptual models, task losses, optimizers and the weakly supervised training loop."""
from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .data import Dataset
from .inference import RBFConfig, backward, forward, scalar_root
from .program import ProgramGraph

CE_FLOOR = 1e-12
# wall_seconds is last: every other column is reproducible from the seeds
METRIC_FIELDS = ("epoch", "train_loss", "task_acc", "symbol_acc", "wall_seconds")


class ModelKind(str, enum.Enum):
    LINEAR_SOFTMAX = "linear"
    MLP = "mlp"


class LossKind(str, enum.Enum):
    L1 = "l1"
    CROSS_ENTROPY = "ce"


# -- perceptual model -------------------------------------------------------

@dataclass
class PerceptualModel:
    """Softmax classifier over ``class_count`` symbols with a flat parameter vector.

    LINEAR_SOFTMAX: ``W (input_dim x C), b (C)``.  MLP: one ReLU hidden layer.
    """

    kind: ModelKind
    input_dim: int
    class_count: int
    weights: np.ndarray
    hidden: int = 0

    @classmethod
    def create(cls, kind, input_dim: int, class_count: int, hidden: int = 32,
               seed: int = 0, init_scale: float | None = None) -> "PerceptualModel":
        kind = ModelKind(kind)
        hidden = hidden if kind is ModelKind.MLP else 0
        model = cls(kind, input_dim, class_count, np.zeros(0), hidden)
        rng = np.random.default_rng(seed)
        if kind is ModelKind.LINEAR_SOFTMAX:
            scale = 0.0 if init_scale is None else init_scale
            w = np.concatenate([rng.normal(0, 1, input_dim * class_count) * scale,
                                np.zeros(class_count)])
        else:
            scale = 1.0 if init_scale is None else init_scale
            w1 = rng.normal(0, scale / math.sqrt(input_dim), input_dim * hidden)
            w2 = rng.normal(0, scale / math.sqrt(hidden), hidden * class_count)
            w = np.concatenate([w1, np.zeros(hidden), w2, np.zeros(class_count)])
        model.weights = w
        return model

    @property
    def parameter_count(self) -> int:
        d, c, h = self.input_dim, self.class_count, self.hidden
        if self.kind is ModelKind.LINEAR_SOFTMAX:
            return d * c + c
        return d * h + h + h * c + c

    def _split(self, theta):
        d, c, h = self.input_dim, self.class_count, self.hidden
        if self.kind is ModelKind.LINEAR_SOFTMAX:
            return theta[: d * c].reshape(d, c), theta[d * c:]
        o = 0
        w1 = theta[o:o + d * h].reshape(d, h); o += d * h
        b1 = theta[o:o + h]; o += h
        w2 = theta[o:o + h * c].reshape(h, c); o += h * c
        return w1, b1, w2, theta[o:o + c]

    def forward_batch(self, x: np.ndarray):
        """Softmax probabilities for a (N, input_dim) batch, plus a cache for ``backward_batch``."""
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"feature dim {x.shape[-1]} != model input_dim {self.input_dim}")
        parts = self._split(self.weights)
        if self.kind is ModelKind.LINEAR_SOFTMAX:
            w, b = parts
            logits = x @ w + b
            h = None
        else:
            w1, b1, w2, b2 = parts
            pre = x @ w1 + b1
            h = np.maximum(pre, 0.0)
            logits = h @ w2 + b2
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        return p, (x, h, p)

    def backward_batch(self, cache, g_probs: np.ndarray) -> np.ndarray:
        x, h, p = cache
        g_logits = p * (g_probs - np.sum(g_probs * p, axis=1, keepdims=True))
        if self.kind is ModelKind.LINEAR_SOFTMAX:
            return np.concatenate([(x.T @ g_logits).ravel(), g_logits.sum(axis=0)])
        _, _, w2, _ = self._split(self.weights)
        g_h = (g_logits @ w2.T) * (h > 0)
        return np.concatenate([(x.T @ g_h).ravel(), g_h.sum(axis=0),
                               (h.T @ g_logits).ravel(), g_logits.sum(axis=0)])

    def copy(self) -> "PerceptualModel":
        return replace(self, weights=self.weights.copy())


def apply_model(m: PerceptualModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != m.input_dim:
        raise ValueError(f"expected a feature vector of length {m.input_dim}, got shape {x.shape}")
    return m.forward_batch(x[None, :])[0][0]


# -- losses -----------------------------------------------------------------

def _digit_marginals(graph: ProgramGraph, dists: list) -> list:
    """Per-place digit distributions (least significant first) plus the final carry bit."""
    out = []
    for p in dists:
        size = p.shape[1]
        fold = np.zeros((size, 10))
        fold[np.arange(size), np.arange(size) % 10] = 1.0
        out.append(p @ fold)
    top = dists[-1]
    size = top.shape[1]
    carry = np.zeros((size, 2))
    carry[np.arange(size), np.minimum(np.arange(size) // 10, 1)] = 1.0
    out.append(top @ carry)
    return out


def task_loss(graph: ProgramGraph, root, tape, labels, kind: LossKind):
    """Mean loss over the batch and the upstream gradients ``{node: grad}`` for ``backward``."""
    kind = LossKind(kind)
    batch = tape.batch
    if graph.readout == "value":
        if kind is not LossKind.L1 or not scalar_root(graph):
            raise ValueError("value readouts only support the L1 loss")
        v = np.atleast_1d(np.asarray(root, dtype=np.float64)) if tape.single else root
        y = np.asarray(labels, dtype=np.float64).reshape(batch)
        diff = v - y
        return float(np.mean(np.abs(diff))), {graph.root: np.sign(diff) / batch}
    if graph.readout == "class":
        p = tape.records[graph.root].output
        y = np.asarray(labels, dtype=np.int64).reshape(batch)
        if kind is not LossKind.CROSS_ENTROPY:
            raise ValueError("class readouts only support the cross-entropy loss")
        py = p[np.arange(batch), y]
        clamped = np.maximum(py, CE_FLOOR)
        g = np.zeros_like(p)
        g[np.arange(batch), y] = np.where(py > CE_FLOOR, -1.0 / clamped, 0.0) / batch
        return float(np.mean(-np.log(clamped))), {graph.root: g}

    # digits: labels are (carry, most significant .. least significant)
    y = np.asarray([list(lab) for lab in labels], dtype=np.int64).reshape(batch, -1)
    y_places = y[:, ::-1]  # least significant first, carry last
    dists = [tape.records[i].output for i in graph.readout_nodes]
    sizes = [p.shape[1] for p in dists]
    place_values = [np.arange(s) % 10 for s in sizes] + [np.minimum(np.arange(sizes[-1]) // 10, 1)]
    sources = list(range(len(dists))) + [len(dists) - 1]
    grads = {i: np.zeros_like(p) for i, p in zip(graph.readout_nodes, dists)}
    total = np.zeros(batch)
    if kind is LossKind.L1:
        for k, (src, vals) in enumerate(zip(sources, place_values)):
            p = dists[src]
            diff = p @ vals - y_places[:, k]
            total += np.abs(diff)
            grads[graph.readout_nodes[src]] += np.sign(diff)[:, None] * vals[None, :] / batch
    else:
        for k, (src, vals) in enumerate(zip(sources, place_values)):
            p = dists[src]
            onehot_vals = vals[None, :] == y_places[:, k][:, None]
            q = np.sum(p * onehot_vals, axis=1)
            clamped = np.maximum(q, CE_FLOOR)
            total += -np.log(clamped)
            scale = np.where(q > CE_FLOOR, -1.0 / clamped, 0.0)
            grads[graph.readout_nodes[src]] += scale[:, None] * onehot_vals / batch
    return float(np.mean(total)), grads


def loss(output, label, kind) -> float:
    """Loss of one output: L1 for real or digit-tuple outputs, cross-entropy for distributions."""
    kind = LossKind(kind)
    if kind is LossKind.L1:
        if isinstance(label, (tuple, list)):
            out = np.asarray(output, dtype=np.float64)
            return float(np.sum(np.abs(out - np.asarray(label, dtype=np.float64))))
        if np.ndim(output) != 0:
            raise ValueError("L1 loss needs a scalar output")
        return abs(float(output) - float(label))
    p = np.asarray(output, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("cross-entropy needs a distribution output")
    return float(-np.log(max(p[int(label)], CE_FLOOR)))


# -- optimizers -------------------------------------------------------------

@dataclass
class SGD:
    lr: float

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        theta -= self.lr * grad


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossKind = LossKind.L1
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    rbf: RBFConfig = field(default_factory=RBFConfig)

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def make_optimizer(self):
        return Adam(self.lr) if self.optimizer == "adam" else SGD(self.lr)


# -- one step ---------------------------------------------------------------

def batch_loss_and_grad(graph: ProgramGraph, sketches: Mapping, model: PerceptualModel,
                        features: np.ndarray, labels, loss_kind, rbf: RBFConfig = RBFConfig()):
    """Mean task loss over a batch and its gradient wrt the model parameters."""
    n, leaves, dim = features.shape
    probs, cache = model.forward_batch(features.reshape(n * leaves, dim))
    probs3 = probs.reshape(n, leaves, -1)
    leaf_dists = [probs3[:, i, :] for i in range(leaves)]
    root, tape = forward(graph, sketches, leaf_dists, rbf)
    value, upstream = task_loss(graph, root, tape, labels, loss_kind)
    leaf_grads = backward(tape, upstream)
    g_probs = np.stack(leaf_grads, axis=1).reshape(n * leaves, -1)
    return value, model.backward_batch(cache, g_probs)


# -- evaluation -------------------------------------------------------------

def outputs_match(pred, label) -> bool:
    if pred is None:
        return False
    if isinstance(label, tuple):
        return tuple(pred) == label
    if isinstance(label, float):
        return abs(float(pred) - label) <= 1e-6
    return pred == label


def evaluate_argmax(graph: ProgramGraph, model: PerceptualModel, data: Dataset) -> dict:
    """Run the exact symbolic program on each leaf's most probable symbol."""
    if len(data) == 0:
        return {"task_acc": float("nan"), "symbol_acc": float("nan")}
    n, leaves, dim = data.features.shape
    probs, _ = model.forward_batch(data.features.reshape(n * leaves, dim))
    pred = probs.reshape(n, leaves, -1).argmax(axis=2)
    hits = sum(outputs_match(graph.task_output(row), lab) for row, lab in zip(pred, data.labels))
    out = {"task_acc": hits / n}
    out["symbol_acc"] = float(np.mean(pred == data.symbols)) if data.symbols is not None else float("nan")
    return out


def supervised_accuracy(model: PerceptualModel, data: Dataset) -> float:
    n, leaves, dim = data.features.shape
    probs, _ = model.forward_batch(data.features.reshape(n * leaves, dim))
    return float(np.mean(probs.argmax(axis=1) == data.symbols.reshape(-1)))


def train_supervised(model: PerceptualModel, data: Dataset, epochs: int = 5, lr: float = 1e-2,
                     batch_size: int = 64, seed: int = 0) -> PerceptualModel:
    """Per-symbol cross-entropy training (the fully supervised reference)."""
    model = model.copy()
    opt = Adam(lr)
    n, leaves, dim = data.features.shape
    x = data.features.reshape(n * leaves, dim)
    y = data.symbols.reshape(-1)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            p, cache = model.forward_batch(x[idx])
            g = np.zeros_like(p)
            g[np.arange(len(idx)), y[idx]] = -1.0 / np.maximum(p[np.arange(len(idx)), y[idx]], CE_FLOOR) / len(idx)
            opt.step(model.weights, model.backward_batch(cache, g))
    return model


# -- training loop ----------------------------------------------------------

def train(graph: ProgramGraph, sketches: Mapping, model: PerceptualModel, data: Dataset,
          cfg: TrainConfig, test: Dataset | None = None, log=None):
    """Weakly supervised training from task labels only.

    Returns ``(trained_model, history)``; history holds one dict per epoch
    with the ``METRIC_FIELDS`` keys.  The input model is left untouched.
    """
    model = model.copy()
    opt = cfg.make_optimizer()
    rng = np.random.default_rng(cfg.seed)
    history = []
    eval_set = test if test is not None else data
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for lo in range(0, len(data), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            labels = [data.labels[i] for i in idx]
            value, grad = batch_loss_and_grad(graph, sketches, model, data.features[idx], labels,
                                              cfg.loss, cfg.rbf)
            opt.step(model.weights, grad)
            total += value * len(idx)
            count += len(idx)
        metrics = evaluate_argmax(graph, model, eval_set)
        row = {"epoch": epoch, "wall_seconds": time.perf_counter() - start,
               "train_loss": total / max(count, 1), **metrics}
        history.append(row)
        if log is not None:
            log(row)
    return model, history


def mean_task_loss(graph, sketches, model, data: Dataset, kind, rbf=RBFConfig(), batch_size=256) -> float:
    total = 0.0
    for lo in range(0, len(data), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(data)))
        n, leaves, dim = data.features[idx].shape
        probs, _ = model.forward_batch(data.features[idx].reshape(n * leaves, dim))
        probs3 = probs.reshape(n, leaves, -1)
        root, tape = forward(graph, sketches, [probs3[:, i] for i in range(leaves)], rbf)
        value, _ = task_loss(graph, root, tape, [data.labels[i] for i in idx], kind)
        total += value * len(idx)
    return total / len(data)


def write_metrics_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k])
                             for k in METRIC_FIELDS})


def save_model(path, m: PerceptualModel) -> None:
    np.savez(path, kind=m.kind.value, input_dim=m.input_dim, class_count=m.class_count,
             hidden=m.hidden, weights=m.weights)


def load_model(path) -> PerceptualModel:
    z = np.load(path, allow_pickle=False)
    return PerceptualModel(ModelKind(str(z["kind"])), int(z["input_dim"]), int(z["class_count"]),
                           z["weights"].astype(np.float64), int(z["hidden"]))
