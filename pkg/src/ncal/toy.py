"""Synthetic Gaussian blobs and a small ReLU classifier trained with mini-batch SGD.

The hidden-layer activations play the role of penultimate-layer embeddings and
per-epoch predictions are the checkpoints fed to the flip counter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .acquisition import CheckpointPredictions
from .errors import DataError, DivergedTraining, InvalidSpec, TooFewClasses
from .pool import FeatureMatrix


@dataclass(frozen=True)
class BlobSpec:
    num_classes: int
    counts: tuple  # samples per class
    dim: int
    separation: float
    stddev: float
    seed: int = 0

    @classmethod
    def balanced(cls, num_classes, per_class, dim, separation, stddev, seed=0):
        return cls(num_classes, (per_class,) * num_classes, dim, separation, stddev, seed)


@dataclass(frozen=True)
class SyntheticDataset:
    features: FeatureMatrix
    labels: np.ndarray  # true class per row
    spec: BlobSpec | None = None
    centers: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes if self.spec else int(self.labels.max()) + 1

    def label_map(self) -> dict[int, int]:
        return dict(zip(self.features.sample_ids.tolist(), self.labels.tolist()))

    def subset(self, rows) -> "SyntheticDataset":
        rows = np.asarray(rows, dtype=np.int64)
        fm = FeatureMatrix(self.features.features[rows], self.features.sample_ids[rows])
        return SyntheticDataset(fm, self.labels[rows], self.spec, self.centers)


def class_centers(num_classes: int, dim: int, separation: float, rng) -> np.ndarray:
    """Centers at distance ``separation`` from the origin, mutually orthogonal when K <= dim."""
    if num_classes <= dim:
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))
        return separation * q[:, :num_classes].T
    g = rng.standard_normal((num_classes, dim))
    return separation * g / np.linalg.norm(g, axis=1, keepdims=True)


def generate_blobs(spec: BlobSpec) -> SyntheticDataset:
    if spec.num_classes < 2:
        raise InvalidSpec("need at least 2 classes")
    if len(spec.counts) != spec.num_classes or min(spec.counts) < 1:
        raise InvalidSpec("need one count >= 1 per class")
    if spec.separation <= 0 or spec.stddev < 0 or spec.dim < 1:
        raise InvalidSpec("separation must be > 0, stddev >= 0, dim >= 1")
    rng = np.random.default_rng(spec.seed)
    centers = class_centers(spec.num_classes, spec.dim, spec.separation, rng)
    labels = np.repeat(np.arange(spec.num_classes), spec.counts)
    noise = rng.standard_normal((len(labels), spec.dim))
    x = centers[labels] + spec.stddev * noise
    return SyntheticDataset(FeatureMatrix.from_array(x), labels, spec, centers)


def split_holdout(ds: SyntheticDataset, fraction: float, seed: int):
    """Stratified split into (pool, test); ``fraction`` of each class goes to test."""
    rng = np.random.default_rng(seed)
    test_rows = []
    for c in np.unique(ds.labels):
        rows = np.flatnonzero(ds.labels == c)
        n_test = int(round(fraction * len(rows)))
        test_rows.extend(rng.choice(rows, size=n_test, replace=False).tolist())
    test_mask = np.zeros(len(ds.labels), dtype=bool)
    test_mask[test_rows] = True
    return ds.subset(np.flatnonzero(~test_mask)), ds.subset(np.flatnonzero(test_mask))


# --- model -----------------------------------------------------------------

@dataclass
class TrainConfig:
    hidden: int = 64
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 300
    weight_decay: float = 5e-3
    tpt_threshold: float = 0.995
    seed: int = 0


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ToyModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    PARAMS = ("W1", "b1", "W2", "b2")

    @classmethod
    def init(cls, d_in: int, hidden: int, num_classes: int, seed: int) -> "ToyModel":
        rng = np.random.default_rng(seed)
        a1, a2 = 1 / math.sqrt(d_in), 1 / math.sqrt(hidden)
        return cls(rng.uniform(-a1, a1, (d_in, hidden)), rng.uniform(-a1, a1, hidden),
                   rng.uniform(-a2, a2, (hidden, num_classes)), rng.uniform(-a2, a2, num_classes))

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.PARAMS}

    def copy(self) -> "ToyModel":
        return ToyModel(*(p.copy() for p in self.params().values()))

    def hidden(self, x):
        return relu(x @ self.W1 + self.b1)

    def forward(self, x):
        h = self.hidden(x)
        return h, h @ self.W2 + self.b2

    def proba(self, x):
        return softmax(self.forward(x)[1])

    def predict(self, x):
        return np.argmax(self.forward(x)[1], axis=1)


def loss_and_grads(model: ToyModel, x: np.ndarray, y: np.ndarray, weight_decay: float = 0.0):
    """Mean cross-entropy (+ L2 on weights) and its gradients w.r.t. every parameter."""
    pre = x @ model.W1 + model.b1
    h = relu(pre)
    logits = h @ model.W2 + model.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    loss += 0.5 * weight_decay * (np.sum(model.W1 ** 2) + np.sum(model.W2 ** 2))

    d_logits = np.exp(logp)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    grads = {
        "W2": h.T @ d_logits + weight_decay * model.W2,
        "b2": d_logits.sum(axis=0),
    }
    d_pre = (d_logits @ model.W2.T) * (pre > 0)
    grads["W1"] = x.T @ d_pre + weight_decay * model.W1
    grads["b1"] = d_pre.sum(axis=0)
    return float(loss), grads


def detect_tpt(train_acc: Sequence[float], threshold: float = 0.995) -> tuple[int, int]:
    """(first epoch at or above ``threshold``, last epoch); last 20% if never reached."""
    acc = np.asarray(train_acc, dtype=float)
    if acc.size == 0:
        raise DataError("no epochs recorded")
    last = len(acc) - 1
    hits = np.flatnonzero(acc >= threshold)
    if hits.size:
        return int(hits[0]), last
    return len(acc) - math.ceil(0.2 * len(acc)), last


@dataclass
class TrainingTrace:
    train_acc: np.ndarray  # (epochs,)
    losses: np.ndarray
    record_ids: np.ndarray
    epoch_predictions: np.ndarray  # (len(record_ids), epochs)
    features: FeatureMatrix  # final hidden activations for every input sample
    tpt_start: int
    tpt_end: int
    model: ToyModel = field(repr=False)

    def checkpoint_predictions(self) -> CheckpointPredictions:
        """Predictions over the terminal window, widened to two epochs if needed."""
        start = min(self.tpt_start, self.tpt_end - 1)
        if start < 0:
            raise DataError("need at least 2 epochs of predictions")
        epochs = np.arange(start, self.tpt_end + 1)
        return CheckpointPredictions(epochs, self.record_ids, self.epoch_predictions[:, epochs])


def train(config: TrainConfig, data: FeatureMatrix, labels: Mapping[int, int], num_classes: int,
          record_ids: Sequence[int] | None = None, model: ToyModel | None = None) -> TrainingTrace:
    """Fit a fresh (or given) model on the labeled ids in ``labels``.

    Predictions for ``record_ids`` are stored after every epoch; hidden features
    are returned for every row of ``data``.
    """
    ids = np.array(sorted(labels), dtype=np.int64)
    y = np.array([labels[int(i)] for i in ids], dtype=np.int64)
    if len(ids) == 0 or len(np.unique(y)) < 2:
        raise TooFewClasses("training needs labeled samples from >= 2 classes")
    x = data.take(ids)
    record_ids = np.array([] if record_ids is None else list(record_ids), dtype=np.int64)
    x_rec = data.take(record_ids) if len(record_ids) else np.zeros((0, data.dim))
    if model is None:
        model = ToyModel.init(data.dim, config.hidden, num_classes, config.seed)
    rng = np.random.default_rng([config.seed, 1])

    accs, losses = [], []
    preds = np.zeros((len(record_ids), config.epochs), dtype=np.int64)
    with np.errstate(over="ignore", invalid="ignore"):
        _fit(model, config, x, y, rng, x_rec, preds, accs, losses)

    t_i, t_f = detect_tpt(accs, config.tpt_threshold)
    hidden = model.hidden(data.features.astype(np.float64))
    return TrainingTrace(np.array(accs), np.array(losses), record_ids, preds,
                         FeatureMatrix(hidden, data.sample_ids), t_i, t_f, model)


def _fit(model, config, x, y, rng, x_rec, preds, accs, losses):
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            b = order[s:s + config.batch_size]
            loss, grads = loss_and_grads(model, x[b], y[b], config.weight_decay)
            if not math.isfinite(loss):
                raise DivergedTraining(f"non-finite loss at epoch {epoch}")
            if config.lr:
                for k, g in grads.items():
                    getattr(model, k)[...] -= config.lr * g
        _, logits = model.forward(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        full_loss = -(shifted[np.arange(len(y)), y]
                      - np.log(np.exp(shifted).sum(axis=1))).mean()
        if not np.isfinite(full_loss):
            raise DivergedTraining(f"non-finite loss at epoch {epoch}")
        losses.append(full_loss)
        accs.append(float(np.mean(np.argmax(logits, axis=1) == y)))
        if len(x_rec):
            preds[:, epoch] = model.predict(x_rec)
