"""Class-mean alignment scoring, label-flip counting, fusion and top-k selection."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (BudgetExceedsPool, DataError, EmptyInput, MissingSample, ScoringError,
                     TooFewCheckpoints, TooFewClasses, UnknownClass, ZeroNormMean)
from .pool import NORM_EPS, ClassStats, FeatureMatrix, PoolState, compute_class_stats, unit

STD_EPS = 1e-12


@dataclass(frozen=True)
class CheckpointPredictions:
    """Predicted labels for each sample at each terminal-phase checkpoint.

    ``labels[i, t]`` is the prediction for ``sample_ids[i]`` at ``epochs[t]``.
    """

    epochs: np.ndarray
    sample_ids: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        epochs = np.asarray(self.epochs, dtype=np.int64)
        ids = np.asarray(self.sample_ids, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(len(ids), -1)
        if len(epochs) < 2:
            raise TooFewCheckpoints(f"need at least 2 checkpoints, got {len(epochs)}")
        if np.any(np.diff(epochs) <= 0):
            raise DataError("checkpoint epochs must be strictly increasing")
        if labels.shape[1] != len(epochs):
            raise DataError("every sample needs exactly one prediction per checkpoint")
        if len(set(ids.tolist())) != len(ids):
            raise DataError("duplicate sample ids in predictions")
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_row", {int(s): i for i, s in enumerate(ids)})

    def rows(self, ids) -> np.ndarray:
        try:
            return np.array([self._row[int(i)] for i in ids], dtype=np.int64)
        except KeyError as e:
            raise MissingSample(e.args[0]) from None

    def sequence(self, sample_id) -> np.ndarray:
        return self.labels[self.rows([sample_id])[0]]

    def final(self) -> dict[int, int]:
        """Predictions at the last checkpoint, the class used for CMAP."""
        return dict(zip(self.sample_ids.tolist(), self.labels[:, -1].tolist()))


def cma(stats: ClassStats) -> float:
    """Mean cosine similarity over ordered pairs of distinct present class means."""
    present = stats.present
    k = len(present)
    if k < 2:
        raise TooFewClasses(f"CMA needs >= 2 present classes, got {k}")
    u = stats.unit_means[present]
    gram = u @ u.T
    off = gram.sum() - np.trace(gram)
    return float(np.clip(off / (k * (k - 1)), -1.0, 1.0))


def updated_mean(stats: ClassStats, c: int, z) -> np.ndarray:
    """Class-``c`` mean after adding feature ``z``; ``z`` itself for an empty class."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DataError("candidate feature contains non-finite values")
    n = int(stats.counts[c])
    if n == 0:
        return z.copy()
    return (n * stats.means[c] + z) / (n + 1)


def _cmap_rows(stats: ClassStats, classes: np.ndarray, z: np.ndarray):
    """Vectorised CMAP. Returns (values, bad) where ``bad`` flags zero-norm updates."""
    n = stats.counts[classes].astype(np.float64)[:, None]
    mu = stats.means[classes]
    u = stats.unit_means[classes]
    empty = n[:, 0] == 0
    tilde = (n * mu + z) / (n + 1)
    norms = np.linalg.norm(tilde, axis=1)
    bad = norms < NORM_EPS
    safe = np.where(bad, 1.0, norms)[:, None]
    tilde_unit = tilde / safe
    # an empty class contributes no "before" term: score is unit(z) . M
    resid = np.where(empty[:, None], stats.m_sum[None, :], stats.m_sum[None, :] - u)
    diff = np.where(empty[:, None], tilde_unit, tilde_unit - u)
    values = np.einsum("ij,ij->i", diff, resid)
    return values, bad


def cmap_closed_form(stats: ClassStats, c: int, z) -> float:
    """Change in class-mean alignment from adding ``z`` to class ``c``, constant dropped."""
    if len(stats.present_classes) < 2:
        raise TooFewClasses("CMAP needs >= 2 present classes")
    if not 0 <= c < stats.num_classes:
        raise UnknownClass(f"class {c} outside [0, {stats.num_classes})")
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(z)):
        raise DataError("candidate feature contains non-finite values")
    values, bad = _cmap_rows(stats, np.array([c]), z)
    if bad[0]:
        raise ZeroNormMean(f"updated mean of class {c} has (near) zero norm")
    return float(values[0])


def _pairwise_cos_sum(means: dict[int, np.ndarray]) -> float:
    total = 0.0
    keys = sorted(means)
    for i in keys:
        for j in keys:
            if i == j:
                continue
            a, b = means[i], means[j]
            total += float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return total


def cmap_bruteforce(features: FeatureMatrix, pool: PoolState, c: int, z) -> float:
    """Reference CMAP: recompute alignment from raw members with and without ``z``.

    Returns the alignment difference times K(K-1)/2. When ``c`` is empty the
    class count changes, so half the change in the summed pairwise cosines is
    returned instead (the same quantity once K is fixed).
    """
    z = np.asarray(z, dtype=np.float64)
    members = {cls: features.take(sorted(ids)) for cls, ids in pool.labeled.items() if ids}
    k0 = len(members)
    if k0 < 2:
        raise TooFewClasses("CMAP needs >= 2 present classes")
    before = {cls: x.sum(axis=0) / len(x) for cls, x in members.items()}
    after = dict(before)
    grown = np.vstack([members[c], z]) if c in members else z[None, :]
    after[c] = grown.sum(axis=0) / len(grown)
    for m in after.values():
        if np.linalg.norm(m) < NORM_EPS:
            raise ZeroNormMean("class mean has (near) zero norm")
    s0, s1 = _pairwise_cos_sum(before), _pairwise_cos_sum(after)
    if len(after) == k0:
        pairs = k0 * (k0 - 1)
        return (s1 / pairs - s0 / pairs) * pairs / 2
    return (s1 - s0) / 2


def flip_counts(preds: CheckpointPredictions) -> np.ndarray:
    return np.count_nonzero(preds.labels[:, 1:] != preds.labels[:, :-1], axis=1)


def feature_fluctuation(preds: CheckpointPredictions, sample_id: int) -> int:
    """Number of prediction changes between consecutive checkpoints."""
    seq = preds.sequence(sample_id)
    return int(np.count_nonzero(seq[1:] != seq[:-1]))


def zscore(values) -> np.ndarray:
    """Standardise with the population std; constant input maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("zscore of an empty sequence")
    sd = v.std()
    if sd < STD_EPS:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


@dataclass(frozen=True)
class AcquisitionResult:
    """Per-candidate scores, aligned arrays ordered by ascending sample id."""

    sample_ids: np.ndarray
    predicted_class: np.ndarray
    cmap_raw: np.ndarray
    ff_raw: np.ndarray
    cmap_std: np.ndarray
    ff_std: np.ndarray
    score: np.ndarray
    rank: np.ndarray
    selected: np.ndarray

    def __len__(self):
        return len(self.sample_ids)

    def order(self) -> np.ndarray:
        """Row indices sorted by (score desc, id asc)."""
        return np.lexsort((self.sample_ids, -self.score))

    def with_selection(self, k: int) -> "AcquisitionResult":
        chosen = np.zeros(len(self), dtype=bool)
        chosen[self.rank < _check_k(k, len(self))] = True
        return AcquisitionResult(**{**self.__dict__, "selected": chosen})

    def records(self) -> list[dict]:
        return [
            {"id": int(self.sample_ids[i]),
             "predicted_class": int(self.predicted_class[i]),
             "cmap_raw": float(self.cmap_raw[i]),
             "ff_raw": int(self.ff_raw[i]),
             "cmap_std": float(self.cmap_std[i]),
             "ff_std": float(self.ff_std[i]),
             "score": float(self.score[i]),
             "rank": int(self.rank[i]),
             "selected": bool(self.selected[i])}
            for i in range(len(self))
        ]

    @classmethod
    def from_records(cls, records: Sequence[Mapping]) -> "AcquisitionResult":
        def col(key, dtype):
            return np.array([r[key] for r in records], dtype=dtype)
        return cls(col("id", np.int64), col("predicted_class", np.int64),
                   col("cmap_raw", float), col("ff_raw", np.int64), col("cmap_std", float),
                   col("ff_std", float), col("score", float), col("rank", np.int64),
                   col("selected", bool))


def fuse(cmap_raw, ff_raw) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standardise both scores and average them. Returns (cmap_std, ff_std, score)."""
    cmap_std = zscore(cmap_raw)
    ff_std = zscore(ff_raw)
    return cmap_std, ff_std, (cmap_std + ff_std) / 2


def _ranks(ids: np.ndarray, score: np.ndarray) -> np.ndarray:
    order = np.lexsort((ids, -score))
    rank = np.empty(len(ids), dtype=np.int64)
    rank[order] = np.arange(len(ids))
    return rank


def score_candidates(features: FeatureMatrix, pool: PoolState, preds: CheckpointPredictions,
                     predicted: Mapping[int, int] | None = None, stats: ClassStats | None = None,
                     threads: int = 1, chunk: int = 4096) -> AcquisitionResult:
    """Score every unlabeled sample.

    ``predicted`` gives the class each candidate is hypothetically added to;
    it defaults to the prediction at the final checkpoint.
    """
    ids = np.array(sorted(pool.unlabeled), dtype=np.int64)
    if len(ids) == 0:
        raise EmptyInput("no unlabeled candidates")
    if stats is None:
        stats = compute_class_stats(features, pool)
    if len(stats.present_classes) < 2:
        raise TooFewClasses("CMAP needs >= 2 present classes")
    if predicted is None:
        predicted = preds.final()
    try:
        classes = np.array([predicted[int(i)] for i in ids], dtype=np.int64)
    except KeyError as e:
        raise ScoringError(e.args[0], "no model prediction") from None
    bad_cls = (classes < 0) | (classes >= stats.num_classes)
    if bad_cls.any():
        i = int(np.argmax(bad_cls))
        raise ScoringError(int(ids[i]), UnknownClass(f"predicted class {classes[i]}"))
    try:
        z = features.take(ids)
    except MissingSample as e:
        raise ScoringError(e.sample_id, e) from None
    ff_raw = flip_counts(preds)[preds.rows(ids)]

    spans = [(s, min(s + chunk, len(ids))) for s in range(0, len(ids), chunk)]

    def run(span):
        lo, hi = span
        return _cmap_rows(stats, classes[lo:hi], z[lo:hi])

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    cmap_raw = np.concatenate([p[0] for p in parts])
    bad = np.concatenate([p[1] for p in parts])
    if bad.any():
        i = int(np.argmax(bad))
        raise ScoringError(int(ids[i]), ZeroNormMean("updated class mean has zero norm"))

    cmap_std, ff_std, score = fuse(cmap_raw, ff_raw)
    return AcquisitionResult(ids, classes, cmap_raw, ff_raw.astype(np.int64), cmap_std, ff_std,
                             score, _ranks(ids, score), np.zeros(len(ids), dtype=bool))


def _check_k(k: int, n: int) -> int:
    if k > n:
        raise BudgetExceedsPool(f"k={k} exceeds pool of {n} candidates")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    return k


def select_top_k(result: AcquisitionResult, k: int) -> list[int]:
    """Ids of the k best candidates; ties go to the smaller id."""
    _check_k(k, len(result))
    order = result.order()
    return result.sample_ids[order[:k]].tolist()
