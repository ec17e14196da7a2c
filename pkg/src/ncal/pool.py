"""Embeddings, the labeled/unlabeled partition and per-class statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import AlreadyLabeled, DataError, MissingSample, UnknownClass, ZeroNormMean

NORM_EPS = 1e-12


@dataclass(frozen=True)
class FeatureMatrix:
    """N x D embedding rows keyed by integer sample ids."""

    features: np.ndarray
    sample_ids: np.ndarray
    _row: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {feats.shape}")
        ids = np.asarray(self.sample_ids, dtype=np.int64)
        if ids.shape != (feats.shape[0],):
            raise DataError("sample_ids length must equal n_samples")
        if not np.all(np.isfinite(feats)):
            r, c = np.argwhere(~np.isfinite(feats))[0]
            raise DataError(f"non-finite feature at row {r}, column {c}")
        row = {int(s): i for i, s in enumerate(ids)}
        if len(row) != len(ids):
            raise DataError("sample_ids must be unique")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "_row", row)

    @classmethod
    def from_array(cls, features, sample_ids=None) -> "FeatureMatrix":
        features = np.asarray(features)
        if sample_ids is None:
            sample_ids = np.arange(features.shape[0])
        return cls(features, sample_ids)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __contains__(self, sample_id) -> bool:
        return int(sample_id) in self._row

    def rows(self, ids: Iterable[int]) -> np.ndarray:
        try:
            return np.array([self._row[int(i)] for i in ids], dtype=np.int64)
        except KeyError as e:
            raise MissingSample(e.args[0]) from None

    def take(self, ids: Iterable[int]) -> np.ndarray:
        """Rows for ``ids`` as float64."""
        return self.features[self.rows(ids)].astype(np.float64)

    def scaled(self, factor: float) -> "FeatureMatrix":
        return FeatureMatrix(self.features * factor, self.sample_ids)


@dataclass
class PoolState:
    """Partition of sample ids into per-class labeled sets and an unlabeled set."""

    num_classes: int
    labeled: dict[int, set[int]]
    unlabeled: set[int]
    cycle: int = 0

    @classmethod
    def initial(cls, num_classes: int, labels: Mapping[int, int], unlabeled: Iterable[int]) -> "PoolState":
        labeled: dict[int, set[int]] = {c: set() for c in range(num_classes)}
        for sid, c in labels.items():
            if not 0 <= c < num_classes:
                raise UnknownClass(f"class {c} outside [0, {num_classes})")
            labeled[int(c)].add(int(sid))
        pool = cls(num_classes, labeled, {int(s) for s in unlabeled})
        pool.check_partition()
        return pool

    def copy(self) -> "PoolState":
        return PoolState(self.num_classes, {c: set(s) for c, s in self.labeled.items()},
                         set(self.unlabeled), self.cycle)

    def labeled_ids(self) -> set[int]:
        out: set[int] = set()
        for s in self.labeled.values():
            out |= s
        return out

    def label_of(self) -> dict[int, int]:
        return {sid: c for c, s in self.labeled.items() for sid in s}

    def n_labeled(self) -> int:
        return sum(len(s) for s in self.labeled.values())

    def check_partition(self, universe: Iterable[int] | None = None) -> None:
        seen = set(self.unlabeled)
        total = len(self.unlabeled)
        for c, s in self.labeled.items():
            if not 0 <= c < self.num_classes:
                raise UnknownClass(f"class {c} outside [0, {self.num_classes})")
            seen |= s
            total += len(s)
        if total != len(seen):
            raise DataError("labeled and unlabeled sets overlap")
        if universe is not None and seen != {int(u) for u in universe}:
            raise DataError("pool does not cover the sample universe")


def apply_label(pool: PoolState, sample_id: int, cls: int) -> PoolState:
    """Return a new pool with ``sample_id`` moved from unlabeled to class ``cls``."""
    return apply_labels(pool, [(sample_id, cls)])


def apply_labels(pool: PoolState, pairs: Iterable[tuple[int, int]]) -> PoolState:
    new = pool.copy()
    for sid, c in pairs:
        sid, c = int(sid), int(c)
        if not 0 <= c < new.num_classes:
            raise UnknownClass(f"class {c} outside [0, {new.num_classes})")
        if sid not in new.unlabeled:
            if any(sid in s for s in new.labeled.values()):
                raise AlreadyLabeled(f"sample {sid} is already labeled")
            raise MissingSample(sid)
        new.unlabeled.remove(sid)
        new.labeled[c].add(sid)
    return new


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray  # (K,)
    means: np.ndarray  # (K, D), zero rows for absent classes
    unit_means: np.ndarray  # (K, D), zero rows for absent classes
    m_sum: np.ndarray  # (D,)
    present_classes: frozenset

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def present(self) -> np.ndarray:
        """Sorted array of present class indices."""
        return np.array(sorted(self.present_classes), dtype=np.int64)


def unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < NORM_EPS:
        raise ZeroNormMean(f"vector norm {n:.3g} below {NORM_EPS}")
    return v / n


def compute_class_stats(features: FeatureMatrix, pool: PoolState, strict: bool = True) -> ClassStats:
    """Per-class counts, means, unit means and their sum M over present classes.

    Classes without labeled samples get zero rows and are left out of ``m_sum``.
    With ``strict=False`` a zero-norm mean keeps a zero unit row instead of
    raising; distance-based diagnostics use this since they never normalise.
    """
    K, D = pool.num_classes, features.dim
    counts = np.zeros(K, dtype=np.int64)
    means = np.zeros((K, D))
    unit_means = np.zeros((K, D))
    present = []
    for c in range(K):
        members = pool.labeled.get(c, ())
        if not members:
            continue
        x = features.take(sorted(members))
        counts[c] = len(members)
        means[c] = x.mean(axis=0)
        try:
            unit_means[c] = unit(means[c])
        except ZeroNormMean:
            if strict:
                raise ZeroNormMean(f"class {c} mean has (near) zero norm") from None
        present.append(c)
    m_sum = unit_means[present].sum(axis=0) if present else np.zeros(D)
    return ClassStats(counts, means, unit_means, m_sum, frozenset(present))
