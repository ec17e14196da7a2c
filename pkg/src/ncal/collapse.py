"""Neural-collapse diagnostics on labeled embeddings (NC1, NC2, NC4) and class separation."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .errors import DegenerateBetween, TooFewClasses, ZeroNormMean
from .pool import NORM_EPS, ClassStats, FeatureMatrix, PoolState, compute_class_stats


@dataclass(frozen=True)
class CollapseReport:
    nc1_ratio: float
    nc2_cos_mean: float
    nc2_cos_std: float
    nc2_target: float
    nc4_agreement: float
    interclass_dist_mean: float
    interclass_dist_values: list

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CollapseReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def _labeled(features: FeatureMatrix, pool: PoolState):
    ids, labels = [], []
    for c in sorted(pool.labeled):
        members = sorted(pool.labeled[c])
        ids.extend(members)
        labels.extend([c] * len(members))
    return features.take(ids), np.array(labels, dtype=np.int64)


def global_mean(features: FeatureMatrix, pool: PoolState) -> np.ndarray:
    """Mean over all labeled samples."""
    x, _ = _labeled(features, pool)
    return x.mean(axis=0)


def nc1_variability(features: FeatureMatrix, pool: PoolState) -> float:
    """Tr(Sigma_W) / Tr(Sigma_B); zero when every class has collapsed to its mean."""
    x, y = _labeled(features, pool)
    classes = np.unique(y)
    if len(classes) < 2:
        raise TooFewClasses("NC1 needs >= 2 present classes")
    means = np.stack([x[y == c].mean(axis=0) for c in classes])
    pos = np.searchsorted(classes, y)
    within = np.sum((x - means[pos]) ** 2) / len(x)
    between = np.sum((means - x.mean(axis=0)) ** 2) / len(classes)
    if between < 1e-12:
        raise DegenerateBetween(f"between-class trace {between:.3g} is degenerate")
    return float(within / between)


def nc2_etf_deviation(stats: ClassStats, global_mean: np.ndarray) -> tuple[float, float, float]:
    """Mean/std of pairwise cosines of centered class means, and the ETF target -1/(K-1)."""
    present = stats.present
    k = len(present)
    if k < 2:
        raise TooFewClasses("NC2 needs >= 2 present classes")
    centered = stats.means[present] - global_mean
    norms = np.linalg.norm(centered, axis=1)
    if np.any(norms < NORM_EPS):
        raise ZeroNormMean("a centered class mean has (near) zero norm")
    u = centered / norms[:, None]
    iu = np.triu_indices(k, 1)
    cos = np.clip((u @ u.T)[iu], -1.0, 1.0)
    return float(cos.mean()), float(cos.std()), -1.0 / (k - 1)


def nearest_mean_predict(stats: ClassStats, z: np.ndarray) -> np.ndarray:
    present = stats.present
    d = np.linalg.norm(z[:, None, :] - stats.means[present][None, :, :], axis=2)
    return present[np.argmin(d, axis=1)]


def nc4_nearest_mean_agreement(features: FeatureMatrix, pool: PoolState,
                               predictions: Mapping[int, int],
                               stats: ClassStats | None = None) -> float:
    """Fraction of ``predictions`` that match the nearest labeled class mean."""
    if stats is None:
        stats = compute_class_stats(features, pool, strict=False)
    ids = sorted(predictions)
    if not ids:
        return 1.0
    ncc = nearest_mean_predict(stats, features.take(ids))
    model = np.array([predictions[i] for i in ids])
    return float(np.mean(ncc == model))


def interclass_distances(stats: ClassStats) -> tuple[float, list[float]]:
    """Euclidean distances between raw class means over pairs i < j, and their mean."""
    present = stats.present
    if len(present) < 2:
        raise TooFewClasses("inter-class distances need >= 2 present classes")
    m = stats.means[present]
    iu = np.triu_indices(len(present), 1)
    d = np.linalg.norm(m[:, None, :] - m[None, :, :], axis=2)[iu]
    return float(d.mean()), d.tolist()


def collapse_report(features: FeatureMatrix, pool: PoolState,
                    predictions: Mapping[int, int] | None = None) -> CollapseReport:
    """All diagnostics over the labeled pool.

    Without model predictions NC4 compares the pool labels themselves against
    the nearest-mean rule.
    """
    stats = compute_class_stats(features, pool, strict=False)
    if predictions is None:
        predictions = pool.label_of()
    cos_mean, cos_std, target = nc2_etf_deviation(stats, global_mean(features, pool))
    dist_mean, dists = interclass_distances(stats)
    return CollapseReport(
        nc1_ratio=nc1_variability(features, pool),
        nc2_cos_mean=cos_mean,
        nc2_cos_std=cos_std,
        nc2_target=target,
        nc4_agreement=nc4_nearest_mean_agreement(features, pool, predictions, stats),
        interclass_dist_mean=dist_mean,
        interclass_dist_values=dists,
    )
