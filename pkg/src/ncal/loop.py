"""Pool-based active-learning protocol: initial pool, train / score / select / label cycles.

Strategies: ``ncal`` (fused alignment-perturbation + flip-count score),
``random`` and ``coreset`` (k-center greedy).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .acquisition import score_candidates, select_top_k
from .collapse import CollapseReport, collapse_report
from .errors import BudgetExceedsPool, CycleError, DataError, InvalidSpec, NcalError
from .pool import FeatureMatrix, PoolState, apply_labels
from .toy import BlobSpec, SyntheticDataset, TrainConfig, generate_blobs, split_holdout, train

log = logging.getLogger(__name__)

STRATEGIES = ("ncal", "random", "coreset")


@dataclass
class ProtocolConfig:
    initial_fraction: float = 0.10
    acquisition_fraction: float = 0.05
    budget_fraction: float = 0.40
    strategy: str = "ncal"
    seeds: list = field(default_factory=lambda: [0])
    noise_rate: float = 0.0
    longtail_beta: float = 0.0
    # synthetic data
    num_classes: int = 10
    per_class: int = 625
    dim: int = 16
    separation: float = 3.0
    stddev: float = 1.0
    test_fraction: float = 0.2
    # toy model
    hidden: int = 64
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 100
    weight_decay: float = 5e-3
    tpt_threshold: float = 0.995

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self):
        if not 0 < self.initial_fraction < 1:
            raise InvalidSpec("initial_fraction must be in (0, 1)")
        if not 0 < self.acquisition_fraction < 1:
            raise InvalidSpec("acquisition_fraction must be in (0, 1)")
        if not 0 < self.budget_fraction <= 1 or self.budget_fraction < self.initial_fraction:
            raise InvalidSpec("budget_fraction must be in [initial_fraction, 1]")
        if self.strategy not in STRATEGIES:
            raise InvalidSpec(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0 <= self.noise_rate < 1:
            raise InvalidSpec("noise_rate must be in [0, 1)")
        if self.longtail_beta < 0:
            raise InvalidSpec("longtail_beta must be >= 0")
        if not self.seeds:
            raise InvalidSpec("need at least one seed")
        n = self.n_cycles
        if abs(self.initial_fraction + n * self.acquisition_fraction - self.budget_fraction) > 1e-9:
            raise InvalidSpec("budget_fraction is not initial_fraction + n * acquisition_fraction")

    @property
    def n_cycles(self) -> int:
        return round((self.budget_fraction - self.initial_fraction) / self.acquisition_fraction)

    def schedule(self, pool_size: int) -> list[int]:
        """Labeled-set size at each cycle, from the initial pool to the budget."""
        n0 = round(self.initial_fraction * pool_size)
        step = round(self.acquisition_fraction * pool_size)
        return [n0 + t * step for t in range(self.n_cycles + 1)]

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(hidden=self.hidden, lr=self.lr, batch_size=self.batch_size,
                           epochs=self.epochs, weight_decay=self.weight_decay,
                           tpt_threshold=self.tpt_threshold, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(d))


@dataclass
class CycleRecord:
    cycle: int
    labeled_count: int
    test_accuracy: float
    train_accuracy: float
    tpt_start: int
    tpt_end: int
    collapse: CollapseReport
    selected_ids: list
    noisy_selected: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["collapse"] = self.collapse.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CycleRecord":
        d = dict(d)
        d["collapse"] = CollapseReport.from_dict(d["collapse"])
        return cls(**d)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def oracle_label(sample_id: int, true_label: int, num_classes: int, noise_rate: float,
                 seed: int) -> int:
    """Annotator answer: the true label, or with probability ``noise_rate`` a uniform other class."""
    rng = np.random.default_rng([int(seed), int(sample_id), 0x6E6F6973])
    if rng.random() < noise_rate:
        return int((true_label + rng.integers(1, num_classes)) % num_classes)
    return int(true_label)


def longtail_counts(n_max: int, num_classes: int, beta: float) -> list[int]:
    """Per-class sizes max(1, round(n_max * exp(-beta * c))) for c = 0..K-1."""
    if beta < 0:
        raise InvalidSpec("beta must be >= 0")
    return [max(1, int(round(n_max * math.exp(-beta * c)))) for c in range(num_classes)]


def make_longtail(labels: Sequence[int], beta: float, seed: int,
                  n_max: int | None = None) -> tuple[list[int], np.ndarray]:
    """Subsample rows so class ``c`` keeps ``longtail_counts`` samples.

    Returns (counts, sorted row indices). ``n_max`` defaults to the size of
    the largest class; class counts are capped by what is available.
    """
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1
    avail = np.bincount(labels, minlength=num_classes)
    if n_max is None:
        n_max = int(avail.max())
    target = longtail_counts(n_max, num_classes, beta)
    rng = np.random.default_rng(seed)
    rows, counts = [], []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        n = min(target[c], len(members))
        rows.extend(rng.choice(members, size=n, replace=False).tolist())
        counts.append(n)
    return counts, np.sort(np.array(rows, dtype=np.int64))


def random_select(unlabeled: Iterable[int], k: int, seed: int) -> list[int]:
    ids = np.array(sorted(unlabeled), dtype=np.int64)
    if k > len(ids):
        raise BudgetExceedsPool(f"k={k} exceeds pool of {len(ids)}")
    rng = np.random.default_rng(seed)
    return ids[rng.choice(len(ids), size=k, replace=False)].tolist()


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return np.maximum(d, 0.0)


def coreset_select(features: FeatureMatrix, labeled_ids: Iterable[int], k: int,
                   candidates: Iterable[int] | None = None, chunk: int = 2048) -> list[int]:
    """k-center greedy: repeatedly take the candidate farthest from every labeled/chosen point."""
    labeled = sorted(int(i) for i in labeled_ids)
    if candidates is None:
        lab = set(labeled)
        candidates = [int(i) for i in features.sample_ids if int(i) not in lab]
    cand = np.array(sorted(int(i) for i in candidates), dtype=np.int64)
    if k > len(cand):
        raise BudgetExceedsPool(f"k={k} exceeds pool of {len(cand)}")
    x = features.take(cand)
    min_d = np.full(len(cand), np.inf)
    if labeled:
        centers = features.take(labeled)
        for s in range(0, len(centers), chunk):
            min_d = np.minimum(min_d, _sq_dists(x, centers[s:s + chunk]).min(axis=1))
    chosen = []
    for _ in range(k):
        i = int(np.argmax(min_d))  # first max = smallest id among ties
        chosen.append(int(cand[i]))
        min_d = np.minimum(min_d, _sq_dists(x, x[i:i + 1])[:, 0])
        min_d[i] = -1.0
    return chosen


def build_dataset(config: ProtocolConfig, seed: int) -> tuple[SyntheticDataset, SyntheticDataset]:
    """(pool, test) blobs for one seed; the long-tail subsample applies to the pool only."""
    spec = BlobSpec.balanced(config.num_classes, config.per_class, config.dim,
                             config.separation, config.stddev, seed)
    full = generate_blobs(spec)
    pool, test = split_holdout(full, config.test_fraction, _derive_seed(seed, 1))
    if config.longtail_beta > 0:
        _, rows = make_longtail(pool.labels, config.longtail_beta, _derive_seed(seed, 2))
        pool = pool.subset(rows)
    return pool, test


def run_protocol(config: ProtocolConfig, seed: int, strategy: str | None = None,
                 data: tuple[SyntheticDataset, SyntheticDataset] | None = None,
                 threads: int = 1, on_result: Callable | None = None) -> list[CycleRecord]:
    """One seeded run: a record per training round, the last one at the budget.

    ``on_result(cycle, result)`` receives each ncal AcquisitionResult.
    """
    strategy = strategy or config.strategy
    if strategy not in STRATEGIES:
        raise InvalidSpec(f"unknown strategy {strategy!r}")
    pool_ds, test_ds = data if data is not None else build_dataset(config, seed)
    K = config.num_classes
    ids = pool_ds.features.sample_ids
    truth = pool_ds.label_map()
    schedule = config.schedule(len(ids))
    step = round(config.acquisition_fraction * len(ids))
    if schedule[-1] > len(ids) or schedule[0] < 1 or (config.n_cycles and step < 1):
        raise DataError(f"pool of {len(ids)} too small for schedule {schedule}")

    def annotate(batch):
        return [(i, oracle_label(i, truth[i], K, config.noise_rate, seed)) for i in batch]

    rng = np.random.default_rng(_derive_seed(seed, 3))
    initial = sorted(ids[rng.choice(len(ids), size=schedule[0], replace=False)].tolist())
    pool = apply_labels(PoolState(K, {c: set() for c in range(K)}, set(ids.tolist())),
                        annotate(initial))

    records = []
    for t in range(config.n_cycles + 1):
        try:
            labels = pool.label_of()
            unlabeled = sorted(pool.unlabeled)
            trace = train(config.train_config(_derive_seed(seed, 4, t)), pool_ds.features,
                          labels, K, record_ids=unlabeled)
            test_acc = float(np.mean(trace.model.predict(test_ds.features.take(test_ds.features.sample_ids))
                                     == test_ds.labels))
            lab_ids = sorted(labels)
            lab_pred = trace.model.predict(pool_ds.features.take(lab_ids))
            report = collapse_report(trace.features, pool, dict(zip(lab_ids, lab_pred.tolist())))

            selected: list[int] = []
            noisy = 0
            if t < config.n_cycles:
                if strategy == "ncal":
                    result = score_candidates(trace.features, pool, trace.checkpoint_predictions(),
                                              threads=threads)
                    selected = select_top_k(result, step)
                    if on_result is not None:
                        on_result(t, result)
                elif strategy == "random":
                    selected = random_select(pool.unlabeled, step, _derive_seed(seed, 5, t))
                else:
                    selected = coreset_select(trace.features, lab_ids, step, pool.unlabeled)
                answers = annotate(selected)
                noisy = sum(1 for i, y in answers if y != truth[i])
                pool = apply_labels(pool, answers)
                pool.cycle = t + 1
        except NcalError as e:
            raise CycleError(t, e) from e

        rec = CycleRecord(t, schedule[t], test_acc, float(trace.train_acc[-1]), trace.tpt_start,
                          trace.tpt_end, report, [int(i) for i in selected], noisy)
        log.info("strategy=%s seed=%d cycle=%d labeled=%d acc=%.4f", strategy, seed, t,
                 rec.labeled_count, test_acc)
        records.append(rec)
    return records


def run_experiment(config: ProtocolConfig, strategies: Sequence[str] | None = None,
                   seeds: Sequence[int] | None = None, threads: int = 1,
                   on_result: Callable | None = None) -> dict:
    """Every (strategy, seed) pair; the dataset for a seed is shared by all strategies."""
    strategies = list(strategies or [config.strategy])
    seeds = list(seeds if seeds is not None else config.seeds)
    out = {}
    for seed in seeds:
        data = build_dataset(config, seed)
        for s in strategies:
            hook = None
            if on_result is not None:
                def hook(t, result, s=s, seed=seed):
                    on_result(s, seed, t, result)
            out[(s, seed)] = run_protocol(config, seed, s, data, threads, hook)
    return dict(sorted(out.items()))


def summarize(results: Mapping) -> dict:
    """Per-strategy mean/std of final-budget test accuracy and total noisy selections."""
    by_strategy: dict[str, list] = {}
    for (strategy, seed), records in results.items():
        by_strategy.setdefault(strategy, []).append(records)
    summary = {}
    for strategy, runs in sorted(by_strategy.items()):
        final = np.array([r[-1].test_accuracy for r in runs])
        curve = np.array([[rec.test_accuracy for rec in r] for r in runs]).mean(axis=0)
        summary[strategy] = {
            "runs": len(runs),
            "final_accuracy_mean": float(final.mean()),
            "final_accuracy_std": float(final.std()),
            "accuracy_curve": curve.tolist(),
            "labeled_counts": [rec.labeled_count for rec in runs[0]],
            "noisy_selected_total": int(sum(rec.noisy_selected for r in runs for rec in r)),
        }
    return summary
