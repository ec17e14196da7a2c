"""Regenerate tests/fixtures: a small feature dump, prediction log and golden top ids.

The golden ranking is computed with the brute-force alignment recomputation,
a plain-Python flip counter and statistics.pstdev, never the vectorised scorer.
"""
import statistics
from pathlib import Path

import numpy as np

from ncal.acquisition import CheckpointPredictions, cmap_bruteforce
from ncal.io import read_feature_dump, write_feature_dump, write_prediction_log
from ncal.pool import FeatureMatrix, PoolState
from ncal.toy import BlobSpec, generate_blobs

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def build(seed=11):
    rng = np.random.default_rng(seed)
    ds = generate_blobs(BlobSpec.balanced(3, 20, 6, 3.0, 1.0, seed))
    ids = np.arange(100, 160)
    fm = FeatureMatrix(ds.features.features, ids)
    labeled = rng.choice(60, size=15, replace=False)
    labels = np.full(60, -1)
    labels[labeled] = ds.labels[labeled]
    unl = np.flatnonzero(labels < 0)
    epochs = np.arange(10, 16)
    preds = np.repeat(ds.labels[unl][:, None], len(epochs), axis=1)
    flip = rng.random(preds.shape) < 0.2
    preds = np.where(flip, rng.integers(0, 3, preds.shape), preds)
    return fm, labels, CheckpointPredictions(epochs, ids[unl], preds)


def golden(fm, labels, preds):
    pool = PoolState.initial(3, {int(s): int(y) for s, y in zip(fm.sample_ids, labels) if y >= 0},
                             [int(s) for s, y in zip(fm.sample_ids, labels) if y < 0])
    rows = {int(s): i for i, s in enumerate(preds.sample_ids)}
    cand = sorted(pool.unlabeled)
    cmap, ff = [], []
    for sid in cand:
        seq = preds.labels[rows[sid]].tolist()
        ff.append(sum(1 for a, b in zip(seq, seq[1:]) if a != b))
        cmap.append(cmap_bruteforce(fm, pool, seq[-1], fm.take([sid])[0]))

    def std(v):
        m, s = statistics.fmean(v), statistics.pstdev(v)
        return [(x - m) / s if s > 1e-12 else 0.0 for x in v]

    score = [(a + b) / 2 for a, b in zip(std(cmap), std(ff))]
    return [sid for _, sid in sorted(zip((-s for s in score), cand))]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    fm, labels, preds = build()
    dump = OUT / "score_fixture.ncf"
    write_feature_dump(dump, fm, labels)
    write_prediction_log(OUT / "score_fixture_preds.csv", preds)
    fm32, labels32 = read_feature_dump(dump)
    order = golden(fm32, labels32, preds)
    (OUT / "score_fixture_golden.txt").write_text("".join(f"{i}\n" for i in order[:5]))
    print("golden top-5:", order[:5])


if __name__ == "__main__":
    main()
