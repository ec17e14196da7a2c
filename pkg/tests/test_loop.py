import itertools
import math

import numpy as np
import pytest

from ncal.errors import BudgetExceedsPool, CycleError, DivergedTraining, InvalidSpec
from ncal.loop import (ProtocolConfig, build_dataset, coreset_select, longtail_counts,
                       make_longtail, oracle_label, random_select, run_experiment, run_protocol,
                       summarize)
from ncal.pool import FeatureMatrix

SMALL = dict(num_classes=4, per_class=100, dim=6, separation=3.0, epochs=15, hidden=16)


def test_oracle_label_noise_free():
    assert all(oracle_label(i, i % 5, 5, 0.0, 3) == i % 5 for i in range(500))


def test_oracle_label_flip_rate_and_determinism():
    flips = [oracle_label(i, 2, 10, 0.2, 11) for i in range(10_000)]
    assert abs(np.mean([f != 2 for f in flips]) - 0.2) < 0.01
    assert flips == [oracle_label(i, 2, 10, 0.2, 11) for i in range(10_000)]
    wrong = [f for f in flips if f != 2]
    assert set(wrong) == set(range(10)) - {2}


def test_longtail_counts():
    assert longtail_counts(500, 10, 0.0) == [500] * 10
    counts = longtail_counts(1300, 100, 0.05)
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert sum(counts) == sum(max(1, round(1300 * math.exp(-0.05 * c))) for c in range(100))
    assert sum(counts) == 26476
    assert min(longtail_counts(10, 50, 1.0)) == 1


def test_make_longtail_sampling():
    labels = np.repeat(np.arange(5), 100)
    counts, rows = make_longtail(labels, 0.5, seed=0)
    assert counts == longtail_counts(100, 5, 0.5)
    assert np.bincount(labels[rows]).tolist() == counts
    assert len(set(rows.tolist())) == len(rows)
    c0, r0 = make_longtail(labels, 0.0, seed=0)
    assert c0 == [100] * 5 and r0.tolist() == list(range(500))
    assert make_longtail(labels, 0.5, seed=0)[1].tolist() == rows.tolist()


def test_coreset_picks_farthest_first():
    fm = FeatureMatrix.from_array([[0.0], [1.0], [5.0], [2.0]])
    assert coreset_select(fm, [0], 1) == [2]
    # then x=2.0 (distance 2 from 0) before x=1.0 (distance 1)
    assert coreset_select(fm, [0], 3) == [2, 3, 1]


def test_coreset_all_candidates(rng):
    fm = FeatureMatrix.from_array(rng.standard_normal((20, 3)))
    chosen = coreset_select(fm, [0, 1], 18)
    assert sorted(chosen) == list(range(2, 20))
    with pytest.raises(BudgetExceedsPool):
        coreset_select(fm, [0, 1], 19)


def test_coreset_two_approximation():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 2))
    fm = FeatureMatrix.from_array(x)
    d = np.linalg.norm(x[:, None] - x[None], axis=2)
    chosen = coreset_select(fm, [], 5)
    greedy_radius = d[:, chosen].min(axis=1).max()
    best = np.inf
    combos = np.array(list(itertools.combinations(range(50), 5)))
    for s in range(0, len(combos), 200_000):
        block = combos[s:s + 200_000]
        radius = d[:, block].min(axis=2).max(axis=0)
        best = min(best, radius.min())
    assert greedy_radius <= 2 * best + 1e-12


def test_random_select():
    ids = list(range(10, 30))
    assert sorted(random_select(ids, 20, 1)) == ids
    assert random_select(ids, 5, 3) == random_select(ids, 5, 3)
    freq = np.bincount([random_select(range(10), 1, s)[0] for s in range(10_000)], minlength=10)
    assert np.all(np.abs(freq / 10_000 - 0.1) < 0.01)
    with pytest.raises(BudgetExceedsPool):
        random_select(ids, 21, 0)


def test_config_validation():
    assert ProtocolConfig().n_cycles == 6
    assert ProtocolConfig().schedule(5000) == [500, 750, 1000, 1250, 1500, 1750, 2000]
    for bad in [dict(budget_fraction=0.42), dict(strategy="cdal"), dict(noise_rate=1.0),
                dict(initial_fraction=0.0), dict(longtail_beta=-1), dict(seeds=[])]:
        with pytest.raises(InvalidSpec):
            ProtocolConfig(**bad)
    with pytest.raises(InvalidSpec):
        ProtocolConfig.from_dict({"bogus": 1})
    cfg = ProtocolConfig(noise_rate=0.1)
    assert ProtocolConfig.from_dict(cfg.to_dict()) == cfg


def test_budget_equals_initial_gives_one_record():
    cfg = ProtocolConfig(budget_fraction=0.1, **SMALL)
    records = run_protocol(cfg, seed=0, strategy="random")
    assert len(records) == 1 and records[0].selected_ids == []


@pytest.mark.parametrize("strategy", ["ncal", "random", "coreset"])
def test_protocol_accounting(strategy):
    cfg = ProtocolConfig(noise_rate=0.2, **SMALL)
    records = run_protocol(cfg, seed=1, strategy=strategy)
    pool_ds, _ = build_dataset(cfg, 1)
    n = len(pool_ds.features.sample_ids)
    step = round(0.05 * n)
    assert len(records) == 7
    assert [r.labeled_count for r in records] == [round(0.1 * n) + t * step for t in range(7)]
    chosen = [i for r in records for i in r.selected_ids]
    assert len(chosen) == len(set(chosen)) == 6 * step
    truth = pool_ds.label_map()
    for r in records:
        recount = sum(oracle_label(i, truth[i], 4, 0.2, 1) != truth[i] for i in r.selected_ids)
        assert r.noisy_selected == recount


def test_protocol_deterministic_and_isolated():
    cfg = ProtocolConfig(**SMALL)
    a = run_experiment(cfg, ["ncal", "random"], seeds=[2])
    b = run_experiment(cfg, ["ncal", "random"], seeds=[2])
    assert a == b
    first = {s: a[(s, 2)][0] for s in ("ncal", "random")}
    # cycle 0 trains on the same initial pool whatever the strategy
    assert first["ncal"].test_accuracy == first["random"].test_accuracy
    assert first["ncal"].collapse == first["random"].collapse
    summary = summarize(a)
    assert set(summary) == {"ncal", "random"}
    assert summary["ncal"]["labeled_counts"] == [r.labeled_count for r in a[("ncal", 2)]]


def test_longtail_pool_in_protocol():
    cfg = ProtocolConfig(longtail_beta=0.3, **SMALL)
    pool_ds, test_ds = build_dataset(cfg, 0)
    counts = np.bincount(pool_ds.labels).tolist()
    assert counts == longtail_counts(80, 4, 0.3)
    assert np.bincount(test_ds.labels).tolist() == [20] * 4


def test_errors_carry_cycle(monkeypatch):
    import ncal.loop

    real, calls = ncal.loop.train, []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise DivergedTraining("boom")
        return real(*args, **kwargs)

    monkeypatch.setattr(ncal.loop, "train", flaky)
    with pytest.raises(CycleError) as e:
        run_protocol(ProtocolConfig(**SMALL), seed=0, strategy="random")
    assert e.value.cycle == 1
