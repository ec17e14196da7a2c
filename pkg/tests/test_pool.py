import numpy as np
import pytest
from hypothesis import given, strategies as st

from ncal.errors import AlreadyLabeled, DataError, MissingSample, UnknownClass, ZeroNormMean
from ncal.pool import FeatureMatrix, PoolState, apply_label, apply_labels, compute_class_stats
from conftest import random_instance


def make_pool(labels, unlabeled=(), K=2):
    return PoolState.initial(K, labels, unlabeled)


def test_single_class_mean_and_unit_mean():
    fm = FeatureMatrix.from_array([[1.0, 0.0], [3.0, 0.0]])
    st_ = compute_class_stats(fm, make_pool({0: 0, 1: 0}))
    np.testing.assert_allclose(st_.means[0], [2.0, 0.0])
    np.testing.assert_allclose(st_.unit_means[0], [1.0, 0.0])
    assert st_.present_classes == {0}
    assert st_.counts.tolist() == [2, 0]


def test_m_sum_of_orthogonal_units():
    fm = FeatureMatrix.from_array([[1.0, 0.0], [0.0, 1.0]])
    st_ = compute_class_stats(fm, make_pool({0: 0, 1: 1}))
    np.testing.assert_allclose(st_.m_sum, [1.0, 1.0])


def test_means_match_per_coordinate_oracle(rng):
    x = rng.standard_normal((15, 4))
    labels = np.repeat([0, 1, 2], 5)
    fm = FeatureMatrix.from_array(x)
    st_ = compute_class_stats(fm, make_pool(dict(enumerate(labels.tolist())), K=3))
    for c in range(3):
        rows = [i for i in range(15) if labels[i] == c]
        oracle = [sum(x[i, d] for i in rows) / len(rows) for d in range(4)]
        np.testing.assert_allclose(st_.means[c], oracle, atol=1e-9)


def test_stats_invariants_on_random_instances(rng):
    for _ in range(20):
        fm, pool = random_instance(rng)
        st_ = compute_class_stats(fm, pool)
        for c in st_.present_classes:
            assert abs(np.linalg.norm(st_.unit_means[c]) - 1) < 1e-9
            members = fm.take(sorted(pool.labeled[c]))
            np.testing.assert_allclose(st_.means[c] * st_.counts[c], members.sum(0), atol=1e-6)
        np.testing.assert_allclose(st_.m_sum, st_.unit_means[st_.present].sum(0), atol=1e-9)


def test_stats_are_pure(rng):
    fm, pool = random_instance(rng)
    a, b = compute_class_stats(fm, pool), compute_class_stats(fm, pool)
    assert a.means.tobytes() == b.means.tobytes()
    assert a.m_sum.tobytes() == b.m_sum.tobytes()


def test_stats_promote_float32():
    fm = FeatureMatrix.from_array(np.array([[1, 2], [3, 4]], dtype=np.float32))
    st_ = compute_class_stats(fm, make_pool({0: 0, 1: 1}))
    assert st_.means.dtype == np.float64


def test_absent_class_excluded():
    fm = FeatureMatrix.from_array([[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    st_ = compute_class_stats(fm, make_pool({0: 0, 1: 1}, [2], K=3))
    assert st_.present_classes == {0, 1}
    assert not st_.means[2].any()


def test_zero_norm_mean():
    fm = FeatureMatrix.from_array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ZeroNormMean):
        compute_class_stats(fm, make_pool({0: 0, 1: 0, 2: 1}))


def test_missing_sample():
    fm = FeatureMatrix.from_array([[1.0, 0.0]])
    with pytest.raises(MissingSample):
        compute_class_stats(fm, make_pool({0: 0, 7: 1}))


def test_feature_matrix_validation():
    with pytest.raises(DataError):
        FeatureMatrix.from_array([[np.nan, 0.0]])
    with pytest.raises(DataError):
        FeatureMatrix([[0.0], [1.0]], [3, 3])


def test_incremental_mean_matches_recompute(rng):
    fm, pool = random_instance(rng, K=3, D=5)
    st_ = compute_class_stats(fm, pool)
    z = rng.standard_normal(5)
    big = FeatureMatrix(np.vstack([fm.features, z]), np.append(fm.sample_ids, 10_000))
    pool2 = pool.copy()
    pool2.labeled[1].add(10_000)
    n = st_.counts[1]
    incremental = (n * st_.means[1] + z) / (n + 1)
    np.testing.assert_allclose(incremental, compute_class_stats(big, pool2).means[1], atol=1e-9)


# --- apply_label -------------------------------------------------------------

def test_apply_label_moves_one_sample():
    pool = make_pool({0: 0}, [1, 2])
    new = apply_label(pool, 1, 1)
    assert len(new.unlabeled) == len(pool.unlabeled) - 1
    assert len(new.labeled[1]) == len(pool.labeled[1]) + 1
    assert new.cycle == pool.cycle
    assert 1 in pool.unlabeled  # original untouched


def test_label_everything():
    pool = make_pool({}, range(10), K=3)
    pool = apply_labels(pool, [(i, i % 3) for i in range(10)])
    assert not pool.unlabeled
    pool.check_partition(range(10))


def test_apply_label_errors():
    pool = make_pool({0: 0}, [1])
    with pytest.raises(AlreadyLabeled):
        apply_label(pool, 0, 1)
    with pytest.raises(UnknownClass):
        apply_label(pool, 1, 5)
    with pytest.raises(MissingSample):
        apply_label(pool, 99, 0)


@given(st.permutations(list(range(100))), st.integers(0, 2**32 - 1))
def test_label_order_independent(order, seed):
    classes = np.random.default_rng(seed).integers(0, 4, 100)
    base = make_pool({}, range(100), K=4)
    forward = apply_labels(base, [(i, int(classes[i])) for i in range(100)])
    shuffled = base
    for i in order:
        shuffled = apply_label(shuffled, i, int(classes[i]))
        shuffled.check_partition(range(100))
    assert forward.labeled == shuffled.labeled and forward.unlabeled == shuffled.unlabeled
