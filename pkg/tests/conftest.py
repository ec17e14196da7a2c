import numpy as np
import pytest
from hypothesis import settings

from ncal.pool import FeatureMatrix, PoolState

settings.register_profile("ci", max_examples=200, deadline=None)
settings.register_profile("dev", max_examples=50, deadline=None)
settings.load_profile("dev")

ACCEPTANCE = []


def random_instance(rng, K=None, D=None, max_count=50):
    """Random labeled pool: K in [2,10], D in [2,64], per-class counts in [1, max_count]."""
    K = K or int(rng.integers(2, 11))
    D = D or int(rng.integers(2, 65))
    counts = rng.integers(1, max_count + 1, size=K)
    x = rng.standard_normal((int(counts.sum()), D))
    labels = np.repeat(np.arange(K), counts)
    fm = FeatureMatrix.from_array(x)
    pool = PoolState.initial(K, dict(enumerate(labels.tolist())), [])
    return fm, pool


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (ok, detail) and it asserts."""
    name = request.node.name

    def record(ok, detail=""):
        ACCEPTANCE.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
