import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tuckeraa.tucker import TuckerTensor

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_orthonormal(n, r, rng):
    return np.linalg.qr(rng.standard_normal((n, r)))[0]


def random_tucker(shape, ranks, rng, spectrum=None):
    """Random Tucker tensor with exact multilinear rank ``ranks`` (generically)."""
    core = rng.standard_normal(tuple(ranks))
    factors = tuple(random_orthonormal(n, r, rng) for n, r in zip(shape, ranks))
    return TuckerTensor(core, factors)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(num, ok, detail)`` records one acceptance line and returns ``ok``."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(num, ok, detail):
        results[num] = (bool(ok), detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
