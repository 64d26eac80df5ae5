import math
import time

import numpy as np
import pytest

from logsob.geometry import GeometryCache
from logsob.mesh import circle, clifford_torus4, sphere2, torus3

_START = pytest.StashKey[float]()
_VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def circle_unit():
    return GeometryCache(circle(1.0, 64))


@pytest.fixture(scope="session")
def circle_shrinker():
    return GeometryCache(circle(math.sqrt(2), 1024))


@pytest.fixture(scope="session")
def sphere_coarse():
    return GeometryCache(sphere2(1.0, 162))


@pytest.fixture(scope="session")
def sphere_shrinker():
    return GeometryCache(sphere2(2.0, 2562))


@pytest.fixture(scope="session")
def sphere_shrinker_642():
    return GeometryCache(sphere2(2.0, 642))


@pytest.fixture(scope="session")
def torus():
    return GeometryCache(torus3(2.0, 1.0, (48, 24)))


@pytest.fixture(scope="session")
def clifford():
    return GeometryCache(clifford_torus4(resolution=(48, 48)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_positive(X, rng, terms=3, amplitude=0.5):
    """A random smooth positive function of the ambient coordinates."""
    out = np.zeros(len(X))
    for _ in range(terms):
        k = rng.normal(size=X.shape[1])
        out += amplitude * rng.uniform() * np.cos(X @ k + rng.uniform(0, 2 * np.pi))
    return rng.uniform(0.5, 2.0) * np.exp(out)


# ----------------------------------------------------------------------
# acceptance reporting: acceptance items run last so the final criterion can
# time the whole session, and every verdict is echoed in the terminal summary

def pytest_sessionstart(session):
    session.config.stash[_START] = time.perf_counter()
    session.config.stash[_VERDICTS] = []


def pytest_collection_modifyitems(config, items):
    items.sort(key=lambda item: item.module.__name__.endswith("test_acceptance"))


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, [])
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line, then fail the test if the criterion failed."""
    config = request.config

    def record(number, checks, detail=""):
        failed = [name for name, ok in checks.items() if not ok]
        line = f"{'PASS' if not failed else 'FAIL'} criterion {number:>2}: {detail}"
        if failed:
            line += f" [failed: {', '.join(failed)}]"
        config.stash[_VERDICTS].append(line)
        print(line)
        assert not failed, line

    return record


@pytest.fixture
def session_elapsed(request):
    start = request.config.stash[_START]
    return lambda: time.perf_counter() - start
