import numpy as np
import pytest

from rarma2d.model import ModelSpec
from rarma2d.simulation import SCENARIOS


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["rarma10", "rarma11"])
def scenario(request):
    return SCENARIOS[request.param]


@pytest.fixture
def spec11():
    return ModelSpec(1, 1)


@pytest.fixture
def gamma11():
    return SCENARIOS["rarma11"].gamma_true


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, and return the flag for asserting."""

    def record(number, ok, detail):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number}: {status} | {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mc_rarma10_80():
    """1000 replications of scenario (i) at 80x80, shared by several studies."""
    import dataclasses

    from rarma2d.simulation import run_monte_carlo

    sc = dataclasses.replace(SCENARIOS["rarma10"], sizes=((80, 80),), replications=1000, seed=80)
    return run_monte_carlo(sc).by_size[0]
