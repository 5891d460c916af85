import numpy as np
import pytest

from nrjump.targets.changepoint import ChangePointModel
from nrjump.targets.toy import ToyTarget, phi_pmf


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def coal():
    return ChangePointModel.coal()


@pytest.fixture
def toy():
    return ToyTarget(phi_pmf(2.0, 11), sigma=2.0)


@pytest.fixture
def synthetic_model():
    times = np.array([0.5, 1.0, 1.2, 2.0, 6.5, 7.0, 7.2, 9.9])
    return ChangePointModel(times, 10.0, lam=2.0, k_max=6, alpha=2.0, beta=1.5)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and echo it live."""
    lines = request.config.stash.setdefault(_VERDICTS, [])
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        with capman.global_and_fixture_disabled():
            print(f"\n{line}", flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
