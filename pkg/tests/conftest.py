import numpy as np
import pytest

from irs_uplink.channel import RbmPhases, build_statistics
from irs_uplink.scenario import CorrelationModel, PhaseNoiseModel, Scenario

DESK_KAPPA = 0.126 ** 2


def small_scenario(M=4, N=4, K=2, seed=1, draws=2000, **kw) -> Scenario:
    """Fast scenario: fewer angle draws for the IRS correlation."""
    kw.setdefault("correlation", CorrelationModel(draws=draws))
    return Scenario.build(M=M, N=N, K=K, seed=seed, **kw)


def desk_scenario(**kw) -> Scenario:
    kw.setdefault("kappa_bs", DESK_KAPPA)
    kw.setdefault("kappa_ue", DESK_KAPPA)
    kw.setdefault("phase_noise", PhaseNoiseModel("vonmises", 2.0))
    return Scenario.build(M=8, N=16, K=3, seed=1, **kw)


@pytest.fixture(scope="session")
def desk():
    sc = desk_scenario()
    return sc, build_statistics(sc)


@pytest.fixture(scope="session")
def small():
    sc = small_scenario()
    return sc, build_statistics(sc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rbm(N, seed) -> RbmPhases:
    return RbmPhases.random(N, np.random.default_rng(seed))


def fd_wirtinger(f, z, h=1e-6):
    """``(1/2)(df/dRe z_n + j df/dIm z_n)`` by central differences."""
    out = np.zeros(z.size, dtype=complex)
    for n in range(z.size):
        dz = np.zeros_like(z)
        dz[n] = h
        dx = (f(z + dz) - f(z - dz)) / (2 * h)
        dy = (f(z + 1j * dz) - f(z - 1j * dz)) / (2 * h)
        out[n] = 0.5 * (dx + 1j * dy)
    return out


# -- acceptance report ------------------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(line: str) -> None:
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
