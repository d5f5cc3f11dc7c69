import numpy as np
import pytest

from optionem.families import THETA_STAR, TabularFamily, TargetSeekingFamily
from optionem.model import Spaces, Theta
from optionem.oracle import random_instance
from optionem.simulator import make_rng


@pytest.fixture
def target():
    return TargetSeekingFamily()


@pytest.fixture
def theta_star():
    return Theta(*THETA_STAR)


def symmetric_tabular(n_states=3, n_actions=2, n_options=3, zeta=0.3):
    """pi_b = 1/2, uniform pi_hi, pi_lo independent of the option."""
    fam = TabularFamily(Spaces(n_states, n_actions, n_options), zeta=zeta)
    rng = np.random.default_rng(7)
    lo_s = rng.dirichlet(np.ones(n_actions), size=n_states)
    lo = np.repeat(lo_s[:, None, :], n_options, axis=1)
    theta = Theta(
        np.full((n_states, n_options), 1.0 / n_options),
        lo,
        np.full((n_states, n_options, 2), 0.5),
    )
    fam.check(theta)
    return fam, theta


@pytest.fixture(scope="session")
def instances():
    """The seeded 100-instance set shared by the oracle comparisons."""
    rng = make_rng(20240601)
    return [random_instance(rng) for _ in range(100)]


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """``acceptance(label, ok, detail)`` prints one verdict line and records it for the summary."""

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
