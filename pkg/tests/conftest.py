import numpy as np
import pytest

from lowrank_lab import seeding
from lowrank_lab.envs import GenSpec, gen_block_mdp, gen_simplex_mdp
from lowrank_lab.mdp import FactoredLevel, LowRankMDP


def random_dense_model(rng, N=3, K=2, H=2):
    """Arbitrary tabular model written as a trivial factorization (d = N)."""
    levels = []
    for _ in range(H):
        P = rng.dirichlet(np.ones(N), size=(N, K))
        levels.append(FactoredLevel(P, np.eye(N)))
    return LowRankMDP(tuple(levels), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_model(rng):
    return random_dense_model(rng)


@pytest.fixture(scope="session")
def simplex_env():
    spec = GenSpec(kind="simplex", N=10, K=2, Z=3, H=3, eta_target=0.2)
    return gen_simplex_mdp(spec, seeding.stream(0, "fixture:simplex"))


@pytest.fixture(scope="session")
def block_env():
    spec = GenSpec(kind="block", N=8, K=2, Z=2, H=2, eta_target=0.3)
    return gen_block_mdp(spec, seeding.stream(0, "fixture:block"))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
