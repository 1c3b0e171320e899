import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dense_model
from lowrank_lab.analysis import (bellman_error_matrix, coverage_ratio, elliptical_potential_check, lemma1_check,
                                  max_expected_sq_tv, simulation_gap, sys_id_error, sys_id_report, theory_constants)
from lowrank_lab.envs import GenSpec, gen_hypothesis_family, gen_rank2_separation, gen_simplex_mdp
from lowrank_lab.errors import DimensionMismatch, MissingLatentRep, NotPSD
from lowrank_lab.flambe import run_flambe
from lowrank_lab.mdp import (FactoredLevel, LatentRepresentation, LowRankMDP, PrefixThenUniform, TabularPolicy,
                             enumerate_deterministic_policies, occupancy, random_tabular_policy, state_distribution,
                             tv_rows)
from lowrank_lab.suites import random_bellman_matrix, random_rank1_sequence, suite_envs


@pytest.fixture(scope="module")
def learned_pair():
    env = gen_simplex_mdp(GenSpec(kind="simplex", N=8, K=2, Z=3, H=3, eta_target=0.2), np.random.default_rng(31))
    fam = gen_hypothesis_family(env, 6, 6, np.random.default_rng(32))
    # small n so the learned model is imperfect and the checks are non-vacuous
    run = run_flambe(env, fam, "simplex", None, 60, np.random.default_rng(33))
    return env, run.learned


def perturbed(model, rng, scale=0.3):
    levels = []
    for lvl in model.levels:
        P = lvl.pmf * (1 - scale) + scale * rng.dirichlet(np.ones(model.N), size=(model.N, model.K))
        levels.append(FactoredLevel(P, np.eye(model.N)))
    return LowRankMDP(tuple(levels), model.start_state)


# sys-id ------------------------------------------------------------------------

def test_sysid_zero_for_identical(simplex_env):
    assert all(sys_id_error(simplex_env, simplex_env, h)[0] == 0 for h in range(simplex_env.H))


def test_sysid_single_pair():
    a = LowRankMDP((FactoredLevel(np.ones((2, 1, 1)), np.array([[0.3], [0.7]])),))
    b = LowRankMDP((FactoredLevel(np.ones((2, 1, 1)), np.array([[0.6], [0.4]])),))
    assert math.isclose(sys_id_error(a, b, 0)[0], 0.3)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=10, deadline=None)
def test_sysid_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    env = random_dense_model(rng, N=3, K=2, H=2)
    learned = perturbed(env, rng)
    for h in range(2):
        tv = tv_rows(learned.P[h], env.P[h])
        brute = max((occupancy(env, p, h) * tv).sum() for p in enumerate_deterministic_policies(2, 3, 2))
        assert abs(sys_id_error(env, learned, h)[0] - brute) <= 1e-12


def test_sysid_shape_mismatch(simplex_env, tiny_model):
    with pytest.raises(DimensionMismatch):
        sys_id_error(simplex_env, tiny_model, 0)


def test_sysid_report_worst_dominates(rng):
    env = random_dense_model(rng, N=4, K=2, H=3)
    rep = sys_id_report(env, perturbed(env, rng), rng)
    assert all(w >= m - 1e-12 for w, m in zip(rep.worst, rep.random_mean))


def test_sysid_zero_iff_reachable_rows_match(rng):
    env = random_dense_model(rng, N=3, K=2, H=2)
    # state 2 unreachable at level 1 when both actions lead only to states 0 and 1
    P0 = env.levels[0].pmf.copy()
    P0[:, :, 2] = 0
    P0 /= P0.sum(-1, keepdims=True)
    env = LowRankMDP((FactoredLevel(P0, np.eye(3)), env.levels[1]))
    P1 = env.levels[1].pmf.copy()
    P1[2] = np.roll(P1[2], 1, axis=-1)
    learned = LowRankMDP((env.levels[0], FactoredLevel(P1, np.eye(3))))
    assert sys_id_error(env, learned, 1)[0] == 0
    P1[1] = np.roll(P1[1], 1, axis=-1)
    learned = LowRankMDP((env.levels[0], FactoredLevel(P1, np.eye(3))))
    assert sys_id_error(env, learned, 1)[0] > 0


# coverage ------------------------------------------------------------------------

def _two_latent_env(sym=True):
    # start state, two actions; latent z = action; emissions onto two states
    psi0 = np.zeros((2, 2, 2))
    psi0[:, 0, 0] = psi0[:, 1, 1] = 1.0
    nu = np.eye(2)
    rep0 = LatentRepresentation(psi0, nu)
    psi1 = np.full((2, 2, 2), 0.5)
    rep1 = LatentRepresentation(psi1, nu)
    return LowRankMDP((rep0.as_level(), rep1.as_level()), 0, (rep0, rep1))


def test_coverage_maximizer_ratio_one():
    env = _two_latent_env()
    pi = TabularPolicy.deterministic(np.zeros((2, 2), int), 2)
    kappa, rows = coverage_ratio(env, None, pi, 1)
    assert rows[0]["ratio"] == 1.0 and math.isinf(rows[1]["ratio"]) and math.isinf(kappa)


def test_coverage_uniform_symmetric():
    env = _two_latent_env()
    kappa, _ = coverage_ratio(env, None, PrefixThenUniform(None, 0), 1)
    assert kappa == 2.0
    kappa2, rows = coverage_ratio(env, None, PrefixThenUniform(None, 0), 2)
    assert all(r["ratio"] == 1.0 for r in rows) and kappa2 == 1.0


def test_coverage_at_least_one(simplex_env, rng):
    for _ in range(10):
        pi = random_tabular_policy(3, simplex_env.N, simplex_env.K, rng)
        for h in (1, 2, 3):
            assert coverage_ratio(simplex_env, None, pi, h)[0] >= 1.0


def test_coverage_requires_latents(tiny_model):
    with pytest.raises(MissingLatentRep):
        coverage_ratio(tiny_model, None, PrefixThenUniform(None, 0), 1)


# simulation lemma --------------------------------------------------------------

def test_simulation_gap_trivial_cases(learned_pair, rng):
    env, learned = learned_pair
    pi = random_tabular_policy(3, env.N, env.K, rng)
    assert simulation_gap(env, env, rng.random(env.N), pi, 2).gap == 0
    assert simulation_gap(env, learned, np.full(env.N, 0.4), pi, 3).gap <= 1e-15


def test_simulation_lemma_random(learned_pair, rng):
    env, learned = learned_pair
    for _ in range(100):
        h = int(rng.integers(1, 4))
        res = simulation_gap(env, learned, rng.random(env.N), random_tabular_policy(3, env.N, env.K, rng), h)
        assert res.holds


def test_eps_tv_matches_enumeration(rng):
    env = random_dense_model(rng, N=3, K=2, H=2)
    learned = perturbed(env, rng)
    tv2 = tv_rows(learned.P[1], env.P[1]) ** 2
    brute = max((occupancy(env, p, 1) * tv2).sum() for p in enumerate_deterministic_policies(2, 3, 2))
    assert abs(max_expected_sq_tv(env, learned, 1) - brute) <= 1e-12


# Bellman rank ------------------------------------------------------------------

def test_bellman_zero():
    env = gen_rank2_separation(4)
    pols = [TabularPolicy.uniform(1, 4, 2)]
    res = bellman_error_matrix(env, pols, [(np.zeros(4), np.full((4, 2), 0.5))], np.zeros((1, 4, 2)), 0)
    assert res.rank == 0 and not res.matrix.any()


def test_bellman_rank2_separation(rng):
    env = gen_rank2_separation(6)
    res = random_bellman_matrix(env, rng, 0, size=5)
    assert res.matrix.shape == (5, 5) and res.rank <= 2


def test_bellman_entry_matches_direct(rng):
    env = random_dense_model(rng, N=3, K=2, H=2)
    pi = random_tabular_policy(2, 3, 2, rng)
    g = rng.random((2, 3))
    step = rng.dirichlet(np.ones(2), size=3)
    R = rng.random((2, 3, 2))
    res = bellman_error_matrix(env, [pi], [(g, step)], R, 1)
    # direct: roll in with pi to x_1, then act with step
    dist = state_distribution(env, pi, 1)
    direct = sum(dist[s] * step[s, a] * (g[0, s] - R[1, s, a] - env.P[1, s, a] @ g[1])
                 for s in range(3) for a in range(2))
    assert abs(res.matrix[0, 0] - direct) <= 1e-12


def test_bellman_rank_suite():
    rng = np.random.default_rng(5)
    for env in suite_envs(rng, 9):
        res = random_bellman_matrix(env, rng, env.H - 1)
        assert res.rank <= env.d


# elliptical potential ------------------------------------------------------------

def test_potential_scalar_harmonic():
    T = 200
    res = elliptical_potential_check([np.eye(1)] * T)
    assert abs(res.total - sum(1 / t for t in range(1, T + 1))) <= 1e-9 and res.holds


def test_potential_scaled_identity():
    d, T = 4, 100
    res = elliptical_potential_check([np.eye(d) / d] * T)
    direct = sum(1 / (1 + (t - 1) / d) for t in range(1, T + 1))
    assert abs(res.total - direct) <= 1e-9 and res.holds


def test_potential_random(rng):
    assert all(elliptical_potential_check(random_rank1_sequence(5, 200, rng)).holds for _ in range(20))


def test_potential_rejects_non_psd():
    with pytest.raises(NotPSD):
        elliptical_potential_check([np.diag([0.5, -0.1])])


# theory constants --------------------------------------------------------------

def test_theory_constants_formula():
    tc = theory_constants(0.2, 3, 2, 3, 64, 1000, 0.05, planner_T=10, alpha=2.0, kappa=4.0)
    assert abs(tc.eps_sup - 0.01431) < 1e-5
    assert tc.eps_tv == tc.kappa * 2 * tc.eps_sup
    assert math.isclose(tc.beta, 0.04 / 27)
    assert set(tc.requirements) == {"planner_term", "coverage_term", "estimation_term"}


# Lemma 1 ----------------------------------------------------------------------

def test_lemma1_identical(simplex_env, rng):
    assert lemma1_check(simplex_env, simplex_env, rng.random(simplex_env.N), 1).worst <= 1e-12


def test_lemma1_constant_V(learned_pair):
    env, learned = learned_pair
    res = lemma1_check(env, learned, np.ones(env.N), 1)
    pointwise = np.abs(learned.levels[1].phi @ res.theta - 1)
    raw_tv = 0.5 * np.abs(learned.levels[1].raw - env.P[1]).sum(-1)
    assert np.all(pointwise <= raw_tv + 1e-12)


def test_lemma1_random(learned_pair, rng):
    env, learned = learned_pair
    for _ in range(50):
        assert lemma1_check(env, learned, rng.random(env.N), int(rng.integers(0, 3))).holds
