import math

import numpy as np
import pytest

from lowrank_lab.envs import GenSpec, gen_rotated_lowrank, gen_simplex_mdp
from lowrank_lab.errors import InsufficientData, NotSimplex
from lowrank_lab.mdp import (FactoredLevel, LowRankMDP, PrefixThenUniform, TabularPolicy, best_policy_for_reward,
                             enumerate_deterministic_policies, occupancy, policy_value, terminal_reward)
from lowrank_lab.planners import (FqiConfig, elliptical_cap, elliptical_planner, feature_covariance, linear_fqi,
                                  real_world_planner, sampled_elliptical_planner, simplex_planner)


def brute_max_quadratic(model, A):
    """max over deterministic policies of E[phi^T A phi] at the last level."""
    phi = model.levels[-1].phi
    q = np.einsum("sai,ij,saj->sa", phi, A, phi)
    return max((occupancy(model, p, model.H - 1) * q).sum()
               for p in enumerate_deterministic_policies(model.H, model.N, model.K))


def small_rotated(seed, N=3, K=2, Z=2, H=2):
    spec = GenSpec(kind="rotated", N=N, K=K, Z=Z, H=H, eta_target=0.2)
    return gen_rotated_lowrank(spec, np.random.default_rng(seed))


def coverage_rhos(env):
    """rho_h from the simplex planner on the true prefix of h levels."""
    return [None] + [simplex_planner(env.truncate(h)).policy for h in range(1, env.H)]


# elliptical ------------------------------------------------------------------

def test_cap_formula():
    assert abs(elliptical_cap(2, 0.1) - 4 * 2 * math.log(41) / 0.1) < 1e-12
    assert math.floor(elliptical_cap(2, 0.1)) == 297


def test_single_direction_hand_run():
    # phi = e_1 everywhere: objective 1, then 1/2 after one covariance update
    m = LowRankMDP((FactoredLevel(np.array([[[1.0, 0.0]]]), np.array([[1.0, 0.0]])),))
    res = elliptical_planner(m, 0.6)
    assert res.T == 1 and [r["objective"] for r in res.trace] == [1.0]
    np.testing.assert_allclose(res.sigma, [[1, 0], [0, 0]])


@pytest.mark.parametrize("seed", range(5))
def test_postcondition_and_potential(seed):
    m = small_rotated(seed)
    beta = 0.05
    res = elliptical_planner(m, beta)
    assert 1 <= res.T <= elliptical_cap(m.d, beta)
    A = np.linalg.inv(res.sigma + np.eye(m.d) / res.T)
    assert brute_max_quadratic(m, A) <= res.T * beta + 1e-9
    assert res.trace[-1]["trace_term"] <= 2 * m.d * math.log(1 + res.T / m.d) + 1e-9
    # accumulator I + sum of covariances stays PD with eigenvalues >= 1
    S = np.eye(m.d)
    for p in res.policies:
        S = S + feature_covariance(m, p)
        assert np.allclose(S, S.T) and np.linalg.eigvalsh(S).min() >= 1 - 1e-9


def test_argmax_matches_enumeration():
    m = small_rotated(11)
    from lowrank_lab.planners import max_quadratic_form

    A = np.linalg.inv(np.eye(m.d) + 0.3 * np.ones((m.d, m.d)))
    _, v = max_quadratic_form(m, A)
    assert abs(v - brute_max_quadratic(m, A)) <= 1e-12


def test_degenerate_halt():
    m = small_rotated(1)
    res = elliptical_planner(m, beta=float(m.d) + 1)
    assert res.degenerate and res.T == 0
    assert np.all(res.policy.probs == 1 / m.K)


# sampled elliptical -----------------------------------------------------------

def test_sampled_matches_exact_at_large_n():
    m = small_rotated(3, N=3, K=2, Z=2, H=1)
    exact = elliptical_planner(m, 0.2)
    samp = sampled_elliptical_planner(m, 0.2, 100_000, np.random.default_rng(0))
    assert samp.T == exact.T
    for a, b in zip(samp.policies, exact.policies):
        np.testing.assert_array_equal(a.probs, b.probs)


def test_sampled_gap_shrinks():
    m = small_rotated(4, N=4, K=2, Z=2, H=2)
    med = []
    for n_est in (100, 1000, 10_000):
        gaps = [sampled_elliptical_planner(m, 0.2, n_est, np.random.default_rng(s)).op_gap for s in range(20)]
        med.append(np.median(gaps))
    assert med[0] >= med[1] >= med[2]


def test_sampled_degenerate():
    m = small_rotated(5)
    res = sampled_elliptical_planner(m, float(m.d) + 1, 100, np.random.default_rng(0))
    assert res.degenerate and res.op_gap == 0.0


# simplex planner --------------------------------------------------------------

def test_simplex_bandit():
    Z = 3
    phi = np.eye(Z)[None]  # one state, action i has phi = e_i
    m = LowRankMDP((FactoredLevel(phi, np.ones((1, Z))),))
    res = simplex_planner(m)
    for i, p in enumerate(res.policies):
        assert p.probs[0, 0, i] == 1
    np.testing.assert_allclose(np.einsum("sa,saz->z", occupancy(m, res.policy, 0), phi), 1 / Z)


@pytest.mark.parametrize("seed", range(5))
def test_simplex_guarantee(seed):
    env = gen_simplex_mdp(GenSpec(kind="simplex", N=3, K=2, Z=3, H=2, eta_target=0.1), np.random.default_rng(seed))
    res = simplex_planner(env)
    phi = env.levels[-1].phi
    got = np.einsum("sa,saz->z", occupancy(env, res.policy, env.H - 1), phi)
    for i in range(3):
        best = max((occupancy(env, p, env.H - 1) * phi[:, :, i]).sum()
                   for p in enumerate_deterministic_policies(env.H, env.N, env.K))
        assert best - 3 * got[i] <= 1e-9


def test_simplex_single_coordinate():
    m = LowRankMDP((FactoredLevel(np.ones((2, 2, 1)), np.full((2, 1), 0.5)),))
    res = simplex_planner(m)
    assert res.T == 1 and len(res.policies) == 1


def test_simplex_rejects_negative():
    with pytest.raises(NotSimplex):
        simplex_planner(small_rotated(2))


# linear FQI -----------------------------------------------------------------

@pytest.fixture(scope="module")
def fqi_env():
    return gen_simplex_mdp(GenSpec(kind="simplex", N=10, K=2, Z=3, H=3, eta_target=0.2), np.random.default_rng(21))


def test_fqi_zero_reward(fqi_env):
    phis = [l.phi for l in fqi_env.levels]
    res = linear_fqi(fqi_env, coverage_rhos(fqi_env), phis, np.zeros((3, 10, 2)), FqiConfig(n=500),
                     np.random.default_rng(0))
    assert all(np.linalg.norm(t) <= 1e-6 for t in res.thetas)
    assert policy_value(fqi_env, res.policy, np.zeros((3, 10, 2))) == 0


def test_fqi_bandit():
    rng = np.random.default_rng(1)
    phi = rng.dirichlet(np.ones(2), size=(1, 3))
    mu = rng.dirichlet(np.ones(1), size=(1, 2)).reshape(1, 2)
    m = LowRankMDP((FactoredLevel(phi, mu),))
    R = np.array([[[0.1, 0.7, 0.4]]])
    res = linear_fqi(m, [None], [phi], R, FqiConfig(n=10_000), rng)
    assert best_policy_for_reward(m, R)[1] - policy_value(m, res.policy, R) <= 0.05


def test_fqi_suboptimality_and_theta_bound(fqi_env):
    rng = np.random.default_rng(2)
    phis = [l.phi for l in fqi_env.levels]
    R = rng.random((3, 10, 2))
    res = linear_fqi(fqi_env, coverage_rhos(fqi_env), phis, R, FqiConfig(n=10_000), rng)
    assert best_policy_for_reward(fqi_env, R)[1] - policy_value(fqi_env, res.policy, R) <= 0.05
    assert all(np.linalg.norm(t) <= 3 * math.sqrt(3) + 1e-9 for t in res.thetas)


def test_fqi_projection_radius(fqi_env):
    phis = [l.phi for l in fqi_env.levels]
    R = np.ones((3, 10, 2))
    res = linear_fqi(fqi_env, coverage_rhos(fqi_env), phis, R, FqiConfig(n=200, theta_bound=0.5),
                     np.random.default_rng(3))
    assert all(np.linalg.norm(t) <= 0.5 + 1e-12 for t in res.thetas)


def test_fqi_validation(fqi_env):
    phis = [l.phi for l in fqi_env.levels]
    with pytest.raises(ValueError):
        linear_fqi(fqi_env, coverage_rhos(fqi_env), phis, 2 * np.ones((3, 10, 2)), FqiConfig(n=10),
                   np.random.default_rng(0))
    with pytest.raises(ValueError):
        FqiConfig(n=0)
    cfg = FqiConfig(n=10)
    cfg.n = 0
    with pytest.raises(InsufficientData):
        linear_fqi(fqi_env, coverage_rhos(fqi_env), phis, np.zeros((3, 10, 2)), cfg, np.random.default_rng(0))


# real-world planner ------------------------------------------------------------

def test_real_world_single_coordinate(fqi_env):
    phi = np.ones((10, 2, 1))
    res, used = real_world_planner(fqi_env, [None], [phi], 1, FqiConfig(n=100), np.random.default_rng(0))
    assert res.T == 1 and used == 100


def test_real_world_deterministic_toy():
    # 2 states, action a sends any state to state a; terminal features pick (state, action)
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1
    P[:, 1, 1] = 1
    lvl0 = FactoredLevel(P, np.eye(2))
    # coordinate 0 only at (state 0, action 1); coordinate 1 elsewhere
    phi1 = np.zeros((2, 2, 2))
    phi1[:, :, 1] = 1
    phi1[0, 1] = [1.0, 0.0]
    lvl1 = FactoredLevel(phi1, np.full((2, 2), 0.5))
    env = LowRankMDP((lvl0, lvl1))
    rhos = [None, TabularPolicy.uniform(1, 2, 2)]
    res, _ = real_world_planner(env, rhos, [np.eye(2)[None].repeat(2, 0), phi1], 2, FqiConfig(n=2000),
                                np.random.default_rng(0))
    for i, pi in enumerate(res.policies):
        best = max((occupancy(env, p, 1) * phi1[:, :, i]).sum() for p in enumerate_deterministic_policies(2, 2, 2))
        assert abs((occupancy(env, pi, 1) * phi1[:, :, i]).sum() - best) <= 1e-12


def test_real_world_mixture_coverage(fqi_env):
    rhos = coverage_rhos(fqi_env)
    phis = [l.phi for l in fqi_env.levels]
    res, _ = real_world_planner(fqi_env, rhos, phis, 3, FqiConfig(n=10_000), np.random.default_rng(4))
    phi = phis[-1]
    got = np.einsum("sa,saz->z", occupancy(fqi_env, res.policy, 2), phi)
    for i in range(3):
        best = best_policy_for_reward(fqi_env, terminal_reward(3, phi[:, :, i]))[1]
        assert got[i] >= (best - 0.1) / 3
