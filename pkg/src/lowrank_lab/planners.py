"""Exploratory planners on low-rank models.

The model passed to a planner is a prefix ``(phi_0..phi_L-1, mu_0..mu_L-1)``:
dynamics of levels ``0..L-2`` move the agent, and the features of the last
level ``phi_{L-1}(x_{L-1}, a_{L-1})`` are what the planner tries to cover.
Returned policies act on levels ``0..L-1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, NonConvergence, NotSimplex
from .mdp import (LowRankMDP, MixturePolicy, Policy, PrefixThenUniform, TabularPolicy,
                  best_policy_for_reward, greedy_lowest, occupancy, sample_triples, terminal_reward)

SAMPLED_CAP_SLACK = 4.0


def elliptical_cap(d: int, beta: float) -> float:
    """Iteration cap ``4 d log(1 + 4/beta) / beta``."""
    return 4.0 * d * math.log(1.0 + 4.0 / beta) / beta


def feature_covariance(model: LowRankMDP, policy: Policy) -> np.ndarray:
    """Exact ``E[phi phi^T]`` at the last level under ``policy``."""
    L = model.H
    phi = model.levels[L - 1].phi
    occ = occupancy(model, policy, L - 1)
    return np.einsum("sa,sai,saj->ij", occ, phi, phi)


def max_quadratic_form(model: LowRankMDP, A: np.ndarray):
    """``max_pi E[phi^T A phi]`` at the last level by exact DP; ``A`` is PSD."""
    phi = model.levels[model.H - 1].phi
    q = np.einsum("sai,ij,saj->sa", phi, A, phi)
    scale = float(np.linalg.eigvalsh(A).max()) * float((phi ** 2).sum(-1).max())
    scale = max(scale, q.max(), 1e-300)
    policy, value = best_policy_for_reward(model, terminal_reward(model.H, q / scale))
    return policy, value * scale


@dataclass
class PlannerResult:
    policy: Policy
    sigma: np.ndarray
    T: int
    policies: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    degenerate: bool = False
    op_gap: float | None = None

    TRACE_COLUMNS = ("t", "objective", "trace_term", "bound")


def _degenerate(model: LowRankMDP, d: int) -> PlannerResult:
    uniform = TabularPolicy.uniform(model.H, model.N, model.K)
    return PlannerResult(uniform, np.zeros((d, d)), 0, [], [], degenerate=True)


def elliptical_planner(model: LowRankMDP, beta: float) -> PlannerResult:
    """Covariance-driven coverage planner with exact expectations.

    Each round picks the policy maximizing ``E[phi^T Sigma^{-1} phi]`` and
    adds its feature covariance to ``Sigma``; it halts once that maximum is
    at most ``beta`` and returns the uniform mixture of the chosen policies.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = model.d
    cap = elliptical_cap(d, beta)
    sigma = np.eye(d)
    policies, covs, trace = [], [], []
    potential = 0.0
    while True:
        t = len(policies) + 1
        inv = np.linalg.inv(sigma)
        pi, objective = max_quadratic_form(model, inv)
        if objective <= beta:
            break
        if t > cap:
            raise NonConvergence(f"elliptical planner exceeded {cap:.1f} iterations")
        cov = feature_covariance(model, pi)
        potential += float(np.trace(cov @ inv))
        trace.append({"t": t, "objective": objective, "trace_term": potential,
                      "bound": 2 * d * math.log(1 + t / d)})
        sigma = sigma + cov
        policies.append(pi)
        covs.append(cov)
    if not policies:
        return _degenerate(model, d)
    T = len(policies)
    return PlannerResult(MixturePolicy.uniform(policies), sum(covs) / T, T, policies, trace)


def _estimate_covariance(model: LowRankMDP, policy: Policy, n_est: int, rng) -> tuple:
    L = model.H
    phi = model.levels[L - 1].phi
    x, a, _ = sample_triples(model, policy, L - 1, n_est, rng)
    feats = phi[x, a]
    return feats.T @ feats / n_est, feats


def sampled_elliptical_planner(model: LowRankMDP, beta: float, n_est: int, rng: np.random.Generator) -> PlannerResult:
    """Elliptical planner with covariances and halting values estimated by rollouts.

    The argmax step remains an exact DP against the estimated covariance.
    ``op_gap`` on the result is ``||Sigma_hat - (Sigma_rho + I/T)||_op``
    with ``Sigma_hat`` the averaged estimates plus ``I/T``.
    """
    if n_est < 1:
        raise ValueError("n_est must be at least 1")
    d = model.d
    cap = SAMPLED_CAP_SLACK * elliptical_cap(d, beta)
    sigma_hat = np.eye(d)
    policies, est, trace = [], [], []
    potential = 0.0
    while True:
        t = len(policies) + 1
        inv = np.linalg.inv(sigma_hat)
        pi, _ = max_quadratic_form(model, inv)
        cov_hat, feats = _estimate_covariance(model, pi, n_est, rng)
        v_hat = float(np.einsum("ni,ij,nj->n", feats, inv, feats).mean())
        if v_hat <= beta:
            break
        if t > cap:
            raise NonConvergence(f"sampled elliptical planner exceeded {cap:.1f} iterations")
        potential += float(np.trace(cov_hat @ inv))
        trace.append({"t": t, "objective": v_hat, "trace_term": potential, "bound": 2 * d * math.log(1 + t / d)})
        sigma_hat = sigma_hat + cov_hat
        policies.append(pi)
        est.append(cov_hat)
    if not policies:
        res = _degenerate(model, d)
        res.op_gap = 0.0
        return res
    T = len(policies)
    avg_hat = sum(est) / T
    exact = sum(feature_covariance(model, p) for p in policies) / T
    gap = float(np.linalg.norm(avg_hat - exact, 2))
    return PlannerResult(MixturePolicy.uniform(policies), avg_hat + np.eye(d) / T, T, policies, trace, op_gap=gap)


def simplex_planner(model: LowRankMDP, Z: int | None = None) -> PlannerResult:
    """One exactly optimal policy per coordinate of the last-level features."""
    phi = model.levels[model.H - 1].phi
    if phi.min() < -1e-12:
        raise NotSimplex("simplex planner needs nonnegative features")
    Z = phi.shape[2] if Z is None else Z
    if Z != phi.shape[2]:
        raise ValueError(f"Z={Z} disagrees with feature dimension {phi.shape[2]}")
    policies = [best_policy_for_reward(model, terminal_reward(model.H, np.clip(phi[:, :, i], 0, 1)))[0]
                for i in range(Z)]
    mix = MixturePolicy.uniform(policies)
    return PlannerResult(mix, feature_covariance(model, mix), Z, policies)


# ---------------------------------------------------------------------------
# planning in the environment


@dataclass
class FqiConfig:
    n: int = 10_000
    theta_bound: float | None = None  # default H * sqrt(d)
    clip_ceiling: float | None = None  # default H
    ridge: float = 1e-8

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass
class FqiResult:
    policy: TabularPolicy
    thetas: list
    samples: int


def training_policy(rho: Policy | None, h: int) -> PrefixThenUniform:
    """``rho`` on levels ``< h`` followed by uniform actions."""
    return PrefixThenUniform(rho, h)


def linear_fqi(env: LowRankMDP, rhos, phi_hats, rewards, config: FqiConfig, rng: np.random.Generator) -> FqiResult:
    """Least-squares fitted Q iteration on learned features, backward in h.

    ``rhos[h]`` drives the agent to level ``h``; the action at ``h`` is
    uniform. ``theta`` solves a ridge-regularized least squares and is
    radially projected onto the ball of radius ``H sqrt(d)``.
    """
    L = len(phi_hats)
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape[0] != L or len(rhos) < L:
        raise ValueError("need one reward table and one exploratory policy per level")
    if rewards.min() < 0 or rewards.max() > 1:
        raise ValueError("rewards must lie in [0, 1]")
    if config.n < 1:
        raise InsufficientData("linear FQI needs samples at every level")
    d = phi_hats[0].shape[2]
    bound = config.theta_bound if config.theta_bound is not None else L * math.sqrt(d)
    ceiling = config.clip_ceiling if config.clip_ceiling is not None else float(L)
    V_next = np.zeros(env.N)
    actions = np.zeros((L, env.N), dtype=int)
    thetas = [None] * L
    for h in range(L - 1, -1, -1):
        x, a, xp = sample_triples(env, training_policy(rhos[h], h), h, config.n, rng)
        X = phi_hats[h][x, a]
        y = V_next[xp]
        theta = np.linalg.solve(X.T @ X + config.ridge * np.eye(d), X.T @ y)
        norm = np.linalg.norm(theta)
        if norm > bound:
            theta = theta * (bound / norm)
        Q = rewards[h] + phi_hats[h] @ theta
        actions[h] = greedy_lowest(Q)
        V_next = np.minimum(Q.max(axis=1), ceiling)
        thetas[h] = theta
    return FqiResult(TabularPolicy.deterministic(actions, env.K), thetas, config.n * L)


def real_world_planner(env: LowRankMDP, rhos, phi_hats, Z: int, config: FqiConfig, rng: np.random.Generator):
    """One FQI run per coordinate of the last learned feature map.

    Returns ``(PlannerResult, samples_used)``.
    """
    last = phi_hats[-1]
    if last.min() < -1e-12:
        raise NotSimplex("real-world planner needs simplex features")
    L = len(phi_hats)
    policies, used = [], 0
    for i in range(Z):
        rewards = terminal_reward(L, np.clip(last[:, :, i], 0, 1))
        res = linear_fqi(env, rhos, phi_hats, rewards, config, rng)
        policies.append(res.policy)
        used += res.samples
    mix = MixturePolicy.uniform(policies)
    return PlannerResult(mix, np.zeros((last.shape[2],) * 2), Z, policies), used
