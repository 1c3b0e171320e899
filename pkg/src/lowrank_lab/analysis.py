"""Exact checkers for identification, coverage and the supporting lemmas.

Every "for all policies" statement is evaluated by backward DP on the
true environment, since each quantity is an expectation of a fixed
per-(state, action) reward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import _max_reach
from .errors import DimensionMismatch, MissingLatentRep, NotPSD
from .mdp import (LowRankMDP, Policy, bellman_backup_theta, best_policy_for_reward, occupancy,
                  random_tabular_policy, state_distribution, terminal_reward, tv_rows)

RANK_RTOL = 1e-8


def _check_shapes(env: LowRankMDP, learned: LowRankMDP) -> None:
    if (env.N, env.K) != (learned.N, learned.K):
        raise DimensionMismatch("environment and learned model disagree on N or K")


def max_expected(env: LowRankMDP, h: int, table: np.ndarray):
    """``max_pi E[table(x_h, a_h)]`` over policies in ``env``; table >= 0."""
    table = np.asarray(table, dtype=float)
    scale = max(float(table.max()), 1e-300)
    policy, value = best_policy_for_reward(env, terminal_reward(h + 1, table / scale))
    return value * scale, policy


def sys_id_error(env: LowRankMDP, learned: LowRankMDP, h: int):
    """Worst-case expected one-step TV error at level ``h``: ``(value, maximizing policy)``."""
    _check_shapes(env, learned)
    tv = tv_rows(learned.P[h], env.P[h])
    return max_expected(env, h, tv)


def max_expected_sq_tv(env: LowRankMDP, learned: LowRankMDP, h: int) -> float:
    return max_expected(env, h, tv_rows(learned.P[h], env.P[h]) ** 2)[0]


@dataclass
class SysIdReport:
    worst: list
    policies: list
    random_mean: list

    COLUMNS = ("level", "worst", "random_mean")

    def rows(self) -> list:
        return [{"level": h, "worst": w, "random_mean": m}
                for h, (w, m) in enumerate(zip(self.worst, self.random_mean))]


def sys_id_report(env: LowRankMDP, learned: LowRankMDP, rng: np.random.Generator, n_random: int = 100) -> SysIdReport:
    worst, pols, means = [], [], []
    randoms = [random_tabular_policy(env.H, env.N, env.K, rng) for _ in range(n_random)]
    for h in range(learned.H):
        w, p = sys_id_error(env, learned, h)
        tv = tv_rows(learned.P[h], env.P[h])
        means.append(float(np.mean([(occupancy(env, pi, h) * tv).sum() for pi in randoms])))
        worst.append(w)
        pols.append(p)
    return SysIdReport(worst, pols, means)


def coverage_ratio(env: LowRankMDP, latent_reps, rho: Policy, h: int):
    """Realized ``kappa`` for latent ``z_h`` (generated at level ``h-1``).

    Returns ``(kappa, rows)``; ``kappa`` is ``inf`` when some reachable
    latent gets zero probability under ``rho``.
    """
    reps = latent_reps if latent_reps is not None else env.latent
    if reps is None or len(reps) < h or reps[h - 1] is None:
        raise MissingLatentRep("coverage needs the latent representation of the previous level")
    if h < 1:
        raise ValueError("coverage is defined for h >= 1")
    psi = reps[h - 1].psi
    best = _max_reach(env.levels[:h - 1], env.start_state, psi)
    got = np.einsum("sa,saz->z", occupancy(env, rho, h - 1), psi)
    rows, kappa = [], 1.0
    for z in range(psi.shape[2]):
        if best[z] <= 0:
            ratio = float("nan")
        elif got[z] <= 0:
            ratio = float("inf")
        else:
            ratio = float(best[z] / got[z])
        rows.append({"z": z, "max_reach": float(best[z]), "rho_reach": float(got[z]), "ratio": ratio})
        if not math.isnan(ratio):
            kappa = max(kappa, ratio)
    return kappa, rows


@dataclass
class SimulationGap:
    gap: float
    bound: float
    eps_tv: float
    holds: bool


def simulation_gap(env: LowRankMDP, learned: LowRankMDP, f, policy: Policy, h: int,
                   eps_tv: float | None = None) -> SimulationGap:
    """Compare ``E[f(x_h)]`` in ``env`` and ``learned`` with ``h sqrt(eps_TV)``.

    ``eps_TV`` is the largest per-step expected squared TV over policies
    and levels ``< h``; pass it in to reuse a cached value.
    """
    _check_shapes(env, learned)
    f = np.asarray(f, dtype=float)
    if f.min() < 0 or f.max() > 1:
        raise ValueError("f must take values in [0, 1]")
    if eps_tv is None:
        eps_tv = max((max_expected_sq_tv(env, learned, k) for k in range(h)), default=0.0)
    gap = abs(float(state_distribution(env, policy, h) @ f) - float(state_distribution(learned, policy, h) @ f))
    bound = h * math.sqrt(eps_tv)
    return SimulationGap(gap, bound, eps_tv, gap <= bound + 1e-12)


@dataclass
class BellmanRank:
    matrix: np.ndarray
    singular_values: np.ndarray
    rank: int
    bound: int
    holds: bool


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL):
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    return int((sv > rtol * sv[0]).sum()), sv


def bellman_error_matrix(env: LowRankMDP, roll_in_policies, g_pi_pairs, reward, h: int) -> BellmanRank:
    """Average Bellman errors ``E[g(x_h) - R_h(x_h, a_h) - g(x_{h+1})]``.

    Rows index roll-in policies (which reach ``x_h``); columns index pairs
    ``(g, pi')`` where ``pi'`` is an ``(N, K)`` action table used at ``h``
    and ``g`` is either one ``(N,)`` table or a ``(2, N)`` pair of tables
    for ``x_h`` and ``x_{h+1}``.
    """
    if not roll_in_policies or not g_pi_pairs:
        raise ValueError("need at least one roll-in policy and one (g, pi') pair")
    reward = np.asarray(reward, dtype=float)
    R_h = reward[h] if reward.ndim == 3 else reward
    dists = np.array([state_distribution(env, pi, h) for pi in roll_in_policies])
    cols = []
    for g, pi_step in g_pi_pairs:
        g = np.asarray(g, dtype=float)
        g_now, g_next = (g, g) if g.ndim == 1 else (g[0], g[1])
        pi_step = np.asarray(pi_step, dtype=float)
        w = g_now - (pi_step * (R_h + env.P[h] @ g_next)).sum(axis=1)
        cols.append(w)
    M = dists @ np.array(cols).T
    rank, sv = numerical_rank(M)
    return BellmanRank(M, sv, rank, env.d, rank <= env.d)


@dataclass
class PotentialCheck:
    total: float
    bound: float
    holds: bool


def elliptical_potential_check(psd_sequence) -> PotentialCheck:
    """Run ``M_t = M_{t-1} + X_t`` from the identity and test the log-det bound."""
    seq = [np.asarray(X, dtype=float) for X in psd_sequence]
    if not seq:
        return PotentialCheck(0.0, 0.0, True)
    d = seq[0].shape[0]
    M = np.eye(d)
    total = 0.0
    for X in seq:
        if X.shape != (d, d) or not np.allclose(X, X.T, atol=1e-12):
            raise NotPSD("each X_t must be a symmetric d x d matrix")
        if np.linalg.eigvalsh(X).min() < -1e-10:
            raise NotPSD("X_t has a negative eigenvalue")
        if np.trace(X) > 1 + 1e-12:
            raise ValueError("each X_t must have trace at most 1")
        total += float(np.trace(np.linalg.solve(M, X)))
        M = M + X
    bound = 2 * d * math.log(1 + len(seq) / d)
    return PotentialCheck(total, bound, total <= bound)


@dataclass
class TheoryConstants:
    eta_min: float
    beta: float
    alpha: float
    kappa: float
    eps_sup: float
    eps_tv: float
    planner_T: int
    requirements: dict = field(default_factory=dict)


def theory_constants(eta_min: float, d: int, K: int, H: int, family_size: int, n: int, delta: float,
                     planner_T: int, alpha: float, beta: float | None = None,
                     kappa: float | None = None) -> TheoryConstants:
    """Fill the induction constants and evaluate the three parameter requirements.

    Defaults: ``beta = eta_min^2 / (9 d)`` and ``kappa = alpha K``.
    """
    beta = eta_min ** 2 / (9 * d) if beta is None else beta
    kappa = alpha * K if kappa is None else kappa
    eps_sup = 2 * math.log(family_size / delta) / n
    eps_tv = kappa * K * eps_sup
    target = eta_min / 6
    T = max(planner_T, 1)
    req = {
        "planner_term": T * beta / (2 * alpha) <= target,
        "coverage_term": alpha * d / (2 * T) <= target,
        "estimation_term": (1 + alpha / 2) * H * math.sqrt(eps_tv) <= target,
    }
    return TheoryConstants(eta_min, beta, alpha, kappa, eps_sup, eps_tv, planner_T, req)


@dataclass
class Lemma1Result:
    theta: np.ndarray
    worst: float
    sys_id: float
    holds: bool


def lemma1_check(env: LowRankMDP, learned: LowRankMDP, V, h: int) -> Lemma1Result:
    """Linear backup ``<phi_hat, theta>`` vs the true ``E[V(x')]`` under the worst policy."""
    _check_shapes(env, learned)
    V = np.asarray(V, dtype=float)
    if V.min() < 0 or V.max() > 1:
        raise ValueError("V must take values in [0, 1]")
    theta = bellman_backup_theta(learned, h, V)
    err = np.abs(learned.levels[h].phi @ theta - env.P[h] @ V)
    worst, _ = max_expected(env, h, err)
    sysid, _ = sys_id_error(env, learned, h)
    return Lemma1Result(theta, worst, sysid, worst <= sysid + 1e-12)
