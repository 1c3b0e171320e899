"""Feature learning and model-based exploration, level by level.

At stage ``h`` the driver collects ``n`` triples under ``rho_h`` followed by
a uniform action, fits ``(phi_h, mu_h)`` by maximum likelihood, and then
plans on the learned prefix ``levels 0..h`` to cover the features
``phi_h``. The planner output acts on levels ``0..h``; wrapping it in
:class:`PrefixThenUniform` with prefix ``h+1`` gives ``rho_{h+1}``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import coverage_ratio, sys_id_error
from .envs import HypothesisFamily
from .errors import RealizabilityViolation
from .mdp import FactoredLevel, LowRankMDP, Policy, PrefixThenUniform, sample_triples
from .oracles import TransitionDataset, mle
from .planners import FqiConfig, elliptical_planner, real_world_planner, simplex_planner

PLANNERS = ("elliptical", "simplex", "realworld")


@dataclass
class LevelDiagnostics:
    level: int
    phi_index: int
    mu_index: int
    log_likelihood: float
    planner_T: int
    degenerate: bool
    wall_time: float
    samples: int
    trace: list = field(default_factory=list)


@dataclass
class FlambeRun:
    learned: LowRankMDP
    rhos: list
    datasets: TransitionDataset
    diagnostics: list = field(default_factory=list)
    trajectories_used: int = 0
    mle_trajectories: int = 0
    fqi_trajectories: int = 0
    planner: str = "simplex"


def default_beta(eta_min: float, d: int) -> float:
    """``eta_min^2 / (9 d)``, the planner threshold used when none is given."""
    return eta_min ** 2 / (9.0 * d)


def _plan(kind, env, learned_levels, rhos, beta, fqi_config, rng):
    prefix = LowRankMDP(tuple(learned_levels), env.start_state)
    if kind == "elliptical":
        return elliptical_planner(prefix, beta), 0
    if kind == "simplex":
        return simplex_planner(prefix), 0
    phi_hats = [lvl.phi for lvl in learned_levels]
    return real_world_planner(env, rhos, phi_hats, phi_hats[-1].shape[2], fqi_config, rng)


def run_flambe(env: LowRankMDP, family: HypothesisFamily, planner_kind: str, beta: float | None,
               n: int, rng: np.random.Generator, fqi_config: FqiConfig | None = None) -> FlambeRun:
    """Run the full H-stage loop against ``env`` and return the run record."""
    if planner_kind not in PLANNERS:
        raise ValueError(f"planner must be one of {PLANNERS}")
    if not family.realizable_for(env):
        raise RealizabilityViolation("family does not contain the true tables of every level")
    if planner_kind in ("simplex", "realworld") and any(p.min() < -1e-12 for p in family.phis):
        raise ValueError("simplex planners need simplex-valued candidate features")
    if planner_kind == "elliptical" and (beta is None or beta <= 0):
        raise ValueError("elliptical planner needs beta > 0")
    if planner_kind == "realworld" and fqi_config is None:
        fqi_config = FqiConfig()

    rhos: list = [PrefixThenUniform(None, 0)]
    learned: list = []
    data = TransitionDataset()
    diags, mle_used, fqi_used = [], 0, 0
    for h in range(env.H):
        start = time.perf_counter()
        train = PrefixThenUniform(rhos[h], h)
        x, a, xp = sample_triples(env, train, h, n, rng)
        data.add(h, x, a, xp)
        mle_used += n
        i, j, ll = mle(family, (x, a, xp))
        learned.append(FactoredLevel(family.phis[i], family.mus[j]))
        result, used = _plan(planner_kind, env, learned, rhos, beta, fqi_config, rng)
        fqi_used += used
        rhos.append(PrefixThenUniform(result.policy, h + 1))
        diags.append(LevelDiagnostics(h, i, j, ll, result.T, result.degenerate,
                                      time.perf_counter() - start, n + used, result.trace))
    model = LowRankMDP(tuple(learned), env.start_state)
    return FlambeRun(model, rhos, data, diags, mle_used + fqi_used, mle_used, fqi_used, planner_kind)


def run_flambe_real_world(env: LowRankMDP, family: HypothesisFamily, n_mle: int, fqi_config: FqiConfig,
                          rng: np.random.Generator) -> FlambeRun:
    """Variant whose planner rolls out in ``env`` instead of sampling the model."""
    return run_flambe(env, family, "realworld", None, n_mle, rng, fqi_config)


def run_metrics(env: LowRankMDP, run: FlambeRun) -> list:
    """One row per level: sys-id error, realized coverage ratio, planner T, log-likelihood."""
    rows = []
    for diag in run.diagnostics:
        h = diag.level
        err, _ = sys_id_error(env, run.learned, h)
        kappa = float("nan")
        if env.latent is not None:
            kappa, _ = coverage_ratio(env, env.latent, run.rhos[h + 1], h + 1)
        rows.append({"level": h, "sys_id_error": err, "kappa": kappa, "planner_T": diag.planner_T,
                     "log_likelihood": diag.log_likelihood, "phi_index": diag.phi_index,
                     "mu_index": diag.mu_index})
    return rows
