"""Named lemma suites and the desk-scale benchmark environments.

Each suite returns a list of row dicts carrying a ``holds`` flag; the
``check`` CLI subcommand fails when any row does not hold.
"""
from __future__ import annotations

import math

import numpy as np

from . import seeding
from .analysis import (bellman_error_matrix, elliptical_potential_check, lemma1_check, max_expected,
                       max_expected_sq_tv, simulation_gap)
from .envs import GenSpec, gen_block_mdp, gen_hypothesis_family, gen_rank2_separation, gen_rotated_lowrank, gen_simplex_mdp
from .flambe import run_flambe
from .mdp import LowRankMDP, random_tabular_policy
from .planners import elliptical_cap, elliptical_planner

SUITES = ("B1", "C2", "F1", "L1", "propA2")


def benchmark_spec(seed: int = 0) -> GenSpec:
    """Simplex environment used by the end-to-end experiments."""
    return GenSpec(kind="simplex", N=20, K=2, Z=3, H=3, eta_target=0.2, seed=seed)


def benchmark_env(seed: int = 0) -> LowRankMDP:
    return gen_simplex_mdp(benchmark_spec(seed), seeding.stream(seed, "env"))


def benchmark_family(env: LowRankMDP, seed: int = 0, size: int = 10):
    return gen_hypothesis_family(env, size, size, seeding.stream(seed, "family"))


def random_rank1_sequence(d: int, T: int, rng: np.random.Generator) -> list:
    """``X_t = v v^T`` with ``||v|| <= 1`` so each trace is at most one."""
    v = rng.standard_normal((T, d))
    v *= (rng.random(T) ** (1 / d) / np.linalg.norm(v, axis=1))[:, None]
    return [np.outer(x, x) for x in v]


def harmonic(T: int) -> float:
    from scipy.special import digamma

    return float(digamma(T + 1) - digamma(1))


def suite_F1(trials: int, rng: np.random.Generator, d: int = 10, T: int = 1000) -> list:
    rows = []
    for k in range(trials):
        res = elliptical_potential_check(random_rank1_sequence(d, T, rng))
        rows.append({"case": f"rank1_{k}", "value": res.total, "bound": res.bound, "holds": res.holds})
    # closed forms: d=1 with X_t=1 gives the harmonic number; X_t=I/d gives d(psi(d+T)-psi(d))
    from scipy.special import digamma

    res = elliptical_potential_check([np.eye(1)] * T)
    rows.append({"case": "scalar_ones", "value": res.total, "bound": res.bound,
                 "holds": res.holds and abs(res.total - harmonic(T)) <= 1e-6})
    res = elliptical_potential_check([np.eye(d) / d] * T)
    closed = d * float(digamma(d + T) - digamma(d))
    rows.append({"case": "scaled_identity", "value": res.total, "bound": res.bound,
                 "holds": res.holds and abs(res.total - closed) <= 1e-6})
    return rows


def random_rotated_model(rng: np.random.Generator, d_max: int = 5, H_max: int = 4, N: int = 8, K: int = 2) -> LowRankMDP:
    d = int(rng.integers(2, d_max + 1))
    H = int(rng.integers(1, H_max + 1))
    spec = GenSpec(kind="rotated", N=N, K=K, Z=d, H=H, eta_target=0.5 / d)
    return gen_rotated_lowrank(spec, rng)


def elliptical_post_check(model: LowRankMDP, res) -> float:
    """``max_pi E[phi^T (Sigma_rho + I/T)^{-1} phi] - T beta`` style slack input."""
    A = np.linalg.inv(res.sigma + np.eye(model.d) / res.T)
    phi = model.levels[-1].phi
    q = np.einsum("sai,ij,saj->sa", phi, A, phi)
    return max_expected(model, model.H - 1, q)[0]


def suite_C2(trials: int, rng: np.random.Generator, beta: float = 0.05) -> list:
    rows = []
    for k in range(trials):
        model = random_rotated_model(rng)
        res = elliptical_planner(model, beta)
        cap = elliptical_cap(model.d, beta)
        value = elliptical_post_check(model, res) if res.T else 0.0
        potential = res.trace[-1]["trace_term"] if res.trace else 0.0
        ok = (res.T <= cap and value <= res.T * beta + 1e-9
              and potential <= 2 * model.d * math.log(1 + res.T / model.d) + 1e-9)
        rows.append({"case": f"model_{k}", "d": model.d, "H": model.H, "T": res.T, "cap": cap,
                     "value": value, "bound": res.T * beta, "holds": ok})
    return rows


def _learned_pair(rng, seed, env=None, learned=None, n=60):
    # small n keeps the learned model imperfect so the bounds are non-trivial
    if env is None:
        env = gen_simplex_mdp(GenSpec(kind="simplex", N=10, K=2, Z=3, H=3, eta_target=0.2), rng)
    if learned is None:
        fam = gen_hypothesis_family(env, 6, 6, rng)
        learned = run_flambe(env, fam, "simplex", None, n, rng).learned
    return env, learned


def suite_B1(trials: int, rng: np.random.Generator, env=None, learned=None) -> list:
    env, learned = _learned_pair(rng, 0, env, learned, n=60)
    eps = [0.0] + [max_expected_sq_tv(env, learned, k) for k in range(learned.H)]
    eps_upto = np.maximum.accumulate(eps)
    rows = []
    for k in range(trials):
        h = int(rng.integers(1, learned.H + 1))
        f = rng.random(env.N)
        pi = random_tabular_policy(env.H, env.N, env.K, rng)
        res = simulation_gap(env, learned, f, pi, h, eps_tv=float(eps_upto[h]))
        rows.append({"case": f"pair_{k}", "h": h, "value": res.gap, "bound": res.bound, "holds": res.holds})
    return rows


def suite_L1(trials: int, rng: np.random.Generator, env=None, learned=None) -> list:
    env, learned = _learned_pair(rng, 0, env, learned, n=60)
    rows = []
    for k in range(trials):
        h = int(rng.integers(0, learned.H))
        res = lemma1_check(env, learned, rng.random(env.N), h)
        rows.append({"case": f"V_{k}", "h": h, "value": res.worst, "bound": res.sys_id, "holds": res.holds})
    return rows


def random_bellman_matrix(env: LowRankMDP, rng: np.random.Generator, h: int, size: int = 10):
    roll = [random_tabular_policy(env.H, env.N, env.K, rng) for _ in range(size)]
    pairs = [(rng.random((2, env.N)) * env.H, rng.dirichlet(np.ones(env.K), size=env.N)) for _ in range(size)]
    reward = rng.random((env.H, env.N, env.K))
    return bellman_error_matrix(env, roll, pairs, reward, h)


def suite_envs(rng: np.random.Generator, count: int = 20) -> list:
    """Mixed generator suite with d in {2, 3, 5}."""
    envs = []
    for k in range(count):
        d = (2, 3, 5)[k % 3]
        kind = ("block", "simplex", "rotated")[(k // 3) % 3]
        spec = GenSpec(kind=kind, N=12, K=3, Z=d, H=3, eta_target=0.5 / d)
        gen = {"block": gen_block_mdp, "simplex": gen_simplex_mdp, "rotated": gen_rotated_lowrank}[kind]
        envs.append(gen(spec, rng))
    return envs


def suite_propA2(trials: int, rng: np.random.Generator) -> list:
    rows = []
    envs = suite_envs(rng, trials) + [gen_rank2_separation(6)]
    for k, env in enumerate(envs):
        h = env.H - 1
        res = random_bellman_matrix(env, rng, h)
        rows.append({"case": f"env_{k}", "d": env.d, "value": res.rank, "bound": env.d, "holds": res.holds})
    return rows


def run_suite(name: str, trials: int, seed: int, **kw) -> list:
    rng = seeding.stream(seed, f"suite:{name}")
    fn = {"B1": suite_B1, "C2": suite_C2, "F1": suite_F1, "L1": suite_L1, "propA2": suite_propA2}[name]
    return fn(trials, rng, **kw)
