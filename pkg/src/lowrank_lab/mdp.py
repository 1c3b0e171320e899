"""Finite-state low-rank MDPs and exact probabilistic machinery.

Everything here works on finite index spaces: states ``[N]``, actions
``[K]``, embedding dimension ``d``. Transition laws are computed from
the factorization ``T_h(x'|s,a) = <phi_h(s,a), mu_h(x')>``; rows with
small negative entries are clipped at zero and renormalized.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidModel, MissingLatentRep

ROW_SUM_FLOOR = 1e-6
TIE_TOL = 1e-12


def clip_normalize(raw: np.ndarray, strict: bool = True):
    """Clip ``raw`` at zero along the last axis and renormalize.

    With ``strict`` an :class:`InvalidModel` is raised when any row sums
    below ``ROW_SUM_FLOOR``. Otherwise returns ``(probs, valid)`` where
    invalid rows are all-zero and flagged ``False`` in ``valid``.
    """
    clipped = np.clip(raw, 0.0, None)
    sums = clipped.sum(axis=-1, keepdims=True)
    valid = sums[..., 0] >= ROW_SUM_FLOOR
    if strict:
        if not np.all(valid):
            bad = np.argwhere(~valid)[0]
            raise InvalidModel(f"row {tuple(bad)} sums to {float(sums[tuple(bad)][0]):.3g}")
        return clipped / sums
    probs = np.where(valid[..., None], clipped / np.where(sums > 0, sums, 1.0), 0.0)
    return probs, valid


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"pmf shapes differ: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def tv_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise total variation over the last axis."""
    if P.shape != Q.shape:
        raise DimensionMismatch(f"shapes differ: {P.shape} vs {Q.shape}")
    return 0.5 * np.abs(P - Q).sum(axis=-1)


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF draw per row; normalizing by the last cdf entry keeps
    # the draw inside the support even with rounding in the row sum
    cdf = np.cumsum(probs, axis=-1)
    cdf = cdf / cdf[..., -1:]
    idx = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


# ---------------------------------------------------------------------------
# model types


@dataclass(frozen=True, eq=False)
class FactoredLevel:
    """One transition operator stored as embedding tables.

    ``phi`` has shape ``(N, K, d)`` and ``mu`` has shape ``(N, d)``.
    """

    phi: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)  # own copy, frozen below
        mu = np.array(self.mu, dtype=float)
        if phi.ndim != 3 or mu.ndim != 2:
            raise DimensionMismatch("phi must be (N, K, d) and mu (N, d)")
        if phi.shape[2] != mu.shape[1]:
            raise DimensionMismatch(f"embedding dims differ: {phi.shape[2]} vs {mu.shape[1]}")
        if phi.shape[0] != mu.shape[0]:
            raise DimensionMismatch("phi and mu disagree on the number of states")
        phi.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "mu", mu)

    @property
    def N(self) -> int:
        return self.phi.shape[0]

    @property
    def K(self) -> int:
        return self.phi.shape[1]

    @property
    def d(self) -> int:
        return self.phi.shape[2]

    @cached_property
    def raw(self) -> np.ndarray:
        """Raw inner products, shape ``(N, K, N)``."""
        return self.phi @ self.mu.T

    @cached_property
    def pmf(self) -> np.ndarray:
        """Clip-renormalized transition table, shape ``(N, K, N)``."""
        out = clip_normalize(self.raw)
        out.setflags(write=False)
        return out

    def mu_normalization(self, rng: np.random.Generator | None = None, n_random: int = 10_000) -> float:
        """max over binary g of ``||sum_x mu(x) g(x)||_2``.

        Exhaustive for N <= 20 (the maximum of a convex function over the
        unit box sits at a vertex); random binary g otherwise.
        """
        N = self.N
        best = 0.0
        if N <= 20:
            chunk = 1 << min(N, 14)
            bits = np.arange(N)
            for start in range(0, 1 << N, chunk):
                codes = np.arange(start, min(start + chunk, 1 << N))
                G = ((codes[:, None] >> bits) & 1).astype(float)
                best = max(best, float(np.linalg.norm(G @ self.mu, axis=1).max()))
            return best
        rng = rng if rng is not None else np.random.default_rng(0)
        G = rng.integers(0, 2, size=(n_random, N)).astype(float)
        return float(np.linalg.norm(G @ self.mu, axis=1).max())

    def check(self, norms: bool = True) -> dict:
        """Evaluate the level invariants; returns a report of booleans."""
        raw = self.raw
        report = {
            "rows_nonneg": bool(raw.min() >= -1e-12),
            "rows_sum_one": bool(np.all(np.abs(raw.sum(-1) - 1.0) <= 1e-9)),
        }
        if norms:
            report["phi_norm"] = bool(np.linalg.norm(self.phi, axis=-1).max() <= 1 + 1e-9)
            report["mu_normalization"] = bool(self.mu_normalization() <= np.sqrt(self.d) + 1e-6)
        report["valid"] = all(report.values())
        return report


@dataclass(frozen=True, eq=False)
class LatentRepresentation:
    """Simplex features: ``psi`` (N, K, Z) and emissions ``nu`` (Z, N)."""

    psi: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        nu = np.array(self.nu, dtype=float)
        if psi.ndim != 3 or nu.ndim != 2 or psi.shape[2] != nu.shape[0]:
            raise DimensionMismatch("psi must be (N, K, Z) and nu (Z, N)")
        for name, arr in (("psi", psi), ("nu", nu)):
            if arr.min() < -1e-12 or np.any(np.abs(arr.sum(-1) - 1) > 1e-9):
                raise InvalidModel(f"{name} rows must be probability vectors")
        psi.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "nu", nu)

    @property
    def Z(self) -> int:
        return self.nu.shape[0]

    @cached_property
    def transition(self) -> np.ndarray:
        return self.psi @ self.nu

    def consistency_gap(self, level: FactoredLevel) -> float:
        return float(np.abs(self.transition - level.pmf).max())

    def is_block(self) -> bool:
        support = self.nu > 0
        return bool(np.all(support.sum(axis=0) <= 1))

    def as_level(self) -> FactoredLevel:
        return FactoredLevel(self.psi, self.nu.T)


@dataclass(frozen=True, eq=False)
class LowRankMDP:
    """Horizon-H non-stationary MDP over ``[N]`` states and ``[K]`` actions.

    ``levels[h]`` is the operator generating ``x_{h+1}`` from ``(x_h, a_h)``.
    ``latent`` optionally holds one :class:`LatentRepresentation` per level.
    """

    levels: tuple
    start_state: int = 0
    latent: tuple | None = None

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise DimensionMismatch("a model needs at least one level")
        shape = (levels[0].N, levels[0].K, levels[0].d)
        for lvl in levels:
            if (lvl.N, lvl.K, lvl.d) != shape:
                raise DimensionMismatch("all levels must share N, K, d")
        if not 0 <= self.start_state < shape[0]:
            raise DimensionMismatch("start_state out of range")
        object.__setattr__(self, "levels", levels)
        if self.latent is not None:
            latent = tuple(self.latent)
            if len(latent) != len(levels):
                raise DimensionMismatch("need one latent representation per level")
            object.__setattr__(self, "latent", latent)

    @property
    def H(self) -> int:
        return len(self.levels)

    @property
    def N(self) -> int:
        return self.levels[0].N

    @property
    def K(self) -> int:
        return self.levels[0].K

    @property
    def d(self) -> int:
        return self.levels[0].d

    @cached_property
    def P(self) -> np.ndarray:
        """Stacked transition tables, shape ``(H, N, K, N)``."""
        return np.stack([lvl.pmf for lvl in self.levels])

    def truncate(self, n_levels: int) -> "LowRankMDP":
        if not 1 <= n_levels <= self.H:
            raise ValueError(f"cannot truncate horizon {self.H} to {n_levels}")
        latent = None if self.latent is None else self.latent[:n_levels]
        return LowRankMDP(self.levels[:n_levels], self.start_state, latent)

    def with_levels(self, levels: Sequence[FactoredLevel]) -> "LowRankMDP":
        return LowRankMDP(tuple(levels), self.start_state, None)

    def require_latent(self) -> tuple:
        if self.latent is None:
            raise MissingLatentRep("model carries no latent representation")
        return self.latent


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Base class. Subclasses expose ``markov_components``."""

    def markov_components(self) -> list:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class TabularPolicy(Policy):
    """Per-level action distributions, ``probs`` of shape ``(L, N, K)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 3:
            raise DimensionMismatch("tabular policy must be (L, N, K)")
        if probs.min() < -1e-12 or np.any(np.abs(probs.sum(-1) - 1) > 1e-9):
            raise ValueError("policy rows must be probability vectors")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_levels(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def deterministic(cls, actions: np.ndarray, K: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(K)[actions])

    @classmethod
    def uniform(cls, L: int, N: int, K: int) -> "TabularPolicy":
        return cls(np.full((L, N, K), 1.0 / K))

    def action_probs(self, h: int, N: int, K: int) -> np.ndarray:
        if h >= self.n_levels:
            raise ValueError(f"policy defined for {self.n_levels} levels, asked for level {h}")
        return self.probs[h]

    def markov_components(self) -> list:
        return [(1.0, self)]


@dataclass(frozen=True, eq=False)
class MixturePolicy(Policy):
    """Episode-level mixture: one component is drawn per episode."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float)
        if len(comps) == 0 or w.shape != (len(comps),):
            raise ValueError("mixture needs one weight per component")
        if w.min() < 0 or abs(w.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must form a pmf")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, components: Sequence[Policy]) -> "MixturePolicy":
        k = len(components)
        return cls(tuple(components), np.full(k, 1.0 / k))

    def markov_components(self) -> list:
        out = []
        for w, comp in zip(self.weights, self.components):
            out.extend((w * cw, c) for cw, c in comp.markov_components())
        return out


@dataclass(frozen=True, eq=False)
class PrefixThenUniform(Policy):
    """Run ``base`` on levels ``< prefix`` and uniform actions afterwards.

    ``base=None`` is the null policy: uniform at every level.
    """

    base: Policy | None
    prefix: int

    def action_probs(self, h: int, N: int, K: int) -> np.ndarray:
        if h < self.prefix:
            return self.base.action_probs(h, N, K)
        return np.full((N, K), 1.0 / K)

    def markov_components(self) -> list:
        if self.base is None or self.prefix == 0:
            return [(1.0, PrefixThenUniform(None, 0))]
        comps = self.base.markov_components()
        if len(comps) == 1 and comps[0][1] is self.base:
            return [(1.0, self)]
        return [(w, PrefixThenUniform(c, self.prefix)) for w, c in comps]


def uniform_policy() -> PrefixThenUniform:
    return PrefixThenUniform(None, 0)


def random_tabular_policy(L: int, N: int, K: int, rng: np.random.Generator,
                          deterministic: bool = False) -> TabularPolicy:
    if deterministic:
        return TabularPolicy.deterministic(rng.integers(0, K, size=(L, N)), K)
    return TabularPolicy(rng.dirichlet(np.ones(K), size=(L, N)))


# ---------------------------------------------------------------------------
# exact evaluation


def transition_pmf(model: LowRankMDP, h: int, s: int, a: int) -> np.ndarray:
    if not 0 <= h < model.H:
        raise IndexError(f"level {h} outside [0, {model.H})")
    return model.levels[h].pmf[s, a].copy()


def _component_state_dists(model: LowRankMDP, comp, h: int) -> np.ndarray:
    dist = np.zeros(model.N)
    dist[model.start_state] = 1.0
    for lvl in range(h):
        sa = dist[:, None] * comp.action_probs(lvl, model.N, model.K)
        dist = np.einsum("sa,sax->x", sa, model.P[lvl])
    return dist


def state_distribution(model: LowRankMDP, policy: Policy, h: int) -> np.ndarray:
    """Exact law of ``x_h`` for ``0 <= h <= H``."""
    if not 0 <= h <= model.H:
        raise IndexError(f"level {h} outside [0, {model.H}]")
    out = np.zeros(model.N)
    for w, comp in policy.markov_components():
        out += w * _component_state_dists(model, comp, h)
    return out


def occupancy(model: LowRankMDP, policy: Policy, h: int) -> np.ndarray:
    """Exact joint law of ``(x_h, a_h)``, shape ``(N, K)``."""
    if not 0 <= h < model.H:
        raise IndexError(f"level {h} outside [0, {model.H})")
    out = np.zeros((model.N, model.K))
    for w, comp in policy.markov_components():
        dist = _component_state_dists(model, comp, h)
        out += w * dist[:, None] * comp.action_probs(h, model.N, model.K)
    return out


def policy_value(model: LowRankMDP, policy: Policy, reward: np.ndarray) -> float:
    """Expected cumulative reward; ``reward`` has shape ``(L, N, K)``."""
    reward = np.asarray(reward, dtype=float)
    return float(sum((occupancy(model, policy, h) * reward[h]).sum() for h in range(reward.shape[0])))


def greedy_lowest(Q: np.ndarray) -> np.ndarray:
    """Row-wise argmax breaking near-ties toward the lowest action index."""
    top = Q.max(axis=-1, keepdims=True)
    return np.argmax(Q >= top - TIE_TOL, axis=-1)


def best_policy_for_reward(model: LowRankMDP, reward: np.ndarray, check_range: bool = True):
    """Exact backward DP over levels ``0..L-1`` where ``L = len(reward)``.

    Returns ``(TabularPolicy, value)`` with a deterministic optimal policy.
    """
    reward = np.asarray(reward, dtype=float)
    L = reward.shape[0]
    if reward.shape != (L, model.N, model.K) or not 1 <= L <= model.H:
        raise DimensionMismatch(f"reward must be (L<= {model.H}, {model.N}, {model.K}), got {reward.shape}")
    if check_range and (reward.min() < -1e-12 or reward.max() > 1 + 1e-12):
        raise ValueError("reward must lie in [0, 1]")
    V = np.zeros(model.N)
    actions = np.zeros((L, model.N), dtype=int)
    for h in range(L - 1, -1, -1):
        Q = reward[h] + (model.P[h] @ V if h < L - 1 else 0.0)
        actions[h] = greedy_lowest(Q)
        V = np.take_along_axis(Q, actions[h][:, None], axis=1)[:, 0]
    return TabularPolicy.deterministic(actions, model.K), float(V[model.start_state])


def terminal_reward(L: int, last: np.ndarray) -> np.ndarray:
    """Reward table that is zero except at level ``L-1``."""
    last = np.asarray(last, dtype=float)
    out = np.zeros((L,) + last.shape)
    out[L - 1] = last
    return out


def enumerate_deterministic_policies(L: int, N: int, K: int):
    """Yield every deterministic tabular policy (small instances only)."""
    for flat in product(range(K), repeat=L * N):
        yield TabularPolicy.deterministic(np.array(flat).reshape(L, N), K)


def bellman_backup_theta(model: LowRankMDP, h: int, V) -> np.ndarray:
    """``theta = sum_x' mu_h(x') V(x')`` so that ``<phi_h, theta>`` is a backup."""
    V = np.asarray(V, dtype=float)
    return model.levels[h].mu.T @ V


# ---------------------------------------------------------------------------
# sampling


@dataclass
class Trajectory:
    states: list
    actions: list
    latents: list | None = None

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise DimensionMismatch("need exactly one more state than actions")
        if self.latents is not None and len(self.latents) != len(self.actions):
            raise DimensionMismatch("one latent per transition")

    def to_dict(self) -> dict:
        out = {"states": [int(s) for s in self.states], "actions": [int(a) for a in self.actions]}
        if self.latents is not None:
            out["latents"] = [int(z) for z in self.latents]
        return out


def sample_transition(model: LowRankMDP, h: int, s: int, a: int, rng: np.random.Generator) -> int:
    pmf = model.levels[h].pmf[s, a]
    return int(_sample_rows(pmf, np.asarray(rng.random())))


def _pick_component(policy: Policy, rng: np.random.Generator):
    comps = policy.markov_components()
    if len(comps) == 1:
        return comps[0][1]
    w = np.array([c[0] for c in comps])
    return comps[int(_sample_rows(w, np.asarray(rng.random())))][1]


def rollout(model: LowRankMDP, policy: Policy, rng: np.random.Generator,
            with_latents: bool = False, latent_reps: Sequence[LatentRepresentation] | None = None,
            n_levels: int | None = None) -> Trajectory:
    """Sample one episode; with latents each step goes ``z ~ psi`` then ``x' ~ nu(z)``."""
    L = model.H if n_levels is None else n_levels
    if with_latents:
        latent_reps = latent_reps if latent_reps is not None else model.latent
        if latent_reps is None or len(latent_reps) < L or any(r is None for r in latent_reps[:L]):
            raise MissingLatentRep("latent sampling requested but a level lacks a representation")
    comp = _pick_component(policy, rng)
    s = model.start_state
    states, actions, latents = [s], [], [] if with_latents else None
    for h in range(L):
        a = int(_sample_rows(comp.action_probs(h, model.N, model.K)[s], np.asarray(rng.random())))
        if with_latents:
            rep = latent_reps[h]
            z = int(_sample_rows(rep.psi[s, a], np.asarray(rng.random())))
            s = int(_sample_rows(rep.nu[z], np.asarray(rng.random())))
            latents.append(z)
        else:
            s = sample_transition(model, h, s, a, rng)
        actions.append(a)
        states.append(s)
    return Trajectory(states, actions, latents)


def sample_triples(model: LowRankMDP, policy: Policy, h: int, n: int, rng: np.random.Generator):
    """Vectorized collection of ``n`` independent ``(x_h, a_h, x_{h+1})`` triples."""
    if not 0 <= h < model.H:
        raise IndexError(f"level {h} outside [0, {model.H})")
    comps = policy.markov_components()
    w = np.array([c[0] for c in comps])
    which = _sample_rows(np.broadcast_to(w, (n, len(w))), rng.random(n)) if len(comps) > 1 else np.zeros(n, int)
    xs = np.empty(n, dtype=int)
    acts = np.empty(n, dtype=int)
    nxt = np.empty(n, dtype=int)
    u = rng.random((n, 2 * (h + 1)))
    for ci, (_, comp) in enumerate(comps):
        idx = np.flatnonzero(which == ci)
        if idx.size == 0:
            continue
        s = np.full(idx.size, model.start_state)
        for lvl in range(h + 1):
            probs = comp.action_probs(lvl, model.N, model.K)[s]
            a = _sample_rows(probs, u[idx, 2 * lvl])
            s_next = _sample_rows(model.P[lvl][s, a], u[idx, 2 * lvl + 1])
            if lvl == h:
                xs[idx], acts[idx], nxt[idx] = s, a, s_next
            s = s_next
    return xs, acts, nxt
