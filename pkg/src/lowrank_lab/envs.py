"""Synthetic environments, hypothesis families and reachability.

Generators return :class:`LowRankMDP` instances; the latent-variable
generators attach one :class:`LatentRepresentation` per level so that
reachability and coverage can be evaluated exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DegenerateRow, GenerationFailed, MissingLatentRep
from .mdp import (FactoredLevel, LatentRepresentation, LowRankMDP, best_policy_for_reward,
                  terminal_reward, tv_rows)

MAX_TRIES = 1000
KINDS = ("block", "simplex", "rotated", "rank2sep", "matchingslack", "lowerbound")


@dataclass
class GenSpec:
    kind: str = "simplex"
    N: int = 20
    K: int = 2
    Z: int = 3
    H: int = 3
    eta_target: float = 0.2
    seed: int = 0
    d: int | None = None
    psi_concentration: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if min(self.N, self.K, self.Z, self.H) < 1:
            raise ValueError("N, K, Z, H must be positive")
        if self.d is None:
            self.d = self.Z


@dataclass(frozen=True, eq=False)
class HypothesisFamily:
    """Finite candidate classes: ``phis`` of shape (N, K, d), ``mus`` of shape (N, d)."""

    phis: tuple
    mus: tuple

    def __post_init__(self):
        phis = tuple(np.asarray(p, dtype=float) for p in self.phis)
        mus = tuple(np.asarray(m, dtype=float) for m in self.mus)
        if not phis or not mus:
            raise ValueError("family needs at least one phi and one mu")
        if len({p.shape for p in phis}) != 1 or len({m.shape for m in mus}) != 1:
            raise ValueError("all candidates must share a shape")
        if phis[0].shape[2] != mus[0].shape[1] or phis[0].shape[0] != mus[0].shape[0]:
            raise ValueError("phi and mu candidates are incompatible")
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "mus", mus)

    @property
    def size(self) -> int:
        return len(self.phis) * len(self.mus)

    def level(self, i: int, j: int) -> FactoredLevel:
        return FactoredLevel(self.phis[i], self.mus[j])

    def find(self, level: FactoredLevel):
        """Indices ``(i, j)`` of ``level``'s tables in the family, or None."""
        i = next((k for k, p in enumerate(self.phis) if np.array_equal(p, level.phi)), None)
        j = next((k for k, m in enumerate(self.mus) if np.array_equal(m, level.mu)), None)
        return None if i is None or j is None else (i, j)

    def realizable_for(self, model: LowRankMDP, levels=None) -> bool:
        levels = range(model.H) if levels is None else levels
        return all(self.find(model.levels[h]) is not None for h in levels)

    def cross_validity(self) -> np.ndarray:
        """Boolean matrix: does pair (i, j) give rows summing to 1 within 1e-6 after clipping?"""
        out = np.zeros((len(self.phis), len(self.mus)), dtype=bool)
        for i, p in enumerate(self.phis):
            for j, m in enumerate(self.mus):
                sums = np.clip(p @ m.T, 0, None).sum(-1)
                out[i, j] = bool(np.all(np.abs(sums - 1) <= 1e-6))
        return out


# ---------------------------------------------------------------------------
# reachability


def _max_reach(levels, start_state: int, psi: np.ndarray) -> np.ndarray:
    """max over policies of E[psi(x_h, a_h)[z]] where h = len(levels)."""
    N, K, Z = psi.shape
    if levels:
        # the last level's own dynamics are irrelevant for a terminal reward there
        prefix = LowRankMDP(tuple(levels) + (levels[-1],), start_state)
    else:
        prefix = LowRankMDP((FactoredLevel(np.full((N, K, 1), 1.0), np.full((N, 1), 1.0 / N)),), start_state)
    L = len(levels) + 1
    return np.array([best_policy_for_reward(prefix, terminal_reward(L, psi[:, :, z]))[1] for z in range(Z)])


def compute_reachability(model: LowRankMDP, latent_reps=None):
    """Exact ``max_pi P[z_{h+1} = z]`` for every level and latent.

    Returns ``(eta_min, table)`` with ``table`` of shape ``(H, Z)``.
    """
    reps = latent_reps if latent_reps is not None else model.latent
    if reps is None or len(reps) != model.H or any(r is None for r in reps):
        raise MissingLatentRep("reachability needs a latent representation at every level")
    table = np.array([_max_reach(model.levels[:h], model.start_state, reps[h].psi) for h in range(model.H)])
    return float(table.min()), table


def check_dlv_bound(model: LowRankMDP, latent_reps=None, eta_min: float | None = None) -> bool:
    """Audit ``Z <= d K^2 / eta_min^2`` on every level."""
    reps = latent_reps if latent_reps is not None else model.latent
    if reps is None:
        raise MissingLatentRep("d_LV audit needs latent representations")
    if eta_min is None:
        eta_min, _ = compute_reachability(model, reps)
    if eta_min <= 0:
        raise ValueError("eta_min must be positive for the d_LV bound")
    bound = model.d * model.K ** 2 / eta_min ** 2
    return all(rep.Z <= bound for rep in reps)


# ---------------------------------------------------------------------------
# latent-variable generators


def _random_blocks(N: int, Z: int, rng) -> np.ndarray:
    perm = rng.permutation(N)
    assign = np.empty(N, dtype=int)
    assign[perm[:Z]] = np.arange(Z)
    assign[perm[Z:]] = rng.integers(0, Z, size=N - Z)
    return assign


def _latent_levels(spec: GenSpec, rng, block: bool):
    N, K, Z = spec.N, spec.K, spec.Z
    if block and Z > N:
        raise ValueError("block MDP needs Z <= N")
    if not 0 < spec.eta_target <= 1.0 / Z:
        raise ValueError("eta_target must lie in (0, 1/Z]")
    levels, reps = [], []
    for h in range(spec.H):
        for _ in range(MAX_TRIES):
            psi = rng.dirichlet(np.full(Z, spec.psi_concentration), size=(N, K))
            if block:
                assign = _random_blocks(N, Z, rng)
                nu = np.zeros((Z, N))
                for z in range(Z):
                    members = np.flatnonzero(assign == z)
                    nu[z, members] = rng.dirichlet(np.ones(members.size))
            else:
                nu = rng.dirichlet(np.ones(N), size=Z)
            if _max_reach(levels, 0, psi).min() >= spec.eta_target:
                break
        else:
            raise GenerationFailed(f"level {h}: no draw reached eta_target={spec.eta_target} in {MAX_TRIES} tries")
        rep = LatentRepresentation(psi, nu)
        reps.append(rep)
        levels.append(rep.as_level())
    return LowRankMDP(tuple(levels), 0, tuple(reps))


def gen_block_mdp(spec: GenSpec, rng: np.random.Generator) -> LowRankMDP:
    """Latent-variable MDP whose emissions have disjoint supports; ``d = Z``."""
    return _latent_levels(spec, rng, block=True)


def gen_simplex_mdp(spec: GenSpec, rng: np.random.Generator) -> LowRankMDP:
    return _latent_levels(spec, rng, block=False)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def gen_rotated_lowrank(spec: GenSpec, rng: np.random.Generator, base: LowRankMDP | None = None) -> LowRankMDP:
    """Rotate every level of a simplex MDP by its own random orthogonal matrix.

    ``<Q phi, Q mu> = <phi, mu>`` so transition laws and norms are unchanged,
    while the features acquire negative entries.
    """
    if base is None:
        base = gen_simplex_mdp(spec, rng)
    levels = []
    for lvl in base.levels:
        Q = random_orthogonal(lvl.d, rng)
        levels.append(FactoredLevel(lvl.phi @ Q.T, lvl.mu @ Q.T))
    return LowRankMDP(tuple(levels), base.start_state, base.latent)


# ---------------------------------------------------------------------------
# appendix constructions


def gen_rank2_separation(M: int) -> LowRankMDP:
    """Single start state, two actions, M next states; rank 2 but needs M blocks."""
    if M < 2:
        raise ValueError("M must be at least 2")
    phi = np.zeros((M, 2, 2))
    phi[:, 0, 0] = 1.0
    phi[:, 1, 1] = 1.0
    i = np.arange(1, M + 1)
    mu = np.stack([np.full(M, 1.0 / M), i / i.sum()], axis=1)
    return LowRankMDP((FactoredLevel(phi, mu),), 0)


def perfect_matchings(n: int) -> list:
    """All perfect matchings of K_n as sorted lists of edges ``(u, v)``, u < v."""
    def rec(free):
        if not free:
            yield []
            return
        u, rest = free[0], free[1:]
        for k, v in enumerate(rest):
            for tail in rec(rest[:k] + rest[k + 1:]):
                yield [(u, v)] + tail
    return list(rec(list(range(n))))


def matching_slack_matrix(n: int):
    """Row-normalized slack matrix of the perfect-matching polytope.

    Returns ``(T, constraints, vertices)``: constraints and lifted vertices
    live in ``R^{C(n,2)+1}`` (last coordinate carries the offset).
    """
    if n % 2 or not 4 <= n <= 6:
        raise ValueError("n must be even with 4 <= n <= 6")
    edges = list(combinations(range(n), 2))
    E = len(edges)
    col = {e: k for k, e in enumerate(edges)}
    verts = []
    for m in perfect_matchings(n):
        v = np.zeros(E + 1)
        v[[col[e] for e in m]] = 1.0
        v[E] = 1.0
        verts.append(v)
    verts = np.array(verts)
    cons = [np.eye(E + 1)[k] for k in range(E)]
    for size in range(1, n, 2):
        for U in combinations(range(n), size):
            c = np.zeros(E + 1)
            for (u, v) in edges:
                if (u in U) != (v in U):
                    c[col[(u, v)]] = 1.0
            c[E] = -1.0
            cons.append(c)
    cons = np.array(cons)
    slack = cons @ verts.T
    if slack.min() < -1e-12:
        raise DegenerateRow("negative slack: vertex violates a constraint")
    keep = np.abs(slack).sum(axis=1) > 0
    cons, slack = cons[keep], slack[keep]
    sums = slack.sum(axis=1)
    if np.any(sums <= 0):
        raise DegenerateRow("a kept slack row cannot be normalized")
    return slack / sums[:, None], cons / sums[:, None], verts


def gen_matching_slack_mdp(n: int) -> LowRankMDP:
    """Slack-matrix transition operator; next states are the V perfect matchings.

    Constraint rows are laid out over ``(state, action)`` pairs with
    ``N = V`` and ``K = ceil(C / V)``; surplus pairs reuse rows cyclically.
    """
    _, cons, verts = matching_slack_matrix(n)
    C, V = cons.shape[0], verts.shape[0]
    K = math.ceil(C / V)
    rows = np.arange(V * K) % C
    phi = cons[rows].reshape(V, K, -1)
    return LowRankMDP((FactoredLevel(phi, verts),), 0)


def gen_lowerbound_mdp(M: int, v=None, rng: np.random.Generator | None = None) -> LowRankMDP:
    """Two-step classification MDP indexed by a bit vector ``v``.

    Level 0 moves the start state uniformly onto states ``0..M-1``; at level
    1 state ``j`` goes to the good state ``M`` iff the action equals ``v[j]``,
    otherwise to the bad state ``M+1``.
    """
    if v is None:
        rng = rng if rng is not None else np.random.default_rng()
        v = rng.integers(0, 2, size=M)
    v = np.asarray(v, dtype=int)
    if v.shape != (M,) or not np.isin(v, (0, 1)).all():
        raise ValueError("v must be a length-M bit vector")
    N = M + 2
    phi0 = np.zeros((N, 2, 2))
    phi0[:, :, 0] = 1.0
    mu0 = np.zeros((N, 2))
    mu0[:M, 0] = 1.0 / M
    phi1 = np.zeros((N, 2, 2))
    a = np.arange(2)
    phi1[:M, :, 0] = a[None, :] == v[:, None]
    phi1[:M, :, 1] = a[None, :] != v[:, None]
    phi1[M:, :, 1] = 1.0
    mu1 = np.zeros((N, 2))
    mu1[M, 0] = 1.0
    mu1[M + 1, 1] = 1.0
    return LowRankMDP((FactoredLevel(phi0, mu0), FactoredLevel(phi1, mu1)), 0)


def generate(spec: GenSpec, rng: np.random.Generator, **extra) -> LowRankMDP:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "block":
        return gen_block_mdp(spec, rng)
    if spec.kind == "simplex":
        return gen_simplex_mdp(spec, rng)
    if spec.kind == "rotated":
        return gen_rotated_lowrank(spec, rng)
    if spec.kind == "rank2sep":
        return gen_rank2_separation(extra.get("M", spec.N))
    if spec.kind == "matchingslack":
        return gen_matching_slack_mdp(extra.get("n", 4))
    return gen_lowerbound_mdp(extra.get("M", spec.N), extra.get("v"), rng)


# ---------------------------------------------------------------------------
# hypothesis families

MIN_DECOY_TV = 0.01


def _mix_phi(phi: np.ndarray, rng) -> np.ndarray:
    # convex combinations of existing rows keep every pairing with the true mu valid
    N, K, d = phi.shape
    flat = phi.reshape(N * K, d)
    eps = rng.uniform(0.05, 0.5)
    W = (1 - eps) * np.eye(N * K) + eps * rng.dirichlet(np.ones(N * K), size=N * K)
    return (W @ flat).reshape(N, K, d)


def _mix_mu(mu: np.ndarray, rng) -> np.ndarray:
    # column-stochastic mixing of next states preserves row sums and the mu normalization
    N = mu.shape[0]
    eps = rng.uniform(0.05, 0.5)
    Mx = (1 - eps) * np.eye(N) + eps * rng.dirichlet(np.ones(N), size=N).T
    return Mx @ mu


def _contains(tables, cand) -> bool:
    return any(np.array_equal(t, cand) for t in tables)


def gen_hypothesis_family(model: LowRankMDP, size_phi: int, size_mu: int,
                          rng: np.random.Generator, levels=None) -> HypothesisFamily:
    """Truth tables of ``levels`` (default all) plus decoys up to the requested sizes.

    Decoys come from state permutations and Dirichlet mixing of a true
    table. Each decoy, paired with its source level's partner table, must
    differ from that level's transition law by at least ``MIN_DECOY_TV`` in
    total variation on some row.
    """
    levels = list(range(model.H)) if levels is None else list(levels)
    phis, mus = [], []
    for h in levels:
        lvl = model.levels[h]
        if not _contains(phis, lvl.phi):
            phis.append(lvl.phi.copy())
        if not _contains(mus, lvl.mu):
            mus.append(lvl.mu.copy())
    if size_phi < 1 or size_mu < 1:
        raise ValueError("family sizes must be at least 1")
    # sizes below the number of distinct truths keep the truths only

    def decoys(tables, size, make, pair):
        tries = 0
        while len(tables) < size:
            tries += 1
            if tries > MAX_TRIES * size:
                raise GenerationFailed("could not build enough distinct decoys")
            h = levels[int(rng.integers(len(levels)))]
            cand = make(h)
            lvl = model.levels[h]
            new = pair(cand, lvl)
            if not new.check(norms=False)["valid"] or np.linalg.norm(new.phi, axis=-1).max() > 1 + 1e-9:
                continue
            if tv_rows(new.pmf, lvl.pmf).max() < MIN_DECOY_TV or _contains(tables, cand):
                continue
            tables.append(cand)

    def make_phi(h):
        phi = model.levels[h].phi
        if rng.random() < 0.5:
            return phi[rng.permutation(phi.shape[0])]
        return _mix_phi(phi, rng)

    def make_mu(h):
        mu = model.levels[h].mu
        if rng.random() < 0.5:
            return mu[rng.permutation(mu.shape[0])]
        return _mix_mu(mu, rng)

    decoys(phis, size_phi, make_phi, lambda c, lvl: FactoredLevel(c, lvl.mu))
    decoys(mus, size_mu, make_mu, lambda c, lvl: FactoredLevel(lvl.phi, c))
    return HypothesisFamily(tuple(phis), tuple(mus))


def truth_family(model: LowRankMDP) -> HypothesisFamily:
    """Only the distinct true tables, no decoys."""
    phis, mus = [], []
    for lvl in model.levels:
        if not _contains(phis, lvl.phi):
            phis.append(lvl.phi.copy())
        if not _contains(mus, lvl.mu):
            mus.append(lvl.mu.copy())
    return HypothesisFamily(tuple(phis), tuple(mus))
