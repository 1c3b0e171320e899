"""Maximum-likelihood and sampling oracles over finite hypothesis families."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import HypothesisFamily
from .errors import AllCandidatesInfeasible, DimensionMismatch
from .mdp import LowRankMDP, Policy, _sample_rows, clip_normalize, occupancy, sample_triples, tv_rows, uniform_policy

LOG_FLOOR = 1e-12


@dataclass
class TransitionDataset:
    """Per-level arrays of ``(x, a, x')`` index triples."""

    levels: dict = field(default_factory=dict)

    def add(self, h: int, x, a, xp) -> None:
        x, a, xp = (np.asarray(v, dtype=int) for v in (x, a, xp))
        if not x.shape == a.shape == xp.shape:
            raise DimensionMismatch("x, a, x' must have equal length")
        if h in self.levels:
            ox, oa, oxp = self.levels[h]
            x, a, xp = np.concatenate([ox, x]), np.concatenate([oa, a]), np.concatenate([oxp, xp])
        self.levels[h] = (x, a, xp)

    def level(self, h: int):
        return self.levels[h]

    def validate(self, H: int, N: int, K: int) -> None:
        for h, (x, a, xp) in self.levels.items():
            if not 0 <= h < H:
                raise DimensionMismatch(f"level tag {h} outside [0, {H})")
            if x.size and (x.min() < 0 or x.max() >= N or xp.min() < 0 or xp.max() >= N
                           or a.min() < 0 or a.max() >= K):
                raise DimensionMismatch(f"indices out of range at level {h}")

    def to_rows(self) -> list:
        rows = []
        for h in sorted(self.levels):
            x, a, xp = self.levels[h]
            rows.extend({"h": int(h), "x": int(i), "a": int(j), "xp": int(k)} for i, j, k in zip(x, a, xp))
        return rows

    @classmethod
    def from_rows(cls, rows) -> "TransitionDataset":
        ds = cls()
        by_level: dict = {}
        for r in rows:
            by_level.setdefault(int(r["h"]), []).append((r["x"], r["a"], r["xp"]))
        for h, trip in by_level.items():
            arr = np.array(trip, dtype=int)
            ds.add(h, arr[:, 0], arr[:, 1], arr[:, 2])
        return ds


def _counts(data, N: int, K: int) -> np.ndarray:
    x, a, xp = data
    C = np.zeros((N, K, N))
    np.add.at(C, (x, a, xp), 1.0)
    return C


def _log_table(phi, mu) -> np.ndarray:
    probs, _ = clip_normalize(phi @ mu.T, strict=False)
    with np.errstate(divide="ignore"):
        return np.where(probs > LOG_FLOOR, np.log(np.where(probs > LOG_FLOOR, probs, 1.0)), -np.inf)


def log_tables(family: HypothesisFamily) -> list:
    return [[_log_table(p, m) for m in family.mus] for p in family.phis]


def score_table(family: HypothesisFamily, data, logs=None) -> np.ndarray:
    """Log-likelihood of every ``(phi_i, mu_j)`` pair; -inf for infeasible pairs."""
    N, K, _ = family.phis[0].shape
    C = _counts(data, N, K)
    seen = C > 0
    logs = logs if logs is not None else log_tables(family)
    out = np.empty((len(family.phis), len(family.mus)))
    for i in range(len(family.phis)):
        for j in range(len(family.mus)):
            logp = logs[i][j]
            if np.any(np.isneginf(logp[seen])):
                out[i, j] = -np.inf
            else:
                out[i, j] = float((C[seen] * logp[seen]).sum())
    return out


def mle(family: HypothesisFamily, data, logs=None):
    """Exhaustive maximum likelihood; ties go to the lowest ``(i, j)``.

    Returns ``(phi_index, mu_index, log_likelihood)``.
    """
    if len(data[0]) == 0:
        raise ValueError("MLE needs at least one triple")
    scores = score_table(family, data, logs)
    if np.all(np.isneginf(scores)):
        raise AllCandidatesInfeasible("every candidate pair assigns zero probability to some triple")
    flat = int(np.argmax(scores))  # first occurrence == lexicographic lowest
    i, j = divmod(flat, scores.shape[1])
    return i, j, float(scores[i, j])


def samp(phi_table, mu_table, s: int, a: int, rng: np.random.Generator) -> int:
    """Draw ``x' ~ <phi(s, a), mu(.)>`` with the clip-renormalize rule."""
    row = clip_normalize(np.asarray(phi_table)[s, a] @ np.asarray(mu_table).T)
    return int(_sample_rows(row, np.asarray(rng.random())))


def mle_bound(family_size: int, n: int, delta: float) -> float:
    """Squared-TV rate ``2 log(|F| / delta) / n`` for a realizable finite class."""
    return 2.0 * math.log(family_size / delta) / n


def expected_sq_tv(env: LowRankMDP, learned_pmf: np.ndarray, h: int, policy: Policy) -> float:
    occ = occupancy(env, policy, h)
    return float((occ * tv_rows(learned_pmf, env.P[h]) ** 2).sum())


@dataclass
class RateReport:
    rows: list
    bound: float

    @property
    def fraction_within(self) -> float:
        return float(np.mean([r["within"] for r in self.rows]))

    COLUMNS = ("trial", "n", "tv_sq", "bound", "within")


def mle_rate_experiment(env: LowRankMDP, family: HypothesisFamily, h: int, n: int, trials: int,
                        delta: float, rng: np.random.Generator, data_policy: Policy | None = None) -> RateReport:
    """Repeated MLE fits measuring the training-distribution squared TV error."""
    if not family.realizable_for(env, [h]):
        raise ValueError(f"family is not realizable at level {h}")
    policy = data_policy if data_policy is not None else uniform_policy()
    bound = mle_bound(family.size, n, delta)
    logs = log_tables(family)
    tv_sq = np.array([[expected_sq_tv(env, clip_normalize(p @ m.T, strict=False)[0], h, policy)
                       for m in family.mus] for p in family.phis])
    rows = []
    for t in range(trials):
        data = sample_triples(env, policy, h, n, rng)
        i, j, _ = mle(family, data, logs)
        err = float(tv_sq[i, j])
        rows.append({"trial": t, "n": n, "tv_sq": err, "bound": bound, "within": err <= bound})
    return RateReport(rows, bound)
