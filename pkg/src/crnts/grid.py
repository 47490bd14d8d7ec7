"""Adaptive candidate grid: LHS start, importance filtering, MH-style densification.

Grids hold augmented points (x on the unit cube, integer seed). For x-only
surrogates the seed column is a placeholder 0 and ``seedset`` is ``None``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np


class Surrogate(Protocol):
    def sample_marginal(self, X, seeds, rng: np.random.Generator) -> np.ndarray: ...

    def sample_joint(self, X, seeds, J: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass
class CandidateGrid:
    x: np.ndarray
    seeds: np.ndarray
    capacity: int

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.seeds = np.asarray(self.seeds, dtype=np.int64).reshape(-1)
        if self.x.shape[0] != len(self.seeds):
            raise ValueError("grid x and seeds differ in length")
        if len(self.seeds) > self.capacity:
            raise ValueError(f"grid holds {len(self.seeds)} points, capacity is {self.capacity}")
        if len(set(self.keys())) != len(self.seeds):
            raise ValueError("grid points must be unique")

    def __len__(self) -> int:
        return len(self.seeds)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def keys(self) -> list[tuple[bytes, int]]:
        return [point_key(row, s) for row, s in zip(self.x, self.seeds)]

    def subset(self, idx) -> "CandidateGrid":
        idx = np.asarray(idx, dtype=np.int64)
        return CandidateGrid(self.x[idx], self.seeds[idx], self.capacity)


def point_key(x, seed) -> tuple[bytes, int]:
    return np.asarray(x, dtype=float).tobytes(), int(seed)


@dataclass(frozen=True)
class ProposalSpec:
    """Isotropic Gaussian random walk on the unit cube, reflected at the faces."""

    step: float = 0.05
    kind: str = "gaussian"
    boundary: str = "reflect"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("proposal step must be positive")

    def propose(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return reflect_unit(x + self.step * rng.standard_normal(x.shape))

    def log_q_ratio(self, x_can: np.ndarray, x_cur: np.ndarray) -> float:
        """log q(x_can | x) - log q(x | x_can); symmetric walk, so zero."""
        return 0.0


def reflect_unit(x: np.ndarray) -> np.ndarray:
    y = np.mod(x, 2.0)
    return np.where(y > 1.0, 2.0 - y, y)


MAXIMIN_LIMIT = 2000


def maximin_lhs(n: int, d: int, rng: np.random.Generator, tries: int = 20) -> np.ndarray:
    """Best of ``tries`` jittered Latin hypercubes by minimum pairwise distance.

    Above ``MAXIMIN_LIMIT`` points the pairwise distances are too costly and a
    single jittered hypercube is returned.
    """
    if n < 2 or n > MAXIMIN_LIMIT:
        tries = 1
    best, best_score = None, -np.inf
    for _ in range(tries):
        perms = np.argsort(rng.random((n, d)), axis=0)
        design = (perms + rng.random((n, d))) / n
        if tries > 1:
            diff = design[:, None, :] - design[None, :, :]
            dist = np.einsum("ijk,ijk->ij", diff, diff)
            score = dist[np.triu_indices(n, 1)].min()
        else:
            score = 0.0
        if score > best_score:
            best, best_score = design, score
    return best


def lhs_grid(M: int, d: int, seedset: Sequence[int] | None, rng: np.random.Generator) -> CandidateGrid:
    if M < 1 or d < 1:
        raise ValueError("M and d must be >= 1")
    x = maximin_lhs(M, d, rng)
    if seedset is None:
        seeds = np.zeros(M, dtype=np.int64)
    else:
        seeds = rng.choice(np.asarray(list(seedset), dtype=np.int64), size=M)
    return CandidateGrid(x, seeds, M)


def likelihood(d_tilde, sigma_obs: float) -> np.ndarray:
    """Normal(0, sigma_obs^2) density at the sampled discrepancy."""
    if not sigma_obs > 0:
        raise ValueError("sigma_obs must be positive")
    d_tilde = np.asarray(d_tilde, dtype=float)
    return np.exp(-0.5 * (d_tilde / sigma_obs) ** 2) / (sigma_obs * math.sqrt(2.0 * math.pi))


def log_likelihood(d_tilde, sigma_obs: float) -> np.ndarray:
    d_tilde = np.asarray(d_tilde, dtype=float)
    return -0.5 * (d_tilde / sigma_obs) ** 2 - math.log(sigma_obs * math.sqrt(2.0 * math.pi))


def default_sigma_obs(discrepancies, fraction: float = 0.1, floor: float = 1e-6) -> float:
    d = np.asarray(discrepancies, dtype=float)
    d = d[np.isfinite(d)]
    sd = float(np.std(d)) if d.size > 1 else 0.0
    return max(fraction * sd, floor)


def filter_grid(
    grid: CandidateGrid,
    weights,
    rng: np.random.Generator,
    discrepancy=None,
) -> tuple[CandidateGrid, np.ndarray]:
    """Importance-resample M points with replacement and keep the unique survivors.

    Returns the filtered grid and the surviving indices into ``grid`` (sorted).
    If every weight underflowed to zero, the top ceil(M/10) points by lowest
    ``discrepancy`` survive instead.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(grid),):
        raise ValueError("one weight per grid point required")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    M = len(grid)
    total = w.sum()
    if total > 0:
        draws = rng.choice(M, size=M, replace=True, p=w / total)
        kept = np.unique(draws)
    else:
        if discrepancy is None:
            raise ValueError("all weights are zero and no discrepancy sample was given")
        k = math.ceil(M / 10)
        kept = np.sort(np.argsort(np.asarray(discrepancy, dtype=float), kind="stable")[:k])
    return grid.subset(kept), kept


def mh_acceptance(L_can, L_cur, q_forward=1.0, q_backward=1.0):
    """min{1, L_can q(x_can|x) / (L_cur q(x|x_can))}; a zero denominator accepts."""
    num = np.asarray(L_can, dtype=float) * np.asarray(q_forward, dtype=float)
    den = np.asarray(L_cur, dtype=float) * np.asarray(q_backward, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    out = np.minimum(1.0, ratio)
    return float(out) if out.ndim == 0 else out


def mh_accept(alpha: float, rng: np.random.Generator) -> bool:
    return bool(rng.random() < alpha)


@dataclass
class DensifyResult:
    grid: CandidateGrid
    d_tilde: np.ndarray
    proposals: int
    accepted: int
    stalled: bool = False
    warnings: list[str] = field(default_factory=list)


def densify(
    grid: CandidateGrid,
    d_tilde,
    surrogate: Surrogate,
    proposal: ProposalSpec,
    seedset: Sequence[int] | None,
    sigma_obs: float,
    rng: np.random.Generator,
    max_proposals: int | None = None,
) -> DensifyResult:
    """Grow ``grid`` back to its capacity with MH-accepted candidates.

    ``d_tilde`` holds the sampled discrepancy of each current point; accepted
    candidates carry the marginal draw they were accepted with. Seeds are tried
    in a fresh random order per proposal and the first accepted new pair wins.
    """
    M = grid.capacity
    d_tilde = np.asarray(d_tilde, dtype=float)
    if len(grid) == 0:
        raise ValueError("cannot densify an empty grid")
    if d_tilde.shape != (len(grid),):
        raise ValueError("one sampled discrepancy per grid point required")
    xs = list(grid.x)
    ss = list(grid.seeds)
    logL = list(log_likelihood(d_tilde, sigma_obs))
    dt = list(d_tilde)
    seen = set(grid.keys())
    seed_arr = np.zeros(1, dtype=np.int64) if seedset is None else np.asarray(list(seedset), dtype=np.int64)
    max_proposals = 50 * M if max_proposals is None else max_proposals

    proposals = accepted = 0
    while len(xs) < M and proposals < max_proposals:
        proposals += 1
        i = int(rng.integers(len(xs)))
        x_cur = xs[i]
        x_can = proposal.propose(x_cur, rng)
        order = rng.permutation(len(seed_arr))
        cand_seeds = seed_arr[order]
        d_can = surrogate.sample_marginal(np.repeat(x_can[None, :], len(cand_seeds), 0), cand_seeds, rng)
        logL_can = log_likelihood(d_can, sigma_obs)
        log_q = proposal.log_q_ratio(x_can, x_cur)
        for j, r in enumerate(cand_seeds):
            log_alpha = min(0.0, float(logL_can[j]) - logL[i] + log_q)
            if rng.random() < math.exp(log_alpha):
                key = point_key(x_can, r)
                if key in seen:
                    continue
                seen.add(key)
                xs.append(x_can)
                ss.append(int(r))
                logL.append(float(logL_can[j]))
                dt.append(float(d_can[j]))
                accepted += 1
                break

    result_warnings = []
    stalled = len(xs) < M
    if stalled:
        missing = M - len(xs)
        fill = lhs_grid(missing, grid.dim, None if seedset is None else seed_arr, rng)
        d_fill = surrogate.sample_marginal(fill.x, fill.seeds, rng)
        for row, s, dv in zip(fill.x, fill.seeds, d_fill):
            if point_key(row, s) not in seen:
                seen.add(point_key(row, s))
                xs.append(row)
                ss.append(int(s))
                dt.append(float(dv))
        result_warnings.append(
            f"densify stalled after {proposals} proposals; filled {missing} slots with LHS points"
        )
    new_grid = CandidateGrid(np.array(xs), np.array(ss, dtype=np.int64), M)
    return DensifyResult(new_grid, np.array(dt), proposals, accepted, stalled, result_warnings)
