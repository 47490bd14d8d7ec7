"""Batch Thompson Sampling over candidate grids, in five method variants.

=======  ==========  =========  =========================================
method   surrogate   grid       seeds
=======  ==========  =========  =========================================
aCRN     CRN-GP      adaptive   fixed set of n_rep seeds
fCRN     CRN-GP      fixed      fixed set; stops when the grid runs out
fgCRN    CRN-GP      fixed      fixed set, fresh seeds once an x used all
aHet     het (SK)    adaptive   fresh random seed per evaluation
fHet     het (SK)    fixed      fresh random seed per evaluation
=======  ==========  =========  =========================================
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .crngp import CrnSurrogate, SeedSet, fit_crn_hyperparameters
from .errors import ConfigError, ExhaustionError, SimulatorError
from .gp import EvaluationDataset, HyperBounds, KernelSpec
from .grid import (
    CandidateGrid,
    ProposalSpec,
    default_sigma_obs,
    densify,
    filter_grid,
    lhs_grid,
    likelihood,
    maximin_lhs,
)
from .het import HetSurrogate, aggregate_replicates, fit_het_hyperparameters
from .metrics import dual_objective, rmse
from .sir import Trajectory

log = logging.getLogger(__name__)

METHODS = ("aCRN", "fCRN", "fgCRN", "aHet", "fHet")
CRN_METHODS = ("aCRN", "fCRN", "fgCRN")
ADAPTIVE_METHODS = ("aCRN", "aHet")
SEED_RANGE = 2**31 - 1

Simulator = Callable[[np.ndarray, int], Trajectory]


@dataclass
class TsConfig:
    method: str = "aCRN"
    Nmax: int = 300
    n_init: int = 5
    n_rep: int = 10
    J: int = 10
    M: int = 100
    lower: tuple[float, ...] = (0.01, 0.01)
    upper: tuple[float, ...] = (1.0, 1.0)
    master_seed: int = 0
    family: str = "matern52"
    bounds: HyperBounds = field(default_factory=HyperBounds)
    sigma_obs: float | None = None
    sigma_obs_fraction: float = 0.1
    proposal: ProposalSpec = field(default_factory=ProposalSpec)
    output: str = "I"
    discrepancy: str = "rmse"
    dual_outputs: tuple[str, str] = ("H", "D")
    refit_cutoff: int = 200
    refit_every: int = 5
    workers: int = 1

    @property
    def N0(self) -> int:
        return self.n_init * self.n_rep

    @property
    def dim(self) -> int:
        return len(self.lower)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("Nmax", "n_init", "n_rep", "J", "M"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.N0 > self.Nmax:
            raise ConfigError(f"N0 = n_init * n_rep = {self.N0} exceeds Nmax = {self.Nmax}")
        if len(self.lower) != len(self.upper) or not all(lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ConfigError("parameter box needs lower < upper in every dimension")
        if self.sigma_obs is not None and not self.sigma_obs > 0:
            raise ConfigError("sigma_obs must be positive")
        if self.discrepancy not in ("rmse", "dual"):
            raise ConfigError(f"unknown discrepancy {self.discrepancy!r}")

    def to_unit(self, x) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return (np.asarray(x, float) - lo) / (hi - lo)

    def from_unit(self, u) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + np.asarray(u, float) * (hi - lo)


@dataclass
class TraceRecord:
    index: int
    x: tuple[float, ...]
    seed: int
    discrepancy: float
    iteration: int
    wall: float
    failed: bool = False


@dataclass
class IterationInfo:
    iteration: int
    n_train: int
    refit: bool
    sigma_obs: float | None = None
    grid_after_filter: int | None = None
    densify_proposals: int | None = None


@dataclass
class OptimizationTrace:
    config: TsConfig
    seedset: tuple[int, ...]
    records: list[TraceRecord] = field(default_factory=list)
    trajectories: list[Trajectory | None] = field(default_factory=list)
    iterations: list[IterationInfo] = field(default_factory=list)
    spec: KernelSpec | None = None
    warnings: list[str] = field(default_factory=list)
    exhausted: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def discrepancies(self) -> np.ndarray:
        return np.array([r.discrepancy for r in self.records])

    @property
    def seeds(self) -> np.ndarray:
        return np.array([r.seed for r in self.records], dtype=np.int64)

    @property
    def x(self) -> np.ndarray:
        return np.array([r.x for r in self.records])


def streams(master_seed: int) -> dict[str, np.random.Generator]:
    names = ("design", "grid", "sample", "fit", "seeds")
    children = np.random.SeedSequence(master_seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def draw_seedset(n: int, rng: np.random.Generator) -> SeedSet:
    seeds: list[int] = []
    while len(seeds) < n:
        s = int(rng.integers(SEED_RANGE))
        if s not in seeds:
            seeds.append(s)
    return SeedSet(tuple(seeds))


def fresh_seed(used: set[int], rng: np.random.Generator, exclude: Sequence[int] = ()) -> int:
    while True:
        s = int(rng.integers(SEED_RANGE))
        if s not in used and s not in exclude:
            return s


def initial_design(
    config: TsConfig, rng: np.random.Generator, seedset: SeedSet, seed_rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """n_init LHS points on the unit cube, each with n_rep seeds.

    Fixed-seed methods cross every point with the whole seed set; het methods
    draw n_rep fresh distinct seeds per point.
    """
    seed_rng = rng if seed_rng is None else seed_rng
    X = maximin_lhs(config.n_init, config.dim, rng)
    rows, seeds = [], []
    for x in X:
        if config.method in CRN_METHODS:
            chosen = list(seedset)
        else:
            chosen = []
            while len(chosen) < config.n_rep:
                chosen.append(fresh_seed(set(chosen), seed_rng))
        for s in chosen:
            rows.append(x)
            seeds.append(s)
    return np.array(rows), np.array(seeds, dtype=np.int64)


def select_batch(draws, n_candidates: int, evaluated=None, allow_repeats: bool = False) -> list[int]:
    """Grid indices minimizing each joint draw.

    Already-evaluated indices are skipped; without ``allow_repeats`` an index
    picked by an earlier draw in the batch is skipped too, so a colliding draw
    falls to its next-best point. Ties go to the lowest index. A draw with no
    admissible point contributes nothing; if no point is admissible at all,
    ExhaustionError is raised.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[1] != n_candidates:
        raise ValueError("draws must be indexed like the grid")
    blocked = np.zeros(n_candidates, dtype=bool)
    if evaluated is not None:
        blocked[np.asarray(sorted(evaluated), dtype=np.int64)] = True
    if blocked.all():
        raise ExhaustionError("every grid point has been evaluated")
    chosen: list[int] = []
    for draw in draws:
        for idx in np.argsort(draw, kind="stable"):
            if not blocked[idx]:
                chosen.append(int(idx))
                if not allow_repeats:
                    blocked[idx] = True
                break
    return chosen


class _Evaluator:
    def __init__(self, config: TsConfig, simulator: Simulator, observed: Trajectory):
        self.config = config
        self.simulator = simulator
        self.observed = observed

    def discrepancy(self, traj: Trajectory) -> float:
        c = self.config
        if c.discrepancy == "dual":
            a, b = c.dual_outputs
            return dual_objective((traj[a], traj[b]), (self.observed[a], self.observed[b]))
        return rmse(traj[c.output], self.observed[c.output])

    def __call__(self, job: tuple[np.ndarray, int]):
        x, seed = job
        last = None
        for _ in range(2):
            try:
                traj = self.simulator(x, seed)
                return traj, self.discrepancy(traj), None
            except (SimulatorError, KeyError, ValueError) as exc:
                last = exc
        return None, float("inf"), f"evaluation at x={tuple(x)}, seed={seed} failed twice: {last}"


class _Run:
    """State of one optimization run; ``run_ts`` drives it."""

    def __init__(self, config: TsConfig, simulator: Simulator, observed: Trajectory):
        config.validate()
        self.c = config
        self.rng = streams(config.master_seed)
        self.seedset = draw_seedset(config.n_rep, self.rng["seeds"])
        self.trace = OptimizationTrace(config, self.seedset.seeds)
        self.evaluate = _Evaluator(config, simulator, observed)
        self.X = np.zeros((0, config.dim))
        self.S = np.zeros(0, dtype=np.int64)
        self.D = np.zeros(0)
        self.used: dict[bytes, set[int]] = {}
        self.spec: KernelSpec | None = None
        self.surrogate = None
        self.t0 = time.perf_counter()
        self.is_crn = config.method in CRN_METHODS

    # -- bookkeeping -------------------------------------------------------
    def run_batch(self, Xu: np.ndarray, seeds: Sequence[int], iteration: int) -> None:
        jobs = [(self.c.from_unit(x), int(s)) for x, s in zip(Xu, seeds)]
        if self.c.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.c.workers) as pool:
                results = list(pool.map(self.evaluate, jobs))
        else:
            results = [self.evaluate(j) for j in jobs]
        for (x, s), xu, (traj, d, err) in zip(jobs, Xu, results):
            if err:
                self.trace.warnings.append(err)
            self.trace.records.append(TraceRecord(
                index=len(self.trace.records), x=tuple(float(v) for v in x), seed=s,
                discrepancy=float(d), iteration=iteration,
                wall=time.perf_counter() - self.t0, failed=err is not None,
            ))
            self.trace.trajectories.append(traj)
            self.used.setdefault(np.asarray(xu, float).tobytes(), set()).add(s)
        self.X = np.vstack([self.X, Xu])
        self.S = np.concatenate([self.S, np.asarray(seeds, dtype=np.int64)])
        self.D = np.concatenate([self.D, [r.discrepancy for r in self.trace.records[-len(jobs):]]])

    @property
    def n(self) -> int:
        return len(self.trace.records)

    def training_data(self) -> EvaluationDataset:
        ok = np.isfinite(self.D)
        return EvaluationDataset(self.X[ok], self.S[ok], self.D[ok])

    def refit(self, iteration: int) -> tuple[int, bool]:
        data = self.training_data()
        do_fit = self.spec is None or len(data) <= self.c.refit_cutoff or iteration % self.c.refit_every == 0
        if self.is_crn:
            if do_fit:
                self.spec = fit_crn_hyperparameters(
                    data, self.c.family, self.c.bounds, self.rng["fit"], init=self.spec
                )
            self.surrogate = CrnSurrogate(data, self.spec)
        else:
            design = aggregate_replicates(data)
            if do_fit:
                self.spec = fit_het_hyperparameters(
                    design, self.c.family, self.c.bounds, self.rng["fit"], init=self.spec
                )
            self.surrogate = HetSurrogate(design, self.spec)
        if do_fit and self.spec.warning:
            self.trace.warnings.append(f"iteration {iteration}: {self.spec.warning}")
        return len(data), do_fit

    def sigma_obs(self) -> float:
        if self.c.sigma_obs is not None:
            return self.c.sigma_obs
        return default_sigma_obs(self.D, self.c.sigma_obs_fraction)

    # -- grids -------------------------------------------------------------
    def initial_grid(self) -> CandidateGrid:
        c, rng = self.c, self.rng["grid"]
        if self.is_crn:
            return lhs_grid(c.M, c.dim, self.seedset.seeds, rng)
        return lhs_grid(c.M, c.dim, None, rng)

    def evaluated_mask(self, grid: CandidateGrid) -> np.ndarray:
        return np.array([
            int(s) in self.used.get(row.tobytes(), ()) for row, s in zip(grid.x, grid.seeds)
        ], dtype=bool)

    def refresh_flexible_slots(self, grid: CandidateGrid) -> CandidateGrid:
        """fgCRN: an evaluated slot keeps its x but takes a new seed.

        Unused seeds from the fixed set come first; only once an x has been
        run with every fixed seed does it get a fresh one from outside the set.
        """
        seeds = grid.seeds.copy()
        evaluated = self.evaluated_mask(grid)
        for i in np.flatnonzero(evaluated):
            row = grid.x[i]
            used = self.used.get(row.tobytes(), set())
            on_grid = {int(s) for s, r in zip(seeds, grid.x) if np.array_equal(r, row)}
            spare = [s for s in self.seedset.seeds if s not in used and s not in on_grid]
            if spare:
                seeds[i] = spare[int(self.rng["seeds"].integers(len(spare)))]
            else:
                seeds[i] = fresh_seed(used | on_grid, self.rng["seeds"], exclude=self.seedset.seeds)
        return CandidateGrid(grid.x, seeds, grid.capacity)

    def adapt(self, grid: CandidateGrid, info: IterationInfo) -> CandidateGrid:
        sigma = self.sigma_obs()
        info.sigma_obs = sigma
        # CRN grids share one joint draw; the x-only het grid uses marginal draws
        if self.is_crn:
            d_tilde = self.surrogate.sample_joint(grid.x, grid.seeds, 1, self.rng["sample"])[0]
        else:
            d_tilde = self.surrogate.sample_marginal(grid.x, grid.seeds, self.rng["sample"])
        weights = likelihood(d_tilde, sigma)
        filtered, kept = filter_grid(grid, weights, self.rng["grid"], d_tilde)
        info.grid_after_filter = len(filtered)
        if len(filtered) >= grid.capacity:
            return filtered
        res = densify(
            filtered, d_tilde[kept], self.surrogate, self.c.proposal,
            self.seedset.seeds if self.is_crn else None, sigma, self.rng["grid"],
        )
        info.densify_proposals = res.proposals
        for w in res.warnings:
            self.trace.warnings.append(f"iteration {info.iteration}: {w}")
        return res.grid


def run_ts(config: TsConfig, simulator: Simulator, observed: Trajectory) -> OptimizationTrace:
    """Run one Thompson Sampling optimization until Nmax evaluations.

    Deterministic given ``config.master_seed`` and a deterministic simulator.
    fCRN stops early with ``trace.exhausted`` set when its grid is used up.
    """
    run = _Run(config, simulator, observed)
    c = run.c
    if not len(next(iter(observed.outputs.values()), [])):
        raise ConfigError("observed trajectory is empty")

    X0, S0 = initial_design(c, run.rng["design"], run.seedset, run.rng["seeds"])
    run.run_batch(X0, S0, iteration=0)
    n_train, did_fit = run.refit(0)
    grid = run.initial_grid()
    iteration = 1
    refreshed = False
    while run.n < c.Nmax:
        info = IterationInfo(iteration, n_train, refit=did_fit)
        if c.method in ADAPTIVE_METHODS:
            grid = run.adapt(grid, info)
        J = min(c.J, c.Nmax - run.n)
        draws = run.surrogate.sample_joint(grid.x, grid.seeds, J, run.rng["sample"])
        if run.is_crn:
            evaluated = set(np.flatnonzero(run.evaluated_mask(grid)).tolist())
        else:
            evaluated = None
        try:
            chosen = select_batch(draws, len(grid), evaluated, allow_repeats=not run.is_crn)
        except ExhaustionError:
            if c.method == "fCRN":
                run.trace.exhausted = True
                run.trace.warnings.append(
                    f"grid exhausted after {run.n} evaluations (iteration {iteration}); stopping"
                )
                break
            if refreshed:
                run.trace.warnings.append(f"grid exhausted twice in a row at iteration {iteration}; stopping")
                run.trace.exhausted = True
                break
            run.trace.warnings.append(f"grid exhausted at iteration {iteration}; drawing a fresh LHS grid")
            grid = lhs_grid(c.M, c.dim, run.seedset.seeds if run.is_crn else None, run.rng["grid"])
            refreshed = True
            continue
        refreshed = False
        chosen = sorted(chosen)
        Xb = grid.x[chosen]
        if run.is_crn:
            Sb = grid.seeds[chosen]
        else:
            Sb = []
            for row in Xb:
                used = run.used.setdefault(row.tobytes(), set())
                s = fresh_seed(used | set(Sb), run.rng["seeds"])
                Sb.append(s)
            Sb = np.asarray(Sb, dtype=np.int64)
        run.run_batch(Xb, Sb, iteration)
        if c.method == "fgCRN":
            grid = run.refresh_flexible_slots(grid)
        run.trace.iterations.append(info)
        if run.n < c.Nmax:
            n_train, did_fit = run.refit(iteration)
        iteration += 1
    run.trace.spec = run.spec
    return run.trace
