"""Trajectory-quality metrics: RMSE, dual objective, threshold counts and rAUC."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_THRESHOLDS = (15.0, 20.0, 25.0, 30.0)


class ShapeError(ValueError):
    pass


def rmse(sim, obs) -> float:
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if sim.shape != obs.shape:
        raise ShapeError(f"series shapes differ: {sim.shape} vs {obs.shape}")
    return float(np.sqrt(np.mean((sim - obs) ** 2)))


def dual_objective(sim: Sequence, obs: Sequence) -> float:
    """Sum over two outputs of |obs_t - sim_t| / obs_t.

    ``sim`` and ``obs`` are pairs of series (e.g. hospitalizations, deaths).
    Times where the observed value is zero are dropped with a RuntimeWarning.
    """
    if len(sim) != 2 or len(obs) != 2:
        raise ShapeError("dual objective needs exactly two simulated and two observed series")
    total = 0.0
    dropped = 0
    for s, o in zip(sim, obs):
        s = np.asarray(s, dtype=float)
        o = np.asarray(o, dtype=float)
        if s.shape != o.shape:
            raise ShapeError(f"series shapes differ: {s.shape} vs {o.shape}")
        keep = o != 0
        dropped += int((~keep).sum())
        total += float(np.sum(np.abs(o[keep] - s[keep]) / o[keep]))
    if dropped:
        warnings.warn(f"dual objective: {dropped} zero observed values excluded", RuntimeWarning, stacklevel=2)
    return total


def cumulative_quality(discrepancies, threshold: float, nmax: int | None = None) -> np.ndarray:
    """QT_t for t = 1..nmax: evaluations strictly below ``threshold`` among the first t.

    A trace shorter than ``nmax`` (early termination) is padded with its final count.
    """
    d = np.asarray(discrepancies, dtype=float)
    nmax = len(d) if nmax is None else nmax
    qt = np.cumsum(d < threshold)
    if len(qt) < nmax:
        last = qt[-1] if len(qt) else 0
        qt = np.concatenate([qt, np.full(nmax - len(qt), last)])
    return qt[:nmax]


def rauc_from_curve(qt) -> float:
    qt = np.asarray(qt, dtype=float)
    n = len(qt)
    if n < 2:
        return 0.0
    return float(np.sum(0.5 * (qt[1:] + qt[:-1])) / (n * n))


def rauc(discrepancies, threshold: float, nmax: int | None = None) -> float:
    """Trapezoidal area under QT_t over t = 1..Nmax, divided by Nmax^2."""
    return rauc_from_curve(cumulative_quality(discrepancies, threshold, nmax))


@dataclass
class QualityReport:
    thresholds: tuple[float, ...]
    counts: dict[float, int]
    proportions: dict[float, float]
    rauc: dict[float, float]
    curves: dict[float, np.ndarray]
    nmax: int


def threshold_counts(discrepancies, thresholds=DEFAULT_THRESHOLDS, nmax: int | None = None) -> QualityReport:
    d = np.asarray(discrepancies, dtype=float)
    nmax = len(d) if nmax is None else nmax
    thresholds = tuple(float(t) for t in thresholds)
    counts, props, areas, curves = {}, {}, {}, {}
    for t in thresholds:
        curve = cumulative_quality(d, t, nmax)
        counts[t] = int(curve[-1]) if len(curve) else 0
        props[t] = counts[t] / nmax if nmax else 0.0
        areas[t] = rauc_from_curve(curve)
        curves[t] = curve
    return QualityReport(thresholds, counts, props, areas, curves, nmax)
