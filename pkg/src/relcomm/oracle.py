"""Brute-force references: interval-partition DP, exhaustive enumeration and
grid search over the sender's penal families."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .core import DomainError, PoolingSet, Prior, QuadraticModel

ENUMERATION_LIMIT = 20
DEFAULT_ORACLE_N = 2000

MINUS = "minus_ell"
PLUS = "plus_ell"


@dataclass(frozen=True)
class DiscretizedProblem:
    """Finite carrier: cells with masses, means and a payoff of the mean."""

    edges: np.ndarray
    cell_mass: np.ndarray
    cell_mean: np.ndarray
    ustar_eval: Callable = field(compare=False)

    def __post_init__(self):
        if len(self.cell_mass) != len(self.cell_mean) or len(self.edges) != len(self.cell_mass) + 1:
            raise DomainError("inconsistent discretization")
        if np.any(np.asarray(self.cell_mass) <= 0):
            raise DomainError("cell masses must be positive")
        if np.any(np.diff(self.cell_mean) <= 0):
            raise DomainError("cell means must be strictly increasing")

    @classmethod
    def from_prior(cls, prior: Prior, ustar_eval: Callable, n: int = DEFAULT_ORACLE_N) -> DiscretizedProblem:
        edges = np.linspace(0.0, 1.0, n + 1)
        mass = np.diff(prior.cdf(edges))
        mean = prior.interval_mean(edges[:-1], edges[1:])
        return cls(edges, mass, np.asarray(mean), ustar_eval)

    @property
    def n(self) -> int:
        return len(self.cell_mass)

    @cached_property
    def _prefix(self) -> tuple[np.ndarray, np.ndarray]:
        mass = np.concatenate([[0.0], np.cumsum(self.cell_mass)])
        moment = np.concatenate([[0.0], np.cumsum(self.cell_mass * self.cell_mean)])
        return mass, moment

    def segment_values(self, j: int) -> np.ndarray:
        """Values of segments [i, j) for every i < j, as one vector."""
        mass, moment = self._prefix
        i = np.arange(j)
        seg_mass = mass[j] - mass[i]
        seg_mean = np.where(j - i == 1, self.cell_mean[np.minimum(i, j - 1)], (moment[j] - moment[i]) / seg_mass)
        return seg_mass * np.asarray(self.ustar_eval(seg_mean), dtype=float)

    def as_prior(self) -> Prior:
        """Piecewise-constant prior with the cell masses spread uniformly."""
        widths = np.diff(self.edges)
        density = self.cell_mass / widths
        density = density / float(np.sum(density * widths))
        return Prior(tuple(self.edges), tuple(density))

    def pooling_from_cuts(self, cuts: list[int]) -> PoolingSet:
        """Segments between consecutive cut indices; multi-cell ones are pools."""
        pairs = [(self.edges[i], self.edges[j]) for i, j in zip(cuts, cuts[1:]) if j - i > 1]
        return PoolingSet(tuple((float(lo), float(hi)) for lo, hi in pairs))


class PartitionResult(NamedTuple):
    pooling: PoolingSet
    value: float


def dp_segments(problem: DiscretizedProblem) -> tuple[list[int], float]:
    """Optimal contiguous segmentation; ties prefer fewer segments."""
    n = problem.n
    best = np.zeros(n + 1)
    count = np.zeros(n + 1, dtype=int)
    back = np.zeros(n + 1, dtype=int)
    for j in range(1, n + 1):
        vals = best[:j] + problem.segment_values(j)
        top = vals.max()
        ties = np.flatnonzero(vals == top)
        k = ties[np.argmin(count[ties])]
        best[j], back[j], count[j] = top, k, count[k] + 1
    cuts = [n]
    while cuts[-1] > 0:
        cuts.append(int(back[cuts[-1]]))
    return cuts[::-1], float(best[n])


def dp_optimal_partition(problem: DiscretizedProblem) -> PartitionResult:
    cuts, value = dp_segments(problem)
    return PartitionResult(problem.pooling_from_cuts(cuts), value)


def enumerate_partitions(problem: DiscretizedProblem) -> PartitionResult:
    """Exhaustive search over all 2^(n−1) segmentations (n ≤ 20)."""
    n = problem.n
    if n > ENUMERATION_LIMIT:
        raise DomainError(f"enumeration refused for n={n} > {ENUMERATION_LIMIT}")
    table = [None] + [problem.segment_values(j) for j in range(1, n + 1)]
    best_value, best_cuts = -np.inf, None
    for mask in itertools.product((False, True), repeat=n - 1):
        cuts = [0, *(k + 1 for k, on in enumerate(mask) if on), n]
        total = 0.0
        for i, j in zip(cuts, cuts[1:]):
            total = total + table[j][i]
        if total > best_value or (total == best_value and len(cuts) < len(best_cuts)):
            best_value, best_cuts = total, cuts
    return PartitionResult(problem.pooling_from_cuts(best_cuts), float(best_value))


# --------------------------------------------------------------------------
# Sender's penal families
# --------------------------------------------------------------------------


def penal_family_value(model: QuadraticModel, ell: float, threshold, family: str, prior: Prior | None = None):
    """Sender's worst-equilibrium objective for a one-threshold penal family.

    `minus_ell` pools [0, t) and sets every decision to ρ_R(m) − ℓ; the
    punishment type is θ = 0. `plus_ell` pools (t, 1] with ρ_R(m) + ℓ and
    punishment type θ = 1. The objective is u_S(d^p, θ^p) plus the expected
    envelope integral of (1 − ac)·ρ(μ(s)) from θ^p, evaluated exactly from
    the prior's partial moments. Vectorized in `threshold`.
    """
    prior = model.prior if prior is None else prior
    t = np.clip(np.asarray(threshold, dtype=float), 0.0, 1.0)
    a, b, k = model.a, model.b, model.sender_slope
    if family == MINUS:
        m = np.where(t > 0, prior.interval_mean(0.0, np.where(t > 0, t, 1.0)), 0.0)
        d = a * m + b - ell
        # ∫_x^y (1 − F) and ∫_x^y s(1 − F)
        area_pool = t - prior.int_cdf(t)
        area_rest = (1.0 - t) - (prior.int_cdf(1.0) - prior.int_cdf(t))
        moment_rest = 0.5 * (1.0 - t * t) - (prior.int_s_cdf(1.0) - prior.int_s_cdf(t))
        out = model.u_s(d, 0.0) + k * (d * area_pool + a * moment_rest + (b - ell) * area_rest)
    elif family == PLUS:
        m = np.where(t < 1, prior.interval_mean(np.where(t < 1, t, 0.0), 1.0), 1.0)
        d = a * m + b + ell
        area_pool = prior.int_cdf(1.0) - prior.int_cdf(t)
        out = model.u_s(d, 1.0) - k * (a * prior.int_s_cdf(t) + (b + ell) * prior.int_cdf(t) + d * area_pool)
    else:
        raise DomainError(f"unknown penal family {family!r}")
    return out if np.ndim(out) else float(out)


class PenalSearch(NamedTuple):
    family: str
    threshold: float
    value: float


def oracle_worst_sender(problem: DiscretizedProblem, model: QuadraticModel, ell: float) -> PenalSearch:
    """Minimize both penal families over thresholds on the cell edges.

    Ties prefer the `minus_ell` family and the smaller pool.
    """
    prior = problem.as_prior()
    grid = problem.edges
    best = None
    for family in (MINUS, PLUS):
        vals = np.asarray(penal_family_value(model, ell, grid, family, prior))
        if family == PLUS:
            # pool size grows as the threshold falls; scan from the top
            order = np.arange(len(grid))[::-1]
        else:
            order = np.arange(len(grid))
        k = order[int(np.argmin(vals[order]))]
        if best is None or vals[k] < best.value:
            best = PenalSearch(family, float(grid[k]), float(vals[k]))
    return best
