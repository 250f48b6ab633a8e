"""Public monotone signals: per-cell equilibria under a common leeway and the
comparison of payoff sets across nested signals.

Each signal cell [lo, hi] is mapped affinely onto [0, 1]. With θ = lo + w·x and
d = lo + w·y the quadratic payoffs keep their form up to a factor w² and an
additive term linear in x, with the receiver bias becoming
b̃ = ((a − 1)·lo + b)/w and the leeway ℓ/w. Cells are solved in those
coordinates and their values mapped back and averaged by cell mass; the
leeway is then updated from the aggregate surplus.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DomainError, PayoffSimplex, QuadraticModel
from .equilibrium import (
    FIXED_POINT_TOL,
    MAX_ITER,
    PenalProfile,
    _leeway_map,
    largest_fixed_point,
    receiver_worst,
    sender_worst,
    solve_pooling,
)
from .persuasion import PersuasionSolution

FULLY_INFORMATIVE_N = 1000
RICHARDSON_TOL = 1e-4
COMPARE_TOL = 1e-8


@dataclass(frozen=True)
class SignalPartition:
    """Public signal revealing which of the consecutive cells holds θ."""

    cutpoints: tuple[float, ...] = ()

    def __post_init__(self):
        cuts = tuple(float(x) for x in self.cutpoints)
        object.__setattr__(self, "cutpoints", cuts)
        if any(not 0.0 < x < 1.0 for x in cuts):
            raise DomainError("signal cutpoints must lie strictly inside (0, 1)")
        if any(hi <= lo for lo, hi in zip(cuts, cuts[1:])):
            raise DomainError("signal cutpoints must be strictly increasing")

    @classmethod
    def parse(cls, text: str | None) -> SignalPartition:
        """Comma-separated cutpoints; an empty string is the uninformative signal."""
        if text is None or not text.strip():
            return cls()
        try:
            return cls(tuple(float(x) for x in text.split(",") if x.strip()))
        except ValueError as exc:
            raise DomainError(f"bad signal cutpoints {text!r}") from exc

    @classmethod
    def uniform_cells(cls, n: int) -> SignalPartition:
        """n equal cells; large n stands in for a fully informative signal."""
        return cls(tuple(k / n for k in range(1, n)))

    @property
    def cells(self) -> list[tuple[float, float]]:
        edges = (0.0, *self.cutpoints, 1.0)
        return list(zip(edges, edges[1:]))


class RefineCheck(NamedTuple):
    refines: bool
    strictly: bool


def refine_check(psi: SignalPartition, psi_hat: SignalPartition) -> RefineCheck:
    """Does ψ refine ψ̂? Cells are nested exactly when ψ̂'s cuts are among ψ's.

    Every cell has positive mass under a positive density, so an extra cut
    always makes the refinement strict.
    """
    mine = set(psi.cutpoints)
    refines = all(x in mine for x in psi_hat.cutpoints)
    return RefineCheck(refines, refines and len(mine) > len(psi_hat.cutpoints))


@dataclass(frozen=True)
class CellEquilibrium:
    lo: float
    hi: float
    mass: float
    model: QuadraticModel
    solution: PersuasionSolution
    penal: PenalProfile
    v_bar: float
    v_s_min: float
    v_r_min: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_state(self, x):
        return self.lo + self.width * np.asarray(x, dtype=float)

    def pooling_intervals(self) -> list[list[float]]:
        return [[float(self.to_state(lo)), float(self.to_state(hi))] for lo, hi in self.solution.pooling]

    def penal_outcome(self, theta):
        """Worst-sender decision in original units at states of this cell."""
        x = (np.asarray(theta, dtype=float) - self.lo) / self.width
        return self.to_state(self.penal.outcome(self.model, np.clip(x, 0.0, 1.0)))


def cell_model(model: QuadraticModel, lo: float, hi: float) -> QuadraticModel:
    w = hi - lo
    return QuadraticModel(model.a, ((model.a - 1) * lo + model.b) / w, model.c, model.delta,
                          model.prior.restrict(lo, hi))


def solve_cell(model: QuadraticModel, lo: float, hi: float, ell: float) -> CellEquilibrium:
    """Restricted persuasion problem and worst payoffs on one cell, in original units."""
    w = hi - lo
    sub = cell_model(model, lo, hi)
    solution = solve_pooling(sub, ell / w)
    penal = sender_worst(sub, ell / w)
    x_mean = sub.prior.mean
    c, beta = model.c, model.a * lo + model.b
    # additive terms of the joint and receiver payoffs; both are linear in x
    add_u = 0.5 * lo * lo + lo * w * x_mean
    add_r = c * (beta * lo + model.a * lo * w * x_mean - 0.5 * lo * lo)
    scale = w * w
    return CellEquilibrium(
        lo, hi, float(model.prior.mass(lo, hi)), sub, solution, penal,
        scale * solution.value + add_u,
        scale * penal.value + add_u - add_r,
        scale * receiver_worst(sub) + add_r,
    )


@dataclass(frozen=True)
class SignalEquilibrium:
    psi: SignalPartition
    ell: float
    simplex: PayoffSimplex
    cells: tuple[CellEquilibrium, ...]
    residual: float
    iterations: int

    @property
    def solutions(self) -> list[PersuasionSolution]:
        return [cell.solution for cell in self.cells]

    def penal_monotonicity(self, tol: float = 1e-12):
        """First adjacent cell pair where the worst-sender outcome drops, or None."""
        for left, right in zip(self.cells, self.cells[1:]):
            top = float(left.penal_outcome(left.hi))
            bottom = float(right.penal_outcome(right.lo))
            if bottom < top - tol:
                return (left.lo, left.hi), (right.lo, right.hi), top, bottom
        return None


def _aggregate(cells) -> PayoffSimplex:
    mass = np.array([c.mass for c in cells])
    pick = lambda name: float(np.dot(mass, [getattr(c, name) for c in cells]))  # noqa: E731
    return PayoffSimplex(pick("v_s_min"), pick("v_r_min"), pick("v_bar"))


def _solve_cells(model, psi, ell, workers):
    if workers and workers > 1 and len(psi.cells) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return tuple(pool.map(lambda iv: solve_cell(model, iv[0], iv[1], ell), psi.cells))
    return tuple(solve_cell(model, lo, hi, ell) for lo, hi in psi.cells)


def signal_equilibrium(
    model: QuadraticModel,
    psi: SignalPartition,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = MAX_ITER,
    workers: int | None = None,
) -> SignalEquilibrium:
    """Largest common leeway consistent with the mass-weighted surplus over cells."""
    if model.delta == 0:
        cells = _solve_cells(model, psi, 0.0, workers)
        return SignalEquilibrium(psi, 0.0, _aggregate(cells), cells, 0.0, 0)
    cache: dict[float, tuple] = {}

    def step_map(ell: float) -> float:
        if ell not in cache:
            cache[ell] = _solve_cells(model, psi, ell, workers)
        return _leeway_map(model.delta, model.c, _aggregate(cache[ell]).surplus)

    start = math.sqrt(2.0 * model.delta / (1.0 - model.delta) * 0.5 * model.prior.second_moment / model.c) + 1.0
    ell, residual, iters = largest_fixed_point(step_map, start, tol, max_iter)
    cells = cache.get(ell) or _solve_cells(model, psi, ell, workers)
    return SignalEquilibrium(psi, ell, _aggregate(cells), cells, residual, iters)


# error orders under cell refinement: the worst-sender value is anchored at
# a cell endpoint and converges at first order, the others at second
REFINEMENT_ORDER = {"v_s_min": 1, "v_r_min": 2, "v_bar": 2}


class FullyInformative(NamedTuple):
    coarse: SignalEquilibrium
    fine: SignalEquilibrium
    limit: dict
    gaps: dict
    converged: bool


def fully_informative(
    model: QuadraticModel,
    n: int = FULLY_INFORMATIVE_N,
    tol: float = RICHARDSON_TOL,
    workers: int | None = None,
) -> FullyInformative:
    """Continuum limit of ever finer equal-cell signals.

    Solves with n and 2n cells and extrapolates each simplex coordinate with
    its own refinement order p: (2^p·V(2n) − V(n))/(2^p − 1). The limit is
    a plain estimate and may miss the simplex inequality by the remaining
    error. `converged` says the two runs agree within `tol` on every
    coordinate.
    """
    if n < 1:
        raise DomainError("need at least one cell")
    coarse = signal_equilibrium(model, SignalPartition.uniform_cells(n), workers=workers)
    fine = signal_equilibrium(model, SignalPartition.uniform_cells(2 * n), workers=workers)
    gaps, limit = {}, {}
    for name, order in REFINEMENT_ORDER.items():
        lo, hi = getattr(coarse.simplex, name), getattr(fine.simplex, name)
        gaps[name] = abs(hi - lo)
        limit[name] = (2**order * hi - lo) / (2**order - 1)
    converged = all(g <= tol for g in gaps.values())
    return FullyInformative(coarse, fine, limit, gaps, converged)


class TransparencyVerdict(NamedTuple):
    verdict: str
    fine: SignalEquilibrium | None
    coarse: SignalEquilibrium | None
    margins: dict
    offending: tuple | None = None


def compare_transparency(
    model: QuadraticModel,
    psi: SignalPartition,
    psi_hat: SignalPartition,
    tol: float = COMPARE_TOL,
) -> TransparencyVerdict:
    """Is the payoff simplex under the finer signal ψ strictly inside the one under ψ̂?

    Verdicts: "equal", "hypothesis-violated" (worst-sender outcome under ψ
    drops between two cells), "strict-inclusion" or "inconclusive".
    """
    check = refine_check(psi, psi_hat)
    if not check.refines:
        raise DomainError("the first signal must refine the second")
    fine = signal_equilibrium(model, psi)
    if not check.strictly:
        return TransparencyVerdict("equal", fine, fine, {"v_bar": 0.0, "v_s_min": 0.0, "v_r_min": 0.0})
    coarse = signal_equilibrium(model, psi_hat)
    margins = {
        "v_bar": coarse.simplex.v_bar - fine.simplex.v_bar,
        "v_s_min": fine.simplex.v_s_min - coarse.simplex.v_s_min,
        "v_r_min": fine.simplex.v_r_min - coarse.simplex.v_r_min,
    }
    offending = fine.penal_monotonicity()
    if offending is not None:
        return TransparencyVerdict("hypothesis-violated", fine, coarse, margins, offending)
    inside = margins["v_bar"] >= -tol and margins["v_s_min"] >= -tol and margins["v_r_min"] > tol
    return TransparencyVerdict("strict-inclusion" if inside else "inconclusive", fine, coarse, margins)
