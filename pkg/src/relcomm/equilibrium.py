"""Relational layer for quadratic payoffs.

Leeway ℓ is the half-width of the band ρ_R(m) ± ℓ of decisions the receiver
can be trusted to take. It pins down the second-best decision rule, the
posterior-mean payoff u*, the optimal pooling set, the worst equilibrium
payoffs of both players and, through the surplus, a new leeway. The
equilibrium is the largest fixed point of that map.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import (
    DomainError,
    NonConvergenceError,
    PayoffSimplex,
    PoolingSet,
    Prior,
    QuadraticModel,
    UnsupportedError,
)
from .oracle import MINUS, PLUS, penal_family_value
from .persuasion import (
    PersuasionProblem,
    PersuasionSolution,
    objective,
    solve,
    split_indifference,
    tangency_high,
    tangency_low,
)

log = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-10
MAX_ITER = 200
PENAL_GRID_STEP = 1e-3
LEEWAY_CAP = 1e6
SCAN_POINTS = 64
BOUNDARY_TOL = 1e-12


# --------------------------------------------------------------------------
# Leeway and second-best decisions
# --------------------------------------------------------------------------


def discounted_surplus(delta: float, simplex: PayoffSimplex) -> float:
    """L(v̄) = δ/(1 − δ)·(v̄ − v̲_S − v̲_R)."""
    if simplex.surplus < -1e-9:
        raise DomainError("negative surplus")
    return delta / (1.0 - delta) * max(simplex.surplus, 0.0)


def leeway_from_surplus(delta: float, c: float, simplex: PayoffSimplex) -> float:
    """Half-width ℓ with w_R(ρ_R ± ℓ, m) = (c/2)ℓ² equal to L(v̄)."""
    if not 0 <= delta < 1:
        raise DomainError("delta must lie in [0, 1)")
    return math.sqrt(2.0 * discounted_surplus(delta, simplex) / c)


def _leeway_map(delta: float, c: float, surplus: float) -> float:
    return math.sqrt(2.0 * delta / (1.0 - delta) * max(surplus, 0.0) / c)


def rho_star(model: QuadraticModel, ell: float, m):
    """Second-best decision: first best clamped to ρ_R(m) ± ℓ."""
    rho = model.rho_r(m)
    return np.clip(m, rho - ell, rho + ell)


@dataclass(frozen=True)
class ExtremeSet:
    """States whose first-best decision falls outside the enforceable band."""

    intervals: tuple[tuple[float, float], ...]

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (theta > lo) & (theta < hi) | ((theta == lo) & (lo == 0.0)) | ((theta == hi) & (hi == 1.0))
        return out


def extreme_set(model: QuadraticModel, ell: float) -> ExtremeSet:
    """{θ ∈ [0,1] : |(a − 1)θ + b| > ℓ} as up to two intervals."""
    k, b = model.a - 1.0, model.b
    if k == 0:
        return ExtremeSet(((0.0, 1.0),) if abs(b) > ell else ())
    cut_lo, cut_hi = sorted(((-ell - b) / k, (ell - b) / k))
    pieces = []
    if cut_lo > 0:
        pieces.append((0.0, min(cut_lo, 1.0)))
    if cut_hi < 1:
        pieces.append((max(cut_hi, 0.0), 1.0))
    return ExtremeSet(tuple(p for p in pieces if p[1] > p[0]))


# --------------------------------------------------------------------------
# Posterior-mean payoff
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticUstar:
    """u*(m) = m²/2 − e(m)²/2 with e(m) = max(0, |(a − 1)m + b| − ℓ).

    This is the joint payoff at the second-best decision. Its curvature is 1
    on non-extreme means and a(2 − a) on extreme ones.
    """

    a: float
    b: float
    ell: float

    def _excess(self, m):
        z = (self.a - 1.0) * m + self.b
        return np.maximum(np.abs(z) - self.ell, 0.0), z

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        e, _ = self._excess(m)
        out = 0.5 * m * m - 0.5 * e * e
        return out if out.ndim else float(out)

    def derivative(self, m):
        m = np.asarray(m, dtype=float)
        e, z = self._excess(m)
        out = m - e * np.sign(z) * (self.a - 1.0)
        return out if out.ndim else float(out)

    def curvature(self, m):
        m = np.asarray(m, dtype=float)
        e, _ = self._excess(m)
        return np.where(e > 0, self.a * (2.0 - self.a), 1.0)

    def kinks(self) -> tuple[float, ...]:
        k = self.a - 1.0
        if k == 0:
            return ()
        pts = sorted({(-self.ell - self.b) / k, (self.ell - self.b) / k})
        return tuple(p for p in pts if 0.0 < p < 1.0)

    def shape(self) -> tuple[str, tuple[float, ...]]:
        """Curvature pattern and the kinks where the sign flips."""
        cuts = [0.0, *self.kinks(), 1.0]
        signs, flips = [], []
        for lo, hi in zip(cuts, cuts[1:]):
            if hi <= lo:
                continue
            s = 1 if float(self.curvature(0.5 * (lo + hi))) >= 0 else -1
            if signs and signs[-1] != s:
                flips.append(lo)
            if not signs or signs[-1] != s:
                signs.append(s)
        pattern = "-".join("convex" if s > 0 else "concave" for s in signs)
        return pattern, tuple(flips)

    def integrate(self, prior: Prior, lo: float, hi: float) -> float:
        """∫_lo^hi u*(s) f(s) ds, exact piece by piece."""
        if hi <= lo:
            return 0.0
        k = self.a - 1.0
        cuts = [lo, *(p for p in self.kinks() if lo < p < hi), hi]
        total = 0.0
        for p, q in zip(cuts, cuts[1:]):
            z = k * 0.5 * (p + q) + self.b
            if z > self.ell:
                slope, icpt = k, self.b - self.ell
            elif z < -self.ell:
                slope, icpt = -k, -(self.b + self.ell)
            else:
                slope, icpt = 0.0, 0.0
            coef = (0.5 * (1.0 - slope * slope), -slope * icpt, -0.5 * icpt * icpt)
            total += sum(
                coef[2 - deg] * (prior.partial_moment(q, deg) - prior.partial_moment(p, deg)) for deg in range(3)
            )
        return float(total)


def persuasion_problem(model: QuadraticModel, ell: float) -> PersuasionProblem:
    ustar = QuadraticUstar(model.a, model.b, ell)
    pattern, flips = ustar.shape()
    return PersuasionProblem(model.prior, ustar, inflections=flips, pattern=pattern, breakpoints=ustar.kinks())


# --------------------------------------------------------------------------
# Closed-form pooling
# --------------------------------------------------------------------------


def over_pooling_coefficient(a: float) -> float:
    """γ = 2(2(a − 1) + √(a(a − 2))) / (3(a − 1)² + 1)."""
    return 2.0 * (2.0 * (a - 1.0) + math.sqrt(a * (a - 2.0))) / (3.0 * (a - 1.0) ** 2 + 1.0)


@dataclass(frozen=True)
class RegimeThresholds:
    """Leeway cut-offs separating the pooling regimes.

    Above ell_A: separation. Down to ell_B: one-sided censorship. Down to
    ell_C: two-sided censorship. Down to ell_D: binary split. Below: complete
    pooling. In the strongly biased branch there is no two-sided or split
    regime and ell_C, ell_D are None.
    """

    tag: str
    gamma: float | None = None
    ell_A: float | None = None
    ell_B: float | None = None
    ell_C: float | None = None
    ell_D: float | None = None
    reflected: bool = False
    deltas: dict = field(default_factory=dict)

    def values(self) -> list[float]:
        return [v for v in (self.ell_A, self.ell_B, self.ell_C, self.ell_D) if v is not None]


def regime_thresholds(model: QuadraticModel, with_delta: bool = False) -> RegimeThresholds:
    if not model.prior.is_uniform:
        raise UnsupportedError("closed-form thresholds need the uniform prior")
    a = model.a
    if a <= 2:
        return RegimeThresholds("always-full-separation")
    reflected = a / 2 + model.b > 0.5
    b = 1 - a - model.b if reflected else model.b
    root = math.sqrt(a * (a - 2.0))
    gamma = over_pooling_coefficient(a)
    if b > root / 4 - (a - 1):
        ell_b = a + b - 1
        out = RegimeThresholds(
            "pooling-regimes", gamma, -b, ell_b, root / 4, (a - 2) / 4 * max(a / (4 * ell_b), 1.0), reflected
        )
    else:
        # one-sided censorship survives until the pooled interval covers [0, 1]
        out = RegimeThresholds("strong-bias", gamma, -b, root / 2 - (a - 1) - b, None, None, reflected)
    if with_delta:
        names = ("A", "B", "C", "D")
        deltas = {
            f"delta_{n}": delta_for_leeway(model, v)
            for n, v in zip(names, (out.ell_A, out.ell_B, out.ell_C, out.ell_D))
            if v is not None
        }
        out = RegimeThresholds(out.tag, out.gamma, out.ell_A, out.ell_B, out.ell_C, out.ell_D, reflected, deltas)
    return out


def _is_boundary(ell: float, cut: float | None) -> bool:
    return cut is not None and abs(ell - cut) <= BOUNDARY_TOL * max(1.0, abs(cut))


def pooling_closed_form(model: QuadraticModel, ell: float) -> PersuasionSolution:
    """Optimal pooling set from the regime table (uniform prior)."""
    if ell < 0:
        raise DomainError("leeway must be nonnegative")
    thr = regime_thresholds(model)
    problem = persuasion_problem(model, ell)
    if thr.tag == "always-full-separation":
        return PersuasionSolution(PoolingSet.empty(), objective(problem, PoolingSet.empty()), "full-separation")
    if thr.reflected:
        mirrored = pooling_closed_form(model.reflect(), ell)
        return mirrored.reflect(objective(problem, mirrored.pooling.reflect()))

    a, b, gamma = model.a, model.b, thr.gamma
    boundary = any(_is_boundary(ell, cut) for cut in thr.values())
    regime = "complete-pooling"
    ladder = [
        (thr.ell_A, "full-separation"),
        (thr.ell_B, "lower-censorship"),
        (thr.ell_C, "two-sided-censorship"),
        (thr.ell_D, "binary-split"),
    ]
    for cut, name in ladder:
        # ties at a cut fall through to the more-pooled regime below it
        if cut is not None and ell > cut and not _is_boundary(ell, cut):
            regime = name
            break

    kw: dict = {}
    if regime == "full-separation":
        pooling = PoolingSet.empty()
    elif regime == "lower-censorship":
        t = gamma * (-ell - b)
        pooling = PoolingSet.from_pairs([(0.0, t)])
        kw = dict(theta_L_star=t, m_L_star=t / 2)
        if t > 0:
            kw["residuals"] = {"tangency_low": tangency_low(problem, t)}
    elif regime == "two-sided-censorship":
        t_lo = gamma * (-ell - b)
        t_hi = 1.0 - gamma * (a + b - 1 - ell)
        pooling = PoolingSet.from_pairs([(0.0, t_lo), (t_hi, 1.0)])
        kw = dict(
            theta_L_star=t_lo, theta_H_star=t_hi, m_L_star=t_lo / 2, m_H_star=(1 + t_hi) / 2,
            residuals={"tangency_low": tangency_low(problem, t_lo), "tangency_high": tangency_high(problem, t_hi)},
        )
    elif regime == "binary-split":
        t = ((a - 2) * a + 16 * b * ell) / (2 * ((a - 2) * a + 8 * ell * (1 - a)))
        pooling = PoolingSet(((0.0, t), (t, 1.0)))
        kw = dict(theta_M_star=t, m_L_star=t / 2, m_H_star=(1 + t) / 2,
                  residuals={"split_indifference": split_indifference(problem, t)})
    else:
        pooling = PoolingSet.full()
    return PersuasionSolution(pooling, objective(problem, pooling), regime, boundary=boundary, **kw)


def solve_pooling(model: QuadraticModel, ell: float) -> PersuasionSolution:
    """Closed form on the uniform prior, first-order-condition solver otherwise."""
    if model.prior.is_uniform:
        return pooling_closed_form(model, ell)
    return solve(persuasion_problem(model, ell))


# --------------------------------------------------------------------------
# Worst equilibria
# --------------------------------------------------------------------------


def receiver_worst(model: QuadraticModel) -> float:
    """v̲_R: everything pooled and the receiver takes her preferred decision."""
    return 0.5 * model.c * model.rho_r(model.prior.mean) ** 2


@dataclass(frozen=True)
class PenalProfile:
    """Worst equilibrium for the sender.

    Every message gets the band-edge decision ρ_R(m) − ℓ (`minus_ell`, pool
    [0, threshold)) or ρ_R(m) + ℓ (`plus_ell`, pool (threshold, 1]).
    """

    pooling: PoolingSet
    decision_shift: str
    threshold: float
    value: float
    ell: float
    closed_form_threshold: float | None = None
    closed_form_value: float | None = None
    note: str = ""

    @property
    def theta_bar_L(self) -> float | None:
        return self.threshold if self.decision_shift == MINUS else None

    def decision(self, model: QuadraticModel, m):
        shift = -self.ell if self.decision_shift == MINUS else self.ell
        return model.rho_r(m) + shift

    def outcome(self, model: QuadraticModel, theta):
        """Composed decision ρ̲(μ̲(θ))."""
        return self.decision(model, self.pooling.posterior_means(model.prior, theta))


def penal_closed_form_threshold(model: QuadraticModel, ell: float) -> float:
    """Candidate pooling threshold of the `minus_ell` family (uniform prior).

    Either 0 or the larger root of the family's first-order condition,
    whichever the two-branch test selects. Can leave [0, 1) when a·c ≥ 1.
    """
    a, b, c = model.a, model.b, model.c
    k = (1 - a * c) / a**2 * (-b * c - (1 - c) * (b - ell))
    if k > 3 * (1 - c) ** 2 / 32:
        return 0.0
    disc = (1 - c) ** 2 - 8 * k
    if disc < 0 or a * c == 1:
        return math.nan
    return a * ((1 - c) + math.sqrt(disc)) / (2 * (1 - a * c))


def _penal_pooling(family: str, t: float) -> PoolingSet:
    if family == MINUS:
        return PoolingSet.from_pairs([(0.0, t)])
    return PoolingSet.from_pairs([(t, 1.0)])


def _refine(model: QuadraticModel, ell: float, family: str, t0: float, step: float, prior: Prior,
            levels: int = 4, points: int = 41):
    """Zoom in on a grid minimum with successively finer vectorized grids."""
    best_t, best_v = t0, float(penal_family_value(model, ell, t0, family, prior))
    half = step
    for _ in range(levels):
        grid = np.clip(np.linspace(best_t - half, best_t + half, points), 0.0, 1.0)
        vals = np.asarray(penal_family_value(model, ell, grid, family, prior))
        k = int(np.argmin(vals))
        if vals[k] < best_v:
            best_t, best_v = float(grid[k]), float(vals[k])
        half *= 2.0 / (points - 1)
    return best_t, best_v


def penal_grid_search(model: QuadraticModel, ell: float, step: float = PENAL_GRID_STEP, refine: bool = True):
    """Both penal families on a threshold grid, optionally refined locally.

    Returns (family, threshold, value) of the lower one; ties go to `minus_ell`.
    """
    prior = model.prior
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    best = None
    for family in (MINUS, PLUS):
        vals = np.asarray(penal_family_value(model, ell, grid, family, prior))
        k = int(np.argmin(vals)) if family == MINUS else len(grid) - 1 - int(np.argmin(vals[::-1]))
        t, v = float(grid[k]), float(vals[k])
        if refine:
            t, v = _refine(model, ell, family, t, step, prior)
        if best is None or v < best[2]:
            best = (family, t, v)
    return best


def sender_worst(model: QuadraticModel, ell: float, step: float = PENAL_GRID_STEP) -> PenalProfile:
    """v̲_S from the two penal families; the closed form is reported alongside."""
    if ell < 0:
        raise DomainError("leeway must be nonnegative")
    family, t, value = penal_grid_search(model, ell, step)
    cf_t = cf_v = None
    note = ""
    if model.prior.is_uniform:
        reflected = model.a / 2 + model.b > 0.5
        raw = penal_closed_form_threshold(model.reflect() if reflected else model, ell)
        cf_family = PLUS if reflected else MINUS
        cf_t = 1.0 - raw if reflected else raw
        if 0.0 <= raw < 1.0:
            cf_v = penal_family_value(model, ell, cf_t, cf_family)
            if cf_family != family or abs(cf_t - t) > 1e-3 or abs(cf_v - value) > 1e-6:
                note = (
                    f"closed form ({cf_family}, t={cf_t:.6g}, v={cf_v:.9g}) differs from "
                    f"search ({family}, t={t:.6g}, v={value:.9g})"
                )
        else:
            note = f"closed-form threshold {raw!r} lies outside [0, 1); search result used"
        if note:
            log.info("penal closed form: %s", note)
    return PenalProfile(_penal_pooling(family, t), family, t, value, ell, cf_t, cf_v, note)


# --------------------------------------------------------------------------
# Fixed point
# --------------------------------------------------------------------------


class LeewayEvaluation(NamedTuple):
    ell: float
    solution: PersuasionSolution
    penal: PenalProfile
    v_bar: float
    v_s_min: float
    v_r_min: float

    @property
    def surplus(self) -> float:
        return self.v_bar - self.v_s_min - self.v_r_min

    @property
    def simplex(self) -> PayoffSimplex:
        return PayoffSimplex(self.v_s_min, self.v_r_min, self.v_bar)


def evaluate_leeway(model: QuadraticModel, ell: float) -> LeewayEvaluation:
    """Optimal pooling and both worst payoffs at a given leeway."""
    solution = solve_pooling(model, ell)
    penal = sender_worst(model, ell)
    return LeewayEvaluation(ell, solution, penal, solution.value, penal.value, receiver_worst(model))


def delta_for_leeway(model: QuadraticModel, ell: float) -> float:
    """Discount factor at which ℓ is a fixed point of the leeway map.

    Surplus at fixed ℓ does not depend on δ, so δ/(1 − δ) = cℓ²/(2·surplus).
    """
    if ell <= 0:
        return 0.0
    surplus = evaluate_leeway(model, ell).surplus
    if surplus <= 0:
        return 1.0
    ratio = model.c * ell * ell / (2.0 * surplus)
    return ratio / (1.0 + ratio)


@dataclass(frozen=True)
class FixedPoint:
    ell: float
    simplex: PayoffSimplex
    solution: PersuasionSolution
    penal: PenalProfile
    residual: float
    iterations: int


def largest_fixed_point(step_map, start_hi: float, tol: float = FIXED_POINT_TOL, max_iter: int = MAX_ITER):
    """Largest ℓ ≥ 0 with step_map(ℓ) = ℓ for a continuous nondecreasing map.

    The upper end is doubled until the map falls below the diagonal, a
    downward scan locates the highest crossing, and bisection polishes it.
    Returns (ell, residual, iterations).
    """
    hi = max(start_hi, 1e-6)
    while step_map(hi) >= hi:
        if hi > LEEWAY_CAP:
            raise NonConvergenceError(
                "leeway map stays above the diagonal: punishments are unbounded", bracket=(hi / 2, hi)
            )
        hi *= 2.0
    grid = np.linspace(0.0, hi, SCAN_POINTS + 1)
    lo_b, hi_b = 0.0, grid[1]
    for k in range(SCAN_POINTS - 1, -1, -1):
        if step_map(grid[k]) - grid[k] >= 0:
            lo_b, hi_b = float(grid[k]), float(grid[k + 1])
            break
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo_b + hi_b)
        gap = step_map(mid) - mid
        if abs(gap) < tol and hi_b - lo_b < 1e-9:
            return mid, abs(gap), it
        if gap >= 0:
            lo_b = mid
        else:
            hi_b = mid
        if hi_b - lo_b <= 4 * np.finfo(float).eps * max(1.0, hi_b):
            gap = step_map(lo_b) - lo_b
            if abs(gap) < tol:
                return lo_b, abs(gap), it
            raise NonConvergenceError(f"fixed-point residual {gap:.3g} at machine precision", bracket=(lo_b, hi_b))
    raise NonConvergenceError("fixed-point bisection hit the iteration cap", bracket=(lo_b, hi_b))


def solve_fixed_point(model: QuadraticModel, tol: float = FIXED_POINT_TOL, max_iter: int = MAX_ITER) -> FixedPoint:
    """Largest self-consistent leeway with its pooling set and payoff simplex."""
    delta, c = model.delta, model.c
    if delta == 0:
        ev = evaluate_leeway(model, 0.0)
        return FixedPoint(0.0, ev.simplex, ev.solution, ev.penal, 0.0, 0)
    cache: dict[float, LeewayEvaluation] = {}

    def step_map(ell: float) -> float:
        if ell not in cache:
            cache[ell] = evaluate_leeway(model, ell)
        return _leeway_map(delta, c, cache[ell].surplus)

    first_best = 0.5 * model.prior.second_moment
    start = math.sqrt(2.0 * delta / (1.0 - delta) * first_best / c) + 1.0
    ell, residual, iters = largest_fixed_point(step_map, start, tol, max_iter)
    ev = cache.get(ell) or evaluate_leeway(model, ell)
    return FixedPoint(ell, ev.simplex, ev.solution, ev.penal, residual, iters)


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------


def preset(kind: str, **params) -> dict:
    """Parameters (a, b, c) of the agency and lobbying examples."""
    if kind == "agency":
        a = float(params["a"])
        if not 0 < a < 1:
            raise DomainError("agency preset needs a in (0, 1)")
        return {"a": a, "b": 0.0, "c": 1.0}
    if kind == "lobbying":
        lam, alpha, d0 = float(params["lambda_s"]), float(params["alpha"]), float(params["d0"])
        if not (0 < lam < 1 and 0 < alpha < 1 and d0 >= 0.5):
            raise DomainError("lobbying preset needs lambda_s, alpha in (0, 1) and d0 ≥ 1/2")
        weight = alpha * lam
        return {"a": 1.0 / (1.0 - weight), "b": -weight * d0 / (1.0 - weight), "c": 1.0 - lam}
    raise DomainError(f"unknown preset {kind!r}")
