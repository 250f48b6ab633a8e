"""Monotone persuasion over posterior-mean payoffs.

Given a prior and a payoff u*(m) of the posterior mean, find the pooling set
maximizing E[u*(μ(θ))] among monotone message rules. Curvature of u* decides
the shape: convex separates, concave pools, and mixed shapes are solved from
tangency or indifference first-order conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from .core import (
    DomainError,
    GridFunction,
    NonConvergenceError,
    PoolingSet,
    Prior,
    UnsupportedError,
)

FOC_TOL = 1e-10
CURVATURE_TOL = 1e-8
SHAPE_GRID = 2000
SPLIT_SCAN_STEP = 1e-3

REGIMES = (
    "full-separation",
    "lower-censorship",
    "upper-censorship",
    "two-sided-censorship",
    "binary-split",
    "complete-pooling",
)

_MIRROR_REGIME = {"lower-censorship": "upper-censorship", "upper-censorship": "lower-censorship"}


def _vectorized(fn: Callable) -> Callable:
    """Return fn if it maps arrays elementwise, else an np.vectorize wrapper."""
    probe = np.array([0.25, 0.75])
    try:
        out = np.asarray(fn(probe), dtype=float)
        if out.shape == probe.shape:
            return fn
    except Exception:
        pass
    return np.vectorize(fn, otypes=[float])


@dataclass(frozen=True)
class PersuasionProblem:
    """Prior plus posterior-mean payoff.

    `inflections` and `pattern` may be declared; otherwise they are detected
    from centered second differences. `derivative` is used for u*′ when
    given (callables exposing a `derivative` method are picked up too).
    `breakpoints` mark points where u* is not twice differentiable and help
    the quadrature.
    """

    prior: Prior
    ustar: Callable | GridFunction
    inflections: tuple[float, ...] | None = None
    pattern: str | None = None
    derivative: Callable | None = None
    breakpoints: tuple[float, ...] = ()

    @cached_property
    def _fn(self) -> Callable:
        if isinstance(self.ustar, GridFunction):
            return CubicSpline(self.ustar.nodes, self.ustar.array)
        return _vectorized(self.ustar)

    def value(self, m):
        return self._fn(m)

    def slope(self, m):
        if self.derivative is not None:
            return self.derivative(m)
        if isinstance(self.ustar, GridFunction):
            return self._fn(m, 1)
        if hasattr(self.ustar, "derivative"):
            return self.ustar.derivative(m)
        m = np.asarray(m, dtype=float)
        h = 1e-6
        lo = np.clip(m - h, 0.0, 1.0)
        hi = np.clip(m + h, 0.0, 1.0)
        return (self._fn(hi) - self._fn(lo)) / (hi - lo)

    def integral(self, lo: float, hi: float) -> float:
        """∫_lo^hi u*(s) f(s) ds."""
        if hi <= lo:
            return 0.0
        if hasattr(self.ustar, "integrate"):
            return float(self.ustar.integrate(self.prior, lo, hi))
        points = sorted({p for p in (*self.prior.edges, *self.breakpoints) if lo < p < hi})
        total = 0.0
        for a, b in zip([lo, *points], [*points, hi]):
            dens = self.prior.pdf(0.5 * (a + b))
            piece, _ = integrate.quad(lambda s: float(self._fn(s)), a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
            total += dens * piece
        return total

    @cached_property
    def shape(self) -> tuple[str, tuple[float, ...]]:
        if self.pattern is not None and self.inflections is not None:
            return self.pattern, tuple(self.inflections)
        if self.inflections is not None:
            return _pattern_from_inflections(self._fn, tuple(self.inflections)), tuple(self.inflections)
        pattern, found = detect_shape(self._fn)
        return (self.pattern or pattern), found

    def reflect(self) -> PersuasionProblem:
        """Problem in the mirrored state 1 − θ."""
        fn = self._fn
        pattern, infl = self.shape
        mirrored = "-".join(reversed(pattern.split("-")))
        slope = self.slope
        return PersuasionProblem(
            prior=self.prior.reflect(),
            ustar=lambda x: fn(1.0 - np.asarray(x, dtype=float)),
            inflections=tuple(1.0 - t for t in reversed(infl)),
            pattern=mirrored,
            derivative=lambda x: -slope(1.0 - np.asarray(x, dtype=float)),
            breakpoints=tuple(1.0 - p for p in self.breakpoints),
        )


@dataclass(frozen=True)
class PersuasionSolution:
    pooling: PoolingSet
    value: float
    regime: str
    theta_L_star: float | None = None
    theta_H_star: float | None = None
    theta_M_star: float | None = None
    m_L_star: float | None = None
    m_H_star: float | None = None
    boundary: bool = False
    residuals: dict = field(default_factory=dict)

    @property
    def thresholds(self) -> tuple[float | None, float | None, float | None]:
        return self.theta_L_star, self.theta_H_star, self.theta_M_star

    @property
    def messages(self) -> tuple[float | None, float | None]:
        return self.m_L_star, self.m_H_star

    def reflect(self, value: float | None = None) -> PersuasionSolution:
        """Mirror under θ ↦ 1 − θ; `value` replaces the objective if given."""
        flip = lambda t: None if t is None else 1.0 - t  # noqa: E731
        return replace(
            self,
            pooling=self.pooling.reflect(),
            value=self.value if value is None else value,
            regime=_MIRROR_REGIME.get(self.regime, self.regime),
            theta_L_star=flip(self.theta_H_star),
            theta_H_star=flip(self.theta_L_star),
            theta_M_star=flip(self.theta_M_star),
            m_L_star=flip(self.m_H_star),
            m_H_star=flip(self.m_L_star),
        )


# --------------------------------------------------------------------------
# Shape detection
# --------------------------------------------------------------------------


def _signs_to_pattern(signs: list[int]) -> str:
    if not signs:
        return "convex"
    return "-".join("convex" if s > 0 else "concave" for s in signs)


def detect_shape(fn: Callable, n: int = SHAPE_GRID, tol: float = CURVATURE_TOL) -> tuple[str, tuple[float, ...]]:
    """Curvature sign pattern and inflection points from second differences."""
    x = np.linspace(0.0, 1.0, n + 1)
    y = np.asarray(fn(x), dtype=float)
    d2 = (y[2:] - 2 * y[1:-1] + y[:-2]) * n * n
    nodes = x[1:-1]
    runs: list[list] = []
    for xi, val in zip(nodes, d2):
        s = 1 if val > tol else (-1 if val < -tol else 0)
        if s == 0:
            continue
        if runs and runs[-1][0] == s:
            runs[-1][2] = xi
        else:
            runs.append([s, xi, xi])
    infl = tuple(0.5 * (runs[k][2] + runs[k + 1][1]) for k in range(len(runs) - 1))
    return _signs_to_pattern([r[0] for r in runs]), infl


def _pattern_from_inflections(fn: Callable, infl: tuple[float, ...]) -> str:
    cuts = [0.0, *infl, 1.0]
    signs = []
    for lo, hi in zip(cuts, cuts[1:]):
        if hi - lo < 1e-9:
            continue
        x = np.linspace(lo, hi, 9)[1:-1]
        h = min(1e-4, (hi - lo) / 20)
        d2 = (fn(x + h) - 2 * fn(x) + fn(x - h)) / (h * h)
        s = 1 if np.median(d2) >= 0 else -1
        if not signs or signs[-1] != s:
            signs.append(s)
    return _signs_to_pattern(signs)


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------


def objective(problem: PersuasionProblem, pooling: PoolingSet) -> float:
    """E[u*(μ(θ))]: pooled masses at their means plus separated integrals."""
    prior = problem.prior
    total = 0.0
    for (lo, hi), m in zip(pooling.intervals, pooling.means(prior)):
        total += float(prior.mass(lo, hi)) * float(problem.value(m))
    for lo, hi in pooling.separated_gaps():
        total += problem.integral(lo, hi)
    return total


def _separation(problem: PersuasionProblem) -> PersuasionSolution:
    pooling = PoolingSet.empty()
    return PersuasionSolution(pooling, objective(problem, pooling), "full-separation")


def _pooling(problem: PersuasionProblem, boundary: bool = False) -> PersuasionSolution:
    pooling = PoolingSet.full()
    return PersuasionSolution(pooling, objective(problem, pooling), "complete-pooling", boundary=boundary)


# --------------------------------------------------------------------------
# First-order conditions
# --------------------------------------------------------------------------


def tangency_low(problem: PersuasionProblem, t: float) -> float:
    """Tangent at m = E[θ|[0,t)] evaluated at t, minus u*(t)."""
    m = float(problem.prior.interval_mean(0.0, t))
    return float(problem.value(m) + problem.slope(m) * (t - m) - problem.value(t))


def tangency_high(problem: PersuasionProblem, t: float) -> float:
    """Tangent at m = E[θ|(t,1]] evaluated at t, minus u*(t)."""
    m = float(problem.prior.interval_mean(t, 1.0))
    return float(problem.value(m) + problem.slope(m) * (t - m) - problem.value(t))


def split_indifference(problem: PersuasionProblem, t: float) -> float:
    """Difference of the tangents at the two pooled means, both evaluated at t."""
    m_lo = float(problem.prior.interval_mean(0.0, t))
    m_hi = float(problem.prior.interval_mean(t, 1.0))
    left = problem.value(m_lo) + problem.slope(m_lo) * (t - m_lo)
    right = problem.value(m_hi) + problem.slope(m_hi) * (t - m_hi)
    return float(left - right)


def _root(fn: Callable[[float], float], lo: float, hi: float, tol: float = FOC_TOL) -> float:
    try:
        root = optimize.bisect(fn, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    except (RuntimeError, ValueError) as exc:
        raise NonConvergenceError(f"bisection failed: {exc}", bracket=(lo, hi)) from exc
    residual = fn(root)
    if abs(residual) >= tol:
        raise NonConvergenceError(f"residual {residual:.3g} above {tol:g}", bracket=(lo, hi))
    return root


# --------------------------------------------------------------------------
# Solvers
# --------------------------------------------------------------------------


def solve_one_inflection(problem: PersuasionProblem) -> PersuasionSolution:
    """Concave-convex u*: pool a lower interval [0, θ*L) or everything."""
    pattern, infl = problem.shape
    if pattern == "convex":
        return _separation(problem)
    if pattern == "concave":
        return _pooling(problem)
    if pattern != "concave-convex":
        raise DomainError(f"expected a concave-convex payoff, got {pattern}")
    theta_l = infl[0]
    fn = lambda t: tangency_low(problem, t)  # noqa: E731
    if fn(1.0) >= 0:
        return _pooling(problem)
    if fn(theta_l) < 0:
        raise NonConvergenceError("tangency residual negative at the inflection", bracket=(theta_l, 1.0))
    t = _root(fn, theta_l, 1.0)
    pooling = PoolingSet(((0.0, t),))
    m = pooling.means(problem.prior)[0]
    return PersuasionSolution(
        pooling,
        objective(problem, pooling),
        "lower-censorship",
        theta_L_star=t,
        m_L_star=m,
        residuals={"tangency_low": fn(t)},
    )


def solve_two_inflection(problem: PersuasionProblem) -> PersuasionSolution:
    """Concave-convex-concave u*: two-sided censorship, binary split or pooling.

    The two tangency conditions each involve only their own threshold, so
    they are solved by separate bisections on (θL, θH).
    """
    pattern, infl = problem.shape
    if pattern != "concave-convex-concave":
        raise DomainError(f"expected a concave-convex-concave payoff, got {pattern}")
    theta_l, theta_h = infl
    low = lambda t: tangency_low(problem, t)  # noqa: E731
    high = lambda t: tangency_high(problem, t)  # noqa: E731

    if low(theta_l) >= 0 > low(theta_h) and high(theta_h) >= 0 > high(theta_l):
        t_lo = _root(low, theta_l, theta_h)
        t_hi = _root(high, theta_l, theta_h)
        if t_lo < t_hi:
            pooling = PoolingSet(((0.0, t_lo), (t_hi, 1.0)))
            m_lo, m_hi = pooling.means(problem.prior)
            return PersuasionSolution(
                pooling,
                objective(problem, pooling),
                "two-sided-censorship",
                theta_L_star=t_lo,
                theta_H_star=t_hi,
                m_L_star=m_lo,
                m_H_star=m_hi,
                residuals={"tangency_low": low(t_lo), "tangency_high": high(t_hi)},
            )

    pooled = _pooling(problem)
    split = best_binary_split(problem)
    if split is not None and split.value > pooled.value:
        return split
    return pooled


def best_binary_split(problem: PersuasionProblem, step: float = SPLIT_SCAN_STEP) -> PersuasionSolution | None:
    """Best root of the split indifference condition found by a grid scan."""
    fn = lambda t: split_indifference(problem, t)  # noqa: E731
    grid = np.arange(step, 1.0, step)
    vals = np.array([fn(t) for t in grid])
    best = None
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        t = _root(fn, grid[i], grid[i + 1])
        pooling = PoolingSet(((0.0, t), (t, 1.0)))
        value = objective(problem, pooling)
        if best is None or value > best.value:
            m_lo, m_hi = pooling.means(problem.prior)
            best = PersuasionSolution(
                pooling, value, "binary-split", theta_M_star=t, m_L_star=m_lo, m_H_star=m_hi,
                residuals={"split_indifference": fn(t)},
            )
    for i in np.flatnonzero(vals == 0):
        t = float(grid[i])
        pooling = PoolingSet(((0.0, t), (t, 1.0)))
        value = objective(problem, pooling)
        if best is None or value > best.value:
            m_lo, m_hi = pooling.means(problem.prior)
            best = PersuasionSolution(pooling, value, "binary-split", theta_M_star=t, m_L_star=m_lo, m_H_star=m_hi,
                                      residuals={"split_indifference": 0.0})
    return best


def solve(problem: PersuasionProblem) -> PersuasionSolution:
    """Dispatch on the curvature pattern of u*."""
    pattern, _ = problem.shape
    if pattern == "convex":
        return _separation(problem)
    if pattern == "concave":
        return _pooling(problem)
    if pattern == "concave-convex":
        return solve_one_inflection(problem)
    if pattern == "convex-concave":
        mirrored = solve_one_inflection(problem.reflect())
        return mirrored.reflect(objective(problem, mirrored.pooling.reflect()))
    if pattern == "concave-convex-concave":
        return solve_two_inflection(problem)
    raise UnsupportedError(f"curvature pattern {pattern} is not supported")


# --------------------------------------------------------------------------
# Concavification
# --------------------------------------------------------------------------


def concavify(ustar: GridFunction) -> GridFunction:
    """Least concave majorant of the sampled graph (upper hull)."""
    x, y = ustar.nodes, ustar.array
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # drop k if it lies on or below the chord j -> i
            if (y[k] - y[j]) * (x[i] - x[j]) <= (y[i] - y[j]) * (x[k] - x[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    return GridFunction(tuple(np.interp(x, x[hull], y[hull])))
