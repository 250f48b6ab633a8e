"""Domain types, prior handling and the posterior-mean distribution transforms."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

INTEGRAL_TOL = 1e-12
RENORMALIZE_WARN = 1e-6


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class UnsupportedError(DomainError):
    """Valid input that the requested solver path does not handle."""


class NonConvergenceError(RuntimeError):
    """An iterative solver failed to meet its tolerance.

    `bracket` holds the last interval known to contain the root, if any.
    """

    def __init__(self, message: str, bracket: tuple[float, float] | None = None):
        super().__init__(message)
        self.bracket = bracket


# --------------------------------------------------------------------------
# Prior
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Prior:
    """Piecewise-constant density on [0, 1].

    `edges` are the cell boundaries (first 0, last 1) and `density` the value
    on each cell. The uniform prior is the single-cell case. All partial
    moments are computed exactly from prefix sums.
    """

    edges: tuple[float, ...] = (0.0, 1.0)
    density: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        density = tuple(float(d) for d in self.density)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "density", density)
        if len(edges) != len(density) + 1 or not density:
            raise DomainError("prior needs one density value per cell")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise DomainError("prior cells must span [0, 1]")
        if any(hi <= lo for lo, hi in zip(edges, edges[1:])):
            raise DomainError("prior cell edges must be strictly increasing")
        if any(not math.isfinite(d) or d <= 0 for d in density):
            raise DomainError("prior density must be strictly positive")
        total = sum(d * (hi - lo) for d, lo, hi in zip(density, edges, edges[1:]))
        if abs(total - 1.0) > INTEGRAL_TOL:
            raise DomainError(f"prior density integrates to {total!r}, not 1")

    @classmethod
    def uniform(cls) -> Prior:
        return cls()

    @classmethod
    def tabulated(cls, density, normalize: bool = False) -> Prior:
        """Density over equal cells of [0, 1]."""
        values = np.asarray(density, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise DomainError("tabulated density must be a non-empty list")
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise DomainError("prior density must be strictly positive")
        n = values.size
        total = values.mean()
        if normalize:
            if abs(total - 1.0) > RENORMALIZE_WARN:
                log.warning("prior density integrates to %.9g; renormalizing", total)
            values = values / total
        edges = np.linspace(0.0, 1.0, n + 1)
        return cls(tuple(edges), tuple(values))

    @classmethod
    def from_csv(cls, path) -> Prior:
        """Load a `cell_index,density` table; rows may appear in any order."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or {"cell_index", "density"} - set(reader.fieldnames):
                raise DomainError("prior file needs header 'cell_index,density'")
            rows = [(int(r["cell_index"]), float(r["density"])) for r in reader]
        if not rows:
            raise DomainError("prior file has no rows")
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise DomainError("prior cell indices must be 0..n-1 without gaps")
        return cls.tabulated([d for _, d in rows], normalize=True)

    @property
    def kind(self) -> str:
        return "uniform" if self.is_uniform else "tabulated"

    @property
    def n_cells(self) -> int:
        return len(self.density)

    @cached_property
    def is_uniform(self) -> bool:
        return all(abs(d - 1.0) <= INTEGRAL_TOL for d in self.density)

    @cached_property
    def _tables(self):
        e = np.asarray(self.edges)
        f = np.asarray(self.density)
        prefix = []
        for k in range(3):
            piece = f * (e[1:] ** (k + 1) - e[:-1] ** (k + 1)) / (k + 1)
            prefix.append(np.concatenate([[0.0], np.cumsum(piece)]))
        return e, f, prefix

    def _cell(self, x: np.ndarray) -> np.ndarray:
        e, _, _ = self._tables
        return np.clip(np.searchsorted(e, x, side="right") - 1, 0, len(self.density) - 1)

    def partial_moment(self, x, k: int):
        """∫_0^x s^k f(s) ds for k in {0, 1, 2}."""
        e, f, prefix = self._tables
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        j = self._cell(x)
        out = prefix[k][j] + f[j] * (x ** (k + 1) - e[j] ** (k + 1)) / (k + 1)
        return out if out.ndim else float(out)

    def cdf(self, x):
        return self.partial_moment(x, 0)

    def pdf(self, x):
        _, f, _ = self._tables
        out = f[self._cell(np.asarray(x, dtype=float))]
        return out if np.ndim(out) else float(out)

    def int_cdf(self, x):
        """∫_0^x F(s) ds."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        out = x * self.partial_moment(x, 0) - self.partial_moment(x, 1)
        return out if np.ndim(out) else float(out)

    def int_s_cdf(self, x):
        """∫_0^x s F(s) ds."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        out = 0.5 * (x * x * self.partial_moment(x, 0) - self.partial_moment(x, 2))
        return out if np.ndim(out) else float(out)

    @cached_property
    def mean(self) -> float:
        return float(self.partial_moment(1.0, 1))

    @cached_property
    def second_moment(self) -> float:
        return float(self.partial_moment(1.0, 2))

    def mass(self, lo, hi):
        return self.partial_moment(hi, 0) - self.partial_moment(lo, 0)

    def interval_mean(self, lo, hi):
        """Conditional mean on (lo, hi), vectorized; degenerate intervals give lo."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        mass = self.partial_moment(hi, 0) - self.partial_moment(lo, 0)
        moment = self.partial_moment(hi, 1) - self.partial_moment(lo, 1)
        same_cell = self._cell(lo) == self._cell(np.nextafter(hi, -np.inf))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(same_cell | (mass <= 0), 0.5 * (lo + hi), moment / np.where(mass > 0, mass, 1.0))
        out = np.where(hi <= lo, lo, out)
        return out if out.ndim else float(out)

    def restrict(self, lo: float, hi: float) -> Prior:
        """Conditional prior on (lo, hi), rescaled affinely onto [0, 1]."""
        if not 0.0 <= lo < hi <= 1.0:
            raise DomainError(f"cannot restrict prior to ({lo}, {hi})")
        e, f, _ = self._tables
        inner = e[(e > lo) & (e < hi)]
        cuts = np.concatenate([[lo], inner, [hi]])
        width = hi - lo
        dens = f[self._cell(0.5 * (cuts[:-1] + cuts[1:]))]
        mass = float(np.sum(dens * np.diff(cuts)))
        new_edges = (cuts - lo) / width
        new_edges[0], new_edges[-1] = 0.0, 1.0
        new_density = dens * width / mass
        # absorb rounding so the restricted density integrates to 1 exactly enough
        new_density = new_density / float(np.sum(new_density * np.diff(new_edges)))
        return Prior(tuple(new_edges), tuple(new_density))

    def reflect(self) -> Prior:
        """Distribution of 1 − θ."""
        edges = tuple(1.0 - e for e in reversed(self.edges))
        return Prior((0.0,) + edges[1:-1] + (1.0,), tuple(reversed(self.density)))


def posterior_mean(prior: Prior, interval: tuple[float, float]) -> float:
    """E[θ | θ ∈ interval]; a degenerate interval returns its point."""
    lo, hi = (float(v) for v in interval)
    if not (0.0 <= lo <= hi <= 1.0):
        raise DomainError(f"interval ({lo}, {hi}) is empty or outside [0, 1]")
    if hi == lo:
        return lo
    return float(prior.interval_mean(lo, hi))


# --------------------------------------------------------------------------
# Pooling sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolingSet:
    """Sorted disjoint open intervals of pooled states.

    States outside every interval send separate messages. Interior interval
    endpoints count as separated; an interval starting at 0 (ending at 1)
    also contains 0 (1), matching the usual convention that [0, t) is open
    relative to [0, 1].
    """

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        prev = 0.0
        for lo, hi in ivs:
            if not (0.0 <= lo < hi <= 1.0) or lo < prev:
                raise DomainError(f"malformed pooling set {ivs}")
            prev = hi

    @classmethod
    def empty(cls) -> PoolingSet:
        return cls(())

    @classmethod
    def full(cls) -> PoolingSet:
        return cls(((0.0, 1.0),))

    @classmethod
    def from_pairs(cls, pairs) -> PoolingSet:
        """Build from (lo, hi) pairs, silently dropping degenerate ones."""
        return cls(tuple((lo, hi) for lo, hi in pairs if hi > lo))

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self) -> Iterator[tuple[float, float]]:
        return iter(self.intervals)

    def __bool__(self) -> bool:
        return bool(self.intervals)

    @property
    def measure(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    def locate(self, theta):
        """Index of the pool containing each state, or −1 if separated."""
        theta = np.asarray(theta, dtype=float)
        if not self.intervals:
            out = np.full(theta.shape, -1, dtype=int)
            return out if out.ndim else int(out)
        lo = np.array([iv[0] for iv in self.intervals])
        hi = np.array([iv[1] for iv in self.intervals])
        idx = np.searchsorted(lo, theta, side="right") - 1
        safe = np.clip(idx, 0, len(lo) - 1)
        left_ok = (theta > lo[safe]) | ((theta == 0.0) & (lo[safe] == 0.0))
        right_ok = (theta < hi[safe]) | ((theta == 1.0) & (hi[safe] == 1.0))
        out = np.where((idx >= 0) & left_ok & right_ok, safe, -1)
        return out if out.ndim else int(out)

    def means(self, prior: Prior) -> tuple[float, ...]:
        return tuple(posterior_mean(prior, iv) for iv in self.intervals)

    def masses(self, prior: Prior) -> tuple[float, ...]:
        return tuple(float(prior.mass(lo, hi)) for lo, hi in self.intervals)

    def posterior_means(self, prior: Prior, theta):
        """μ(θ) on an array of states: pooled means inside pools, θ elsewhere."""
        theta = np.asarray(theta, dtype=float)
        idx = self.locate(theta)
        if not self.intervals:
            return theta.copy()
        means = np.array(self.means(prior))
        return np.where(idx >= 0, means[np.clip(idx, 0, None)], theta)

    def separated_gaps(self) -> list[tuple[float, float]]:
        """Maximal separated intervals between pools (possibly degenerate)."""
        gaps, prev = [], 0.0
        for lo, hi in self.intervals:
            if lo > prev:
                gaps.append((prev, lo))
            prev = hi
        if prev < 1.0:
            gaps.append((prev, 1.0))
        return gaps

    def reflect(self) -> PoolingSet:
        return PoolingSet(tuple((1.0 - hi, 1.0 - lo) for lo, hi in reversed(self.intervals)))

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]


def partition_distance(prior: Prior, first: PoolingSet, second: PoolingSet, n: int = 20000) -> float:
    """Prior mass of states whose message cell differs between two pooling sets."""
    theta = (np.arange(n) + 0.5) / n

    def cell_bounds(pooling):
        idx = pooling.locate(theta)
        lo = np.array([iv[0] for iv in pooling.intervals] + [0.0])
        hi = np.array([iv[1] for iv in pooling.intervals] + [0.0])
        return np.where(idx >= 0, lo[idx], theta), np.where(idx >= 0, hi[idx], theta)

    lo1, hi1 = cell_bounds(first)
    lo2, hi2 = cell_bounds(second)
    differs = (lo1 != lo2) | (hi1 != hi2)
    return float(np.sum(differs * prior.pdf(theta)) / n)


# --------------------------------------------------------------------------
# Grid functions and payoff simplex
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridFunction:
    """Values sampled at the n + 1 equally spaced nodes of [0, 1]."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2 or not all(math.isfinite(v) for v in vals):
            raise DomainError("grid function needs at least two finite values")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, fn, n: int) -> GridFunction:
        return cls(tuple(np.asarray(fn(np.linspace(0.0, 1.0, n + 1)), dtype=float)))

    @property
    def n(self) -> int:
        return len(self.values) - 1

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    def __call__(self, x):
        return np.interp(x, self.nodes, self.array)


@dataclass(frozen=True)
class PayoffSimplex:
    """Equilibrium payoff set {v_S ≥ v_s_min, v_R ≥ v_r_min, v_S + v_R ≤ v_bar}."""

    v_s_min: float
    v_r_min: float
    v_bar: float

    def __post_init__(self):
        if self.surplus < -1e-9:
            raise DomainError(f"negative surplus {self.surplus!r}")

    @property
    def surplus(self) -> float:
        return self.v_bar - self.v_s_min - self.v_r_min

    def contains(self, v_s: float, v_r: float, tol: float = 0.0) -> bool:
        return v_s >= self.v_s_min - tol and v_r >= self.v_r_min - tol and v_s + v_r <= self.v_bar + tol

    def as_dict(self) -> dict:
        return {"v_s_min": self.v_s_min, "v_r_min": self.v_r_min, "v_bar": self.v_bar}


# --------------------------------------------------------------------------
# Quadratic model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticModel:
    """Receiver payoff c((aθ + b)d − d²/2), joint payoff θd − d²/2.

    The sender's payoff is the difference. Sorting for the sender needs
    a·c < 1; models violating it are accepted, and `sender_sorting` reports it.
    """

    a: float
    b: float
    c: float = 1.0
    delta: float = 0.0
    prior: Prior = field(default_factory=Prior.uniform)

    def __post_init__(self):
        for name in ("a", "b", "c", "delta"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.a <= 0:
            raise DomainError("a must be positive")
        if not 0 < self.c <= 1:
            raise DomainError("c must lie in (0, 1]")
        if not 0 <= self.delta < 1:
            raise DomainError("delta must lie in [0, 1)")

    @property
    def sender_sorting(self) -> bool:
        return self.a * self.c < 1

    @property
    def sender_slope(self) -> float:
        """∂²u_S/∂d∂θ = 1 − ac."""
        return 1.0 - self.a * self.c

    @property
    def agreement_state(self) -> float | None:
        """θ₀ where ρ_R(θ₀) = θ₀, if the lines are not parallel."""
        if self.a == 1:
            return None
        return -self.b / (self.a - 1)

    def rho_r(self, m):
        return self.a * m + self.b

    @staticmethod
    def rho_fb(m):
        return m

    def u(self, d, theta):
        return theta * d - d * d / 2

    def u_r(self, d, theta):
        return self.c * ((self.a * theta + self.b) * d - d * d / 2)

    def u_s(self, d, theta):
        return (self.sender_slope * theta - self.b * self.c) * d - (1 - self.c) * d * d / 2

    def w_r(self, d, m):
        """Receiver's temptation to deviate from d to ρ_R(m)."""
        return 0.5 * self.c * (self.a * m + self.b - d) ** 2

    def reflect(self) -> QuadraticModel:
        """Mirror θ ↦ 1 − θ, d ↦ 1 − d; payoffs change only by decision-free terms."""
        return QuadraticModel(self.a, 1 - self.a - self.b, self.c, self.delta, self.prior.reflect())

    def with_delta(self, delta: float) -> QuadraticModel:
        return QuadraticModel(self.a, self.b, self.c, delta, self.prior)


def stage_payoffs(model: QuadraticModel, d, theta_or_mean):
    """(u_S, u_R, u) at decision d and state (or posterior mean)."""
    u = model.u(d, theta_or_mean)
    u_r = model.u_r(d, theta_or_mean)
    return u - u_r, u_r, u


# --------------------------------------------------------------------------
# Transforms
# --------------------------------------------------------------------------


def transforms(prior: Prior, pooling: PoolingSet, n: int) -> tuple[GridFunction, GridFunction]:
    """G_P and its running integral Γ_P sampled at n + 1 nodes.

    Γ_P is computed in closed form: it equals Γ_∅ = ∫F outside pools and is
    linear with slope F(ξ) (left of the pool mean) or F(ζ) (right of it) inside.
    """
    if n < 2:
        raise DomainError("transforms need n ≥ 2")
    if not isinstance(pooling, PoolingSet):
        pooling = PoolingSet(tuple(pooling))
    x = np.linspace(0.0, 1.0, n + 1)
    g = np.asarray(prior.cdf(x), dtype=float).copy()
    gamma = np.asarray(prior.int_cdf(x), dtype=float).copy()
    for (lo, hi), m in zip(pooling.intervals, pooling.means(prior)):
        f_lo, f_hi = prior.cdf(lo), prior.cdf(hi)
        gam_lo, gam_hi = prior.int_cdf(lo), prior.int_cdf(hi)
        left = (x >= lo) & (x < m)
        right = (x >= m) & (x < hi)
        g[left] = f_lo
        g[right] = f_hi
        inside = (x > lo) & (x < hi)
        gamma[inside & (x < m)] = gam_lo + f_lo * (x[inside & (x < m)] - lo)
        gamma[inside & (x >= m)] = gam_hi - f_hi * (hi - x[inside & (x >= m)])
    return GridFunction(tuple(g)), GridFunction(tuple(gamma))
