"""Single-period-punishment profiles and numerical verification of their
equilibrium conditions.

A profile is stationary: every period the sender pays an ex-ante transfer,
reports, receives the decision for her message and pays the envelope interim
transfer. Continuation payoffs are (v̲_S, v̄ − v̲_S) after every message and
any observable deviation is punished for one period. Conditions are checked
on a state grid and reported as minimum slacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from .core import DomainError, PayoffSimplex, PoolingSet, QuadraticModel
from .equilibrium import leeway_from_surplus, rho_star
from .persuasion import PersuasionSolution

DEFAULT_TOL = 1e-9
DEFAULT_GRID = 500
MONOTONE_GRID = 4001
CONDITIONS = ("c1_s", "c1_r", "c2a", "c2b", "c3", "c4a", "c4b", "c5", "c6", "c7")
# when residuals tie, name the more primitive condition (C3 follows from C4 plus t_S ≥ 0)
_PRIORITY = ("c4a", "c4b", "c2a", "c2b", "c3", "c1_s", "c1_r", "c5", "c6", "c7")


@dataclass(frozen=True)
class DecisionRule:
    """Decision on each pooled message and a function of the state elsewhere."""

    pool_decisions: tuple[float, ...]
    separated: Callable = field(compare=False)
    kinks: tuple[float, ...] = ()

    def with_pool_decision(self, index: int, value: float) -> DecisionRule:
        values = list(self.pool_decisions)
        values[index] = value
        return replace(self, pool_decisions=tuple(values))


def second_best_rule(model: QuadraticModel, ell: float, pooling: PoolingSet) -> DecisionRule:
    means = pooling.means(model.prior)
    kinks = tuple(
        p for p in ((-ell - model.b) / (model.a - 1), (ell - model.b) / (model.a - 1)) if 0 < p < 1
    ) if model.a != 1 else ()
    return DecisionRule(
        tuple(float(rho_star(model, ell, m)) for m in means),
        lambda x: rho_star(model, ell, np.asarray(x, dtype=float)),
        kinks,
    )


def _outcome(pooling: PoolingSet, rule: DecisionRule, theta):
    theta = np.asarray(theta, dtype=float)
    idx = pooling.locate(theta)
    sep = np.asarray(rule.separated(theta), dtype=float)
    if not pooling:
        return sep
    pooled = np.asarray(rule.pool_decisions)[np.clip(idx, 0, None)]
    return np.where(idx >= 0, pooled, sep)


def _check_points(pooling: PoolingSet, n: int = MONOTONE_GRID) -> np.ndarray:
    pts = [np.linspace(0.0, 1.0, n)]
    for lo, hi in pooling:
        pts.append(np.array([lo, hi, np.nextafter(lo, 1.0), np.nextafter(hi, 0.0)]))
    return np.unique(np.clip(np.concatenate(pts), 0.0, 1.0))


def is_monotone(pooling: PoolingSet, rule: DecisionRule, tol: float = 1e-12) -> bool:
    pts = _check_points(pooling)
    return bool(np.all(np.diff(_outcome(pooling, rule, pts)) >= -tol))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)
BACKGROUND_BREAKS = np.linspace(0.0, 1.0, 2001)


def _segments(pooling: PoolingSet, rule: DecisionRule, extra=()) -> np.ndarray:
    """Integration breakpoints: a fixed background grid, pool ends, kinks and extras."""
    pts = [BACKGROUND_BREAKS, np.array([p for iv in pooling for p in iv]), np.array(rule.kinks, dtype=float),
           np.ravel(np.asarray(extra, dtype=float))]
    return np.unique(np.clip(np.concatenate(pts), 0.0, 1.0))


def _gauss(breaks: np.ndarray):
    """Gauss-Legendre nodes and weights on every segment between breakpoints."""
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    half = 0.5 * (breaks[1:] - breaks[:-1])
    return mid[:, None] + half[:, None] * _GL_NODES[None, :], half[:, None] * _GL_WEIGHTS[None, :]


def decision_integral(pooling: PoolingSet, rule: DecisionRule, x) -> np.ndarray:
    """∫_0^x ρ(μ(s)) ds at every x.

    Six-point Gauss-Legendre on kink-aligned segments is exact for the
    piecewise-linear rules built here.
    """
    x = np.asarray(x, dtype=float)
    breaks = _segments(pooling, rule, x)
    nodes, weights = _gauss(breaks)
    seg = np.sum(_outcome(pooling, rule, nodes) * weights, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum[np.searchsorted(breaks, np.clip(x, 0.0, 1.0))]


@dataclass(frozen=True)
class TransferSchedule:
    """Envelope interim transfers t_S, one value per message.

    `offsets` holds (lo, hi, amount) adjustments added to separated states in
    [lo, hi]; they exist only to script perturbations. `minimizer` is the
    message (posterior mean) carrying the smallest transfer.
    """

    model: QuadraticModel = field(compare=False)
    pooling: PoolingSet
    rule: DecisionRule
    pool_values: tuple[float, ...]
    constant: float
    offsets: tuple[tuple[float, float, float], ...] = ()
    minimizer: float = 0.0

    def envelope(self, theta, decision):
        """u_S(d, θ) − (1 − ac)∫_0^θ ρ(μ(s)) ds, before the constant."""
        theta = np.asarray(theta, dtype=float)
        k = self.model.sender_slope
        return self.model.u_s(decision, theta) - k * decision_integral(self.pooling, self.rule, theta)

    def separated_values(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        value = self.envelope(theta, np.asarray(self.rule.separated(theta), dtype=float)) + self.constant
        for lo, hi, amount in self.offsets:
            value = value + np.where((theta >= lo) & (theta <= hi), amount, 0.0)
        return value

    def __call__(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        idx = self.pooling.locate(theta)
        out = np.empty(theta.shape)
        sep = idx < 0
        if np.any(sep):
            out[sep] = self.separated_values(theta[sep])
        if np.any(~sep):
            out[~sep] = np.asarray(self.pool_values)[idx[~sep]]
        return out

    def with_pool_value(self, index: int, value: float) -> TransferSchedule:
        values = list(self.pool_values)
        values[index] = value
        return replace(self, pool_values=tuple(values))


def interim_transfers(
    model: QuadraticModel,
    pooling: PoolingSet,
    decision: DecisionRule,
    representative: float = 0.5,
    check: bool = True,
) -> TransferSchedule:
    """Envelope transfers normalized so the smallest one is exactly zero.

    `representative` picks θ(m) = ξ + r(ζ − ξ) inside each pool; the result
    does not depend on it.
    """
    if check and not is_monotone(pooling, decision):
        raise DomainError("composed decision is not nondecreasing; no transfers make it incentive compatible")
    sched = TransferSchedule(model, pooling, decision, (), 0.0)
    reps = np.array([lo + representative * (hi - lo) for lo, hi in pooling])
    pool_raw = tuple(float(v) for v in sched.envelope(reps, np.asarray(decision.pool_decisions))) if reps.size else ()
    pool_means = pooling.means(model.prior)

    # separated messages: gaps plus interior pool endpoints, which are singletons
    pts = [np.linspace(lo, hi, max(3, int(2000 * (hi - lo)) + 1)) for lo, hi in pooling.separated_gaps()]
    pts.append(np.array([p for iv in pooling for p in iv if 0.0 < p < 1.0]))
    states = np.unique(np.concatenate(pts))
    states = states[pooling.locate(states) < 0]
    sep_min, sep_arg = np.inf, None
    if states.size:
        vals = sched.separated_values(states)
        k = int(np.argmin(vals))
        sep_min, sep_arg = float(vals[k]), float(states[k])
        lo, hi = states[max(k - 1, 0)], states[min(k + 1, states.size - 1)]
        if hi > lo and pooling.locate(0.5 * (lo + hi)) < 0:
            res = optimize.minimize_scalar(lambda t: float(sched.separated_values(t)), bounds=(lo, hi),
                                           method="bounded", options={"xatol": 1e-13})
            if res.fun < sep_min and pooling.locate(res.x) < 0:
                sep_min, sep_arg = float(res.fun), float(res.x)
    lowest, where = sep_min, sep_arg
    for value, mean in zip(pool_raw, pool_means):
        # ties go to the pooled message
        if value <= lowest:
            lowest, where = value, mean
    return TransferSchedule(model, pooling, decision, tuple(v - lowest for v in pool_raw), -lowest,
                            minimizer=float(where))


@dataclass(frozen=True)
class EquilibriumProfile:
    model: QuadraticModel = field(compare=False)
    pooling: PoolingSet
    decision: DecisionRule
    t_s: TransferSchedule
    tau_s: float
    punishment_message: float
    punishment_decision: float
    continuation: tuple[float, float]
    simplex: PayoffSimplex
    ell: float
    tau_r: float | None = None

    @property
    def receiver_tau(self) -> float:
        return -self.tau_s if self.tau_r is None else self.tau_r

    def means(self, theta):
        return self.pooling.posterior_means(self.model.prior, theta)

    def decisions(self, theta):
        return _outcome(self.pooling, self.decision, theta)

    def transfers(self, theta):
        return self.t_s(theta)

    def _separated_expectation(self, fn) -> float:
        """∫ fn(θ) f(θ) dθ over the separated states."""
        gaps = self.pooling.separated_gaps()
        if not gaps:
            return 0.0
        prior = self.model.prior
        breaks = _segments(self.pooling, self.decision, prior.edges)
        nodes, weights = _gauss(breaks)
        inside = self.pooling.locate(nodes) < 0
        vals = np.where(inside, fn(nodes) * prior.pdf(nodes), 0.0)
        return float(np.sum(vals * weights))

    def expected_sender_stage(self) -> float:
        """E[u_S(ρ(μ(θ)), θ) − t_S(μ(θ))] under the prior."""
        model, prior = self.model, self.model.prior
        total = 0.0
        for (lo, hi), d, t in zip(self.pooling, self.decision.pool_decisions, self.t_s.pool_values):
            total += float(prior.mass(lo, hi)) * (model.u_s(d, float(prior.interval_mean(lo, hi))) - t)

        def net(x):
            flat = x.ravel()
            out = model.u_s(np.asarray(self.decision.separated(flat)), flat) - self.t_s.separated_values(flat)
            return out.reshape(x.shape)

        return total + self._separated_expectation(net)

    def expected_joint(self) -> float:
        model, prior = self.model, self.model.prior
        total = 0.0
        for (lo, hi), d in zip(self.pooling, self.decision.pool_decisions):
            total += float(prior.mass(lo, hi)) * model.u(d, float(prior.interval_mean(lo, hi)))
        return total + self._separated_expectation(lambda x: model.u(np.asarray(self.decision.separated(x)), x))


def build_profile(
    model: QuadraticModel,
    solution: PersuasionSolution,
    simplex: PayoffSimplex,
    ell: float | None = None,
    rule: DecisionRule | None = None,
    check: bool = True,
) -> EquilibriumProfile:
    """Assemble the optimal single-period-punishment profile.

    The leeway defaults to the one implied by the simplex at the model's δ,
    and decisions default to the second-best rule at that leeway.
    """
    if ell is None:
        ell = leeway_from_surplus(model.delta, model.c, simplex)
    pooling = solution.pooling
    rule = second_best_rule(model, ell, pooling) if rule is None else rule
    sched = interim_transfers(model, pooling, rule, check=check)
    draft = EquilibriumProfile(model, pooling, rule, sched, 0.0, 0.0, 0.0,
                               (simplex.v_s_min, simplex.v_bar - simplex.v_s_min), simplex, ell)
    tau_s = draft.expected_sender_stage() - simplex.v_s_min
    m_p, d_p = _punishment(model, pooling, rule, sched)
    return replace(draft, tau_s=tau_s, punishment_message=m_p, punishment_decision=d_p)


def _punishment(model, pooling, rule, sched) -> tuple[float, float]:
    """Message with the smallest transfer and its decision."""
    m = sched.minimizer
    return m, float(_outcome(pooling, rule, np.array([m]))[0])


# --------------------------------------------------------------------------
# Scripted perturbations
# --------------------------------------------------------------------------

PERTURBATIONS = ("decision", "transfer", "monotone")
PUSH = 0.01


def perturb(profile: EquilibriumProfile, kind: str) -> EquilibriumProfile:
    """Break one equilibrium condition on purpose.

    decision: one pooled message's decision moved 0.01 beyond the band on the
    side it already sits on (every decision, if nothing is pooled or the
    single push would break monotonicity); transfers are rebuilt.
    transfer: t_S lowered by 0.01 on a short window of separated messages
    where the receiver's obedience is slack, or on the pool if nothing is
    separated.
    monotone: a downward ramp across the band inside the first separated
    gap; transfers come from the envelope formula without the monotonicity
    guard.
    """
    model, ell, pooling, rule = profile.model, profile.ell, profile.pooling, profile.decision
    if kind == "decision":
        new_rule = None
        if pooling:
            m = pooling.means(model.prior)[0]
            d = rule.pool_decisions[0]
            target = model.rho_r(m) - ell - PUSH if d <= model.rho_r(m) else model.rho_r(m) + ell + PUSH
            candidate = rule.with_pool_decision(0, float(target))
            new_rule = candidate if is_monotone(pooling, candidate) else None
        if new_rule is None:
            push = lambda m: np.minimum(rule.separated(m), model.rho_r(m) - ell - PUSH)  # noqa: E731
            new_rule = DecisionRule(
                tuple(min(d, float(model.rho_r(m)) - ell - PUSH)
                      for d, m in zip(rule.pool_decisions, pooling.means(model.prior))),
                lambda x: push(np.asarray(x, dtype=float)),
                rule.kinks,
            )
        return _rebuild(profile, new_rule, interim_transfers(model, pooling, new_rule))
    if kind == "transfer":
        sched = profile.t_s
        gaps = [g for g in pooling.separated_gaps() if g[1] - g[0] > 0.05]
        if gaps:
            theta = np.concatenate([np.linspace(lo + 0.02, hi - 0.02, 200) for lo, hi in gaps])
            w_r = model.w_r(profile.decisions(theta), theta)
            ok = sched(theta) >= PUSH
            centre = float(theta[np.argmin(np.where(ok, w_r, np.inf))])
            sched = replace(sched, offsets=sched.offsets + ((centre - 0.01, centre + 0.01, -PUSH),))
        else:
            sched = sched.with_pool_value(0, sched.pool_values[0] - PUSH)
        return replace(profile, t_s=sched)
    if kind == "monotone":
        gaps = [g for g in pooling.separated_gaps() if g[1] - g[0] > 1e-6]
        if not gaps or ell <= 0:
            raise DomainError("monotone perturbation needs a separated interval and a positive leeway")
        lo, hi = gaps[0]
        width = min(ell / model.a, 0.5 * (hi - lo))
        start = lo + 0.25 * (hi - lo - width)

        def ramp(x):
            x = np.asarray(x, dtype=float)
            inside = (x >= start) & (x <= start + width)
            down = model.rho_r(x) + ell - 2.0 * ell * (x - start) / width
            return np.where(inside, down, rule.separated(x))

        new_rule = DecisionRule(rule.pool_decisions, ramp, rule.kinks + (start, start + width))
        return _rebuild(profile, new_rule, interim_transfers(model, pooling, new_rule, check=False))
    raise DomainError(f"unknown perturbation {kind!r}")


def _rebuild(profile: EquilibriumProfile, rule: DecisionRule, sched: TransferSchedule) -> EquilibriumProfile:
    prof = replace(profile, decision=rule, t_s=sched)
    tau = prof.expected_sender_stage() - profile.simplex.v_s_min
    m_p, d_p = _punishment(profile.model, profile.pooling, rule, sched)
    return replace(prof, tau_s=tau, punishment_message=m_p, punishment_decision=d_p)


# --------------------------------------------------------------------------
# Conditions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionResult:
    residual: float
    witness: object
    passed: bool


@dataclass(frozen=True)
class ConditionReport:
    results: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    @property
    def failed(self) -> list[str]:
        return [k for k in CONDITIONS if not self.results[k].passed]

    @property
    def worst(self) -> str:
        """Condition with the smallest residual; ties resolved by priority."""
        low = min(r.residual for r in self.results.values())
        tied = [k for k in _PRIORITY if self.results[k].residual <= low + 1e-15]
        return tied[0]

    def to_dict(self) -> dict:
        return {
            k: {"residual": r.residual, "witness": _jsonable(r.witness), "pass": r.passed}
            for k, r in self.results.items()
        }


def _jsonable(w):
    if isinstance(w, (tuple, list)):
        return [_jsonable(x) for x in w]
    if isinstance(w, (np.floating, np.integer)):
        return w.item()
    return w


def _grid_messages(profile: EquilibriumProfile, n: int):
    theta = np.linspace(0.0, 1.0, n)
    means = profile.means(theta)
    dec = profile.decisions(theta)
    trans = profile.transfers(theta)
    return theta, means, dec, trans


def _sender_gain_matrix(profile: EquilibriumProfile, theta, dec, trans):
    """(1 − δ)·[(u_S(ρ̂, θ) − t̂) − (u_S(ρ, θ) − t)] for every (θ, θ̂) pair.

    The punishment message is appended as a last column so that mimicking it
    counts as an on-path deviation even when it falls between grid points.
    """
    model, delta = profile.model, profile.model.delta
    m_p = np.array([profile.punishment_message])
    targets = np.concatenate([theta, m_p])
    dec_all = np.concatenate([dec, profile.decisions(m_p)])
    trans_all = np.concatenate([trans, profile.transfers(m_p)])
    own = model.u_s(dec, theta) - trans
    mimic = model.u_s(dec_all[None, :], theta[:, None]) - trans_all[None, :]
    return (1 - delta) * (mimic - own[:, None]), own, targets


def check_conditions(
    profile: EquilibriumProfile,
    model: QuadraticModel | None = None,
    simplex: PayoffSimplex | None = None,
    n: int = DEFAULT_GRID,
    tol: float = DEFAULT_TOL,
) -> ConditionReport:
    if n < 100:
        raise DomainError("condition grid needs n ≥ 100")
    model = profile.model if model is None else model
    simplex = profile.simplex if simplex is None else simplex
    delta = model.delta
    v_s_low, v_r_low, v_bar = simplex.v_s_min, simplex.v_r_min, simplex.v_bar
    cont_s, cont_r = profile.continuation
    theta, means, dec, trans = _grid_messages(profile, n)
    out: dict[str, ConditionResult] = {}

    def put(name, residual, witness):
        residual = float(residual)
        out[name] = ConditionResult(residual, witness, residual >= -tol)

    stage_s = profile.expected_sender_stage()
    joint = profile.expected_joint()
    v_s = (1 - delta) * (-profile.tau_s + stage_s) + delta * cont_s
    # receiver's stage payoff is the joint payoff minus the sender's, plus the ex-ante transfer she receives
    stage_r = joint - stage_s
    v_r = (1 - delta) * (-profile.receiver_tau + stage_r) + delta * cont_r
    put("c1_s", v_s - v_s_low, "ex-ante")
    put("c1_r", v_r - v_r_low, "ex-ante")

    gains, own, targets = _sender_gain_matrix(profile, theta, dec, trans)
    i, j = np.unravel_index(int(np.argmax(gains)), gains.shape)
    put("c2a", -gains[i, j], (float(theta[i]), float(targets[j])))

    off_path = (1 - delta) * (own - model.u_s(profile.punishment_decision, theta)) + delta * (cont_s - v_s_low)
    k = int(np.argmin(off_path))
    put("c2b", off_path[k], float(theta[k]))

    w_r = model.w_r(dec, means)
    c3 = (1 - delta) * (trans - w_r) + delta * (cont_r - v_r_low)
    k = int(np.argmin(c3))
    put("c3", c3[k], float(means[k]))

    c4a = delta * (cont_r - v_r_low) - (1 - delta) * w_r
    k = int(np.argmin(c4a))
    put("c4a", c4a[k], float(means[k]))
    put("c4b", delta * (cont_r - v_r_low) - (1 - delta) * model.w_r(profile.punishment_decision,
                                                                     profile.punishment_message),
        float(profile.punishment_message))

    # ex-post transfers are zero, so only the continuation comparison remains
    put("c5", min(delta * (cont_s - v_s_low), delta * (cont_r - v_r_low)), "continuation")
    put("c6", min(cont_s - v_s_low, cont_r - v_r_low, v_bar - cont_s - cont_r), "continuation")
    money = max(abs(profile.tau_s + profile.receiver_tau), 0.0)
    put("c7", -money, "ex-ante")
    return ConditionReport({k: out[k] for k in CONDITIONS}, tol)


def best_deviation(
    profile: EquilibriumProfile,
    model: QuadraticModel | None = None,
    player: str = "sender",
    n: int = DEFAULT_GRID,
):
    """Largest one-shot deviation gain net of punishment, with a witness.

    Sender witnesses are (θ, θ̂) for mimicking θ̂'s message and transfer, or
    (θ, "punishment") for walking away. Receiver witnesses are messages.
    """
    model = profile.model if model is None else model
    delta = model.delta
    simplex = profile.simplex
    cont_s, cont_r = profile.continuation
    theta, means, dec, trans = _grid_messages(profile, n)
    if player == "sender":
        gains, own, targets = _sender_gain_matrix(profile, theta, dec, trans)
        i, j = np.unravel_index(int(np.argmax(gains)), gains.shape)
        best = (float(gains[i, j]), (float(theta[i]), float(targets[j])))
        walk = (1 - delta) * (model.u_s(profile.punishment_decision, theta) - own) + delta * (simplex.v_s_min - cont_s)
        k = int(np.argmax(walk))
        if walk[k] > best[0]:
            best = (float(walk[k]), (float(theta[k]), "punishment"))
        return best
    if player == "receiver":
        w_r = model.w_r(dec, means)
        slack = delta * (cont_r - simplex.v_r_min)
        gain = np.maximum((1 - delta) * w_r - slack, (1 - delta) * (w_r - trans) - slack)
        k = int(np.argmax(gain))
        return float(gain[k]), float(means[k])
    raise DomainError(f"unknown player {player!r}")
