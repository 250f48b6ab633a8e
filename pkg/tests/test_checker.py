import numpy as np
import pytest

from relcomm.checker import (
    CONDITIONS,
    PERTURBATIONS,
    PUSH,
    DecisionRule,
    build_profile,
    best_deviation,
    check_conditions,
    interim_transfers,
    is_monotone,
    perturb,
    second_best_rule,
)
from relcomm.core import DomainError, PayoffSimplex, PoolingSet, QuadraticModel
from relcomm.equilibrium import receiver_worst, solve_fixed_point
from relcomm.persuasion import PersuasionSolution
from tests.conftest import random_pooling

LOBBY = QuadraticModel(2.5, -1.5, 0.25, 0.05)


@pytest.fixture(scope="module")
def lobby_profile():
    fp = solve_fixed_point(LOBBY)
    return build_profile(LOBBY, fp.solution, fp.simplex)


def constant_rule(values, separated=0.0):
    return DecisionRule(tuple(values), lambda x: np.full(np.shape(x), separated, dtype=float))


def custom_profile(model, pooling, ell, extra_surplus=0.0):
    """Profile whose simplex makes ℓ exactly affordable (plus `extra_surplus`)."""
    rule = second_best_rule(model, ell, pooling)
    draft = build_profile(model, PersuasionSolution(pooling, 0.0, "custom"),
                          PayoffSimplex(0.0, 0.0, 0.0), ell=ell, rule=rule)
    v_bar = draft.expected_joint()
    need = 0.0 if model.delta == 0 else (1 - model.delta) / model.delta * 0.5 * model.c * ell * ell
    v_r = receiver_worst(model)
    simplex = PayoffSimplex(v_bar - v_r - need - extra_surplus, v_r, v_bar)
    return build_profile(model, PersuasionSolution(pooling, v_bar, "custom"), simplex, ell=ell, rule=rule)


class TestInterimTransfers:
    def test_agency_closed_form(self):
        model = QuadraticModel(0.5, 0.0, 1.0, 0.0)
        rule = second_best_rule(model, 0.0, PoolingSet.empty())
        sched = interim_transfers(model, PoolingSet.empty(), rule)
        x = np.linspace(0, 1, 1001)
        assert np.allclose(sched(x), 0.5 * 0.5 * 0.5 * x * x, atol=1e-12, rtol=0)
        assert sched(1.0)[0] == pytest.approx(0.125, abs=1e-12)
        assert sched.minimizer == pytest.approx(0.0, abs=1e-9)
        assert sched(0.0)[0] == pytest.approx(0.0, abs=1e-15)

    def test_complete_pooling_pays_nothing(self):
        model = QuadraticModel(3.0, -1.2, 1.0, 0.4)
        sched = interim_transfers(model, PoolingSet.full(), constant_rule([0.7]))
        assert sched.pool_values == (0.0,)
        assert np.all(sched(np.linspace(0, 1, 11)) == 0.0)

    def test_boundary_type_indifferent(self):
        model = QuadraticModel(2.5, -1.5, 0.25, 0.3)
        pooling = PoolingSet(((0.0, 0.5), (0.5, 1.0)))
        d1, d2 = 0.1, 0.6
        # the shared endpoint is a singleton message; its decision sits between the two
        sched = interim_transfers(model, pooling, constant_rule([d1, d2], 0.5 * (d1 + d2)))
        gap = sched.pool_values[1] - sched.pool_values[0]
        assert gap == pytest.approx(float(model.u_s(d2, 0.5) - model.u_s(d1, 0.5)), abs=1e-12)
        assert min(sched.pool_values) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_representative_independent(self, seed):
        rng = np.random.default_rng(seed)
        model = QuadraticModel(2.5, -1.5, 0.25, 0.3)
        pooling = random_pooling(rng, 3)
        rule = second_best_rule(model, 0.5, pooling)
        base = interim_transfers(model, pooling, rule, representative=0.5)
        for r in (0.0, 0.2, 0.9, 1.0):
            other = interim_transfers(model, pooling, rule, representative=r)
            assert other.pool_values == pytest.approx(base.pool_values, abs=1e-12)
            assert other.constant == pytest.approx(base.constant, abs=1e-12)

    def test_rejects_non_monotone(self):
        pooling = PoolingSet(((0.0, 0.5), (0.5, 1.0)))
        rule = constant_rule([0.6, 0.1])
        assert not is_monotone(pooling, rule)
        with pytest.raises(DomainError):
            interim_transfers(LOBBY, pooling, rule)


class TestBuildProfile:
    def test_fixed_point_profile_passes(self, lobby_profile):
        report = check_conditions(lobby_profile, n=500)
        assert report.passed, report.to_dict()
        assert min(r.residual for r in report.results.values()) >= -1e-9

    @pytest.mark.parametrize("delta", [0.02, 0.1, 0.2])
    def test_other_discount_factors(self, delta):
        model = LOBBY.with_delta(delta)
        fp = solve_fixed_point(model)
        assert check_conditions(build_profile(model, fp.solution, fp.simplex)).passed

    def test_myopic_profile_uses_receiver_decision(self):
        model = QuadraticModel(2.5, -1.5, 0.25, 0.0)
        fp = solve_fixed_point(model)
        profile = build_profile(model, fp.solution, fp.simplex)
        x = np.linspace(0, 1, 101)
        means = profile.means(x)
        assert np.allclose(profile.decisions(x), model.rho_r(means), atol=1e-15)

    def test_complete_pooling_tau(self):
        model = QuadraticModel(3.0, -1.2, 1.0, 0.0)
        fp = solve_fixed_point(model)
        assert fp.solution.pooling == PoolingSet.full()
        profile = build_profile(model, fp.solution, fp.simplex)
        assert profile.t_s.pool_values == (0.0,)
        # E[u_S(ρ_R(1/2), θ)] is u_S at the mean because u_S is linear in θ
        expected = float(model.u_s(model.rho_r(0.5), 0.5)) - fp.simplex.v_s_min
        assert profile.tau_s == pytest.approx(expected, abs=1e-12)
        assert check_conditions(profile).passed

    @pytest.mark.xfail(strict=True, reason="with a·c ≥ 1 the receiver's bias reverses sorting; "
                                           "low types gain by mimicking pooled high messages")
    def test_strongly_biased_fixed_point_passes(self):
        model = QuadraticModel(3.0, -1.2, 1.0, 0.6)
        fp = solve_fixed_point(model)
        assert check_conditions(build_profile(model, fp.solution, fp.simplex)).passed


class TestSufficiency:
    def test_random_monotone_instances_pass(self, rng):
        failures = []
        for k in range(200):
            a = rng.uniform(1.2, 4.0)
            model = QuadraticModel(a, rng.uniform(-a, 0.5), rng.uniform(0.05, 0.95) / a, rng.uniform(0.05, 0.9))
            pooling = random_pooling(rng, 3)
            profile = custom_profile(model, pooling, rng.uniform(0.0, 1.5), rng.uniform(0.0, 0.1))
            report = check_conditions(profile, n=200)
            if not report.passed:
                failures.append((k, report.worst, report.results[report.worst].residual))
        assert not failures


class TestMyopic:
    def test_receiver_decision_passes(self):
        model = QuadraticModel(1.5, -0.3, 0.5, 0.0)
        profile = custom_profile(model, PoolingSet(((0.2, 0.5),)), 0.0)
        assert check_conditions(profile).passed

    def test_any_other_decision_fails(self):
        model = QuadraticModel(1.5, -0.3, 0.5, 0.0)
        profile = custom_profile(model, PoolingSet(((0.2, 0.5),)), 0.0)
        bent = perturb(profile, "decision")
        report = check_conditions(bent)
        assert not report.passed and "c4a" in report.failed


class TestPerturbations:
    def test_decision_push(self, lobby_profile):
        report = check_conditions(perturb(lobby_profile, "decision"))
        ell, c, delta = lobby_profile.ell, LOBBY.c, LOBBY.delta
        assert report.worst == "c4a"
        expected = -(1 - delta) * 0.5 * c * ((ell + PUSH) ** 2 - ell**2)
        assert report.results["c4a"].residual == pytest.approx(expected, abs=1e-9)

    def test_transfer_undercut(self, lobby_profile):
        report = check_conditions(perturb(lobby_profile, "transfer"))
        assert report.worst == "c2a"
        assert report.results["c2a"].residual < -1e-3

    def test_monotonicity_break(self, lobby_profile):
        report = check_conditions(perturb(lobby_profile, "monotone"))
        assert report.worst == "c2a"

    def test_unknown(self, lobby_profile):
        with pytest.raises(DomainError):
            perturb(lobby_profile, "tax")

    def test_all_kinds_fail(self, lobby_profile):
        for kind in PERTURBATIONS:
            assert not check_conditions(perturb(lobby_profile, kind)).passed


class TestReport:
    def test_pass_flags_follow_tolerance(self, lobby_profile):
        report = check_conditions(perturb(lobby_profile, "decision"), tol=1e-9)
        assert set(report.results) == set(CONDITIONS)
        for r in report.results.values():
            assert r.passed == (r.residual >= -1e-9)
        assert report.failed and report.failed[0] in CONDITIONS

    def test_grid_too_small(self, lobby_profile):
        with pytest.raises(DomainError):
            check_conditions(lobby_profile, n=50)


class TestBestDeviation:
    def test_equilibrium_has_no_gain(self, lobby_profile):
        assert best_deviation(lobby_profile, player="sender")[0] <= 1e-9
        assert best_deviation(lobby_profile, player="receiver")[0] <= 1e-9

    def test_receiver_gain_beyond_band(self, lobby_profile):
        bent = perturb(lobby_profile, "decision")
        gain, witness = best_deviation(bent, player="receiver")
        assert gain > 0
        assert gain == pytest.approx(-check_conditions(bent).results["c4a"].residual, abs=1e-12)
        assert witness == pytest.approx(bent.pooling.means(LOBBY.prior)[0])

    def test_sender_gain_when_misordered(self, lobby_profile):
        gain, (theta, target) = best_deviation(perturb(lobby_profile, "monotone"), player="sender")
        assert gain > 0 and theta != target

    def test_unknown_player(self, lobby_profile):
        with pytest.raises(DomainError):
            best_deviation(lobby_profile, player="auditor")
