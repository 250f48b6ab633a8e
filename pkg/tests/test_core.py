import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relcomm.core import (
    DomainError,
    GridFunction,
    PayoffSimplex,
    PoolingSet,
    Prior,
    QuadraticModel,
    partition_distance,
    posterior_mean,
    stage_payoffs,
    transforms,
)


def linear_density_prior(n=1000):
    """Tabulated approximation of f(θ) = 2θ with cell averages."""
    edges = np.linspace(0.0, 1.0, n + 1)
    return Prior.tabulated(edges[:-1] + edges[1:])


class TestPrior:
    def test_uniform_moments(self):
        prior = Prior.uniform()
        assert prior.mean == 0.5
        assert prior.second_moment == pytest.approx(1 / 3, abs=1e-15)
        assert prior.kind == "uniform"

    def test_rejects_nonpositive_density(self):
        with pytest.raises(DomainError):
            Prior.tabulated([1.0, 0.0])
        with pytest.raises(DomainError):
            Prior.tabulated([1.5, -0.5])

    def test_rejects_bad_normalization(self):
        with pytest.raises(DomainError):
            Prior.tabulated([1.0, 2.0])
        assert Prior.tabulated([1.0, 2.0], normalize=True).mass(0.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_partial_moments_match_quadrature(self, rng):
        prior = Prior.tabulated(rng.uniform(0.2, 3.0, 7), normalize=True)
        from scipy import integrate

        for x in (0.0, 0.13, 0.5, 0.77, 1.0):
            for k in range(3):
                ref = sum(
                    integrate.quad(lambda s: s**k * prior.pdf(s), a, b)[0]
                    for a, b in zip(prior.edges, prior.edges[1:])
                    if a < x
                    for a, b in [(a, min(b, x))]
                )
                assert prior.partial_moment(x, k) == pytest.approx(ref, abs=1e-12)

    def test_csv_roundtrip_and_renormalize(self, tmp_path, caplog):
        path = tmp_path / "prior.csv"
        path.write_text("cell_index,density\n1,3.0\n0,1.0\n")
        with caplog.at_level(logging.WARNING):
            prior = Prior.from_csv(path)
        assert prior.density == (0.5, 1.5)
        assert "renormalizing" in caplog.text

    def test_csv_requires_header(self, tmp_path):
        path = tmp_path / "prior.csv"
        path.write_text("i,f\n0,1\n")
        with pytest.raises(DomainError):
            Prior.from_csv(path)

    def test_restrict_is_conditional(self):
        prior = Prior.tabulated([0.5, 1.5])
        sub = prior.restrict(0.25, 0.75)
        # conditional mass in (0.25, 0.5) is 0.125 / 0.5 = 0.25
        assert sub.mass(0.0, 0.5) == pytest.approx(0.25, abs=1e-12)
        assert sub.mean == pytest.approx((prior.interval_mean(0.25, 0.75) - 0.25) / 0.5, abs=1e-12)

    def test_reflect_mean(self):
        prior = Prior.tabulated([0.5, 1.5])
        assert prior.reflect().mean == pytest.approx(1 - prior.mean, abs=1e-15)


class TestPosteriorMean:
    def test_uniform_examples(self):
        assert posterior_mean(Prior.uniform(), (0.2, 0.6)) == pytest.approx(0.4, abs=1e-15)
        assert posterior_mean(Prior.uniform(), (0.0, 1.0)) == 0.5

    def test_linear_density(self):
        assert posterior_mean(linear_density_prior(), (0.0, 1.0)) == pytest.approx(2 / 3, abs=1e-3)

    def test_degenerate_interval(self):
        assert posterior_mean(Prior.uniform(), (0.3, 0.3)) == 0.3

    def test_empty_interval(self):
        with pytest.raises(DomainError):
            posterior_mean(Prior.uniform(), (0.6, 0.2))

    def test_exact_within_cell(self):
        prior = Prior.tabulated([0.5, 1.5])
        assert posterior_mean(prior, (0.6, 0.8)) == pytest.approx(0.7, abs=1e-15)
        # spans both cells: masses 0.05 and 0.15 at means 0.45 and 0.55
        assert posterior_mean(prior, (0.4, 0.6)) == pytest.approx(0.525, abs=1e-14)


class TestPoolingSet:
    def test_rejects_overlap(self):
        with pytest.raises(DomainError):
            PoolingSet(((0.1, 0.5), (0.4, 0.6)))
        with pytest.raises(DomainError):
            PoolingSet(((0.5, 0.5),))
        with pytest.raises(DomainError):
            PoolingSet(((-0.1, 0.5),))

    def test_locate(self):
        pooling = PoolingSet(((0.0, 0.3), (0.5, 1.0)))
        got = pooling.locate(np.array([0.0, 0.1, 0.3, 0.4, 0.5, 0.7, 1.0]))
        assert got.tolist() == [0, 0, -1, -1, -1, 1, 1]

    def test_touching_pools_are_distinct(self):
        pooling = PoolingSet(((0.0, 0.5), (0.5, 1.0)))
        assert pooling.locate(0.5) == -1
        assert pooling.means(Prior.uniform()) == (0.25, 0.75)

    def test_gaps_and_reflection(self):
        pooling = PoolingSet(((0.1, 0.3),))
        assert pooling.separated_gaps() == [(0.0, 0.1), (0.3, 1.0)]
        assert pooling.reflect().intervals[0] == pytest.approx((0.7, 0.9))

    def test_partition_distance(self):
        prior = Prior.uniform()
        split = PoolingSet(((0.0, 0.5), (0.5, 1.0)))
        assert partition_distance(prior, split, PoolingSet.full()) == pytest.approx(1.0)
        assert partition_distance(prior, PoolingSet(((0.0, 0.2),)), PoolingSet.empty()) == pytest.approx(0.2)
        assert partition_distance(prior, split, split) == 0.0


class TestModel:
    def test_validation(self):
        for bad in (dict(a=0.0, b=0.0), dict(a=1.0, b=0.0, c=0.0), dict(a=1.0, b=0.0, c=1.5),
                    dict(a=1.0, b=0.0, delta=1.0), dict(a=1.0, b=math.nan)):
            with pytest.raises(DomainError):
                QuadraticModel(**bad)

    def test_sender_sorting_flag(self):
        assert QuadraticModel(2.5, -1.5, 0.25).sender_sorting
        assert not QuadraticModel(3.0, -1.2, 1.0).sender_sorting

    def test_stage_payoff_examples(self):
        model = QuadraticModel(3.0, -1.2, 0.5)
        u_s, u_r, u = stage_payoffs(model, 0.5, 0.5)
        assert u == pytest.approx(0.125)
        assert u_s == pytest.approx(u - u_r)
        assert stage_payoffs(model, 0.3, 0.5)[1] == pytest.approx(0.0225, abs=1e-15)

    @given(a=st.floats(0.1, 5.0), b=st.floats(-3.0, 3.0), c=st.floats(0.05, 1.0),
           theta=st.floats(0.0, 1.0), eps=st.floats(-1.0, 1.0))
    def test_receiver_loss_is_quadratic(self, a, b, c, theta, eps):
        model = QuadraticModel(a, b, c)
        rho = model.rho_r(theta)
        loss = model.u_r(rho, theta) - model.u_r(rho + eps, theta)
        assert loss == pytest.approx(0.5 * c * eps * eps, abs=1e-12)
        assert model.w_r(rho + eps, theta) == pytest.approx(loss, abs=1e-12)

    def test_reflection_preserves_marginal_payoffs(self):
        model = QuadraticModel(2.5, 0.5, 0.4)
        mirror = model.reflect()
        # receiver's preferred decision mirrors: 1 − ρ_R(θ) = ρ_R'(1 − θ)
        for theta in (0.0, 0.3, 1.0):
            assert 1 - model.rho_r(theta) == pytest.approx(mirror.rho_r(1 - theta))


class TestSimplex:
    def test_negative_surplus_rejected(self):
        with pytest.raises(DomainError):
            PayoffSimplex(0.2, 0.2, 0.3)

    def test_contains(self):
        simplex = PayoffSimplex(0.0, 0.0, 1.0)
        assert simplex.contains(0.5, 0.5)
        assert not simplex.contains(0.6, 0.5)


class TestTransforms:
    def test_separation(self):
        _, gamma = transforms(Prior.uniform(), PoolingSet.empty(), 100)
        x = gamma.nodes
        assert np.allclose(gamma.array, x * x / 2, atol=1e-15)
        assert gamma.array[-1] == 0.5

    def test_full_pooling(self):
        _, gamma = transforms(Prior.uniform(), PoolingSet.full(), 100)
        assert gamma(0.75) == pytest.approx(0.25, abs=1e-15)
        assert np.allclose(gamma.array, np.maximum(0.0, gamma.nodes - 0.5), atol=1e-15)

    def test_interior_pool(self):
        g, gamma = transforms(Prior.uniform(), PoolingSet(((0.2, 0.6),)), 10)
        assert gamma(0.6) == pytest.approx(0.18, abs=1e-15)
        assert gamma(0.4) == pytest.approx(0.06, abs=1e-15)
        assert g(0.3) == pytest.approx(0.2)
        assert g(0.5) == pytest.approx(0.6)

    def test_terminal_value(self, rng):
        prior = Prior.tabulated(rng.uniform(0.5, 2.0, 5), normalize=True)
        _, gamma = transforms(prior, PoolingSet(((0.1, 0.45), (0.7, 1.0))), 400)
        assert gamma.array[-1] == pytest.approx(1 - prior.mean, abs=1e-12)

    def test_rejects_tiny_grid(self):
        with pytest.raises(DomainError):
            transforms(Prior.uniform(), PoolingSet.empty(), 1)

    def test_grid_function_validation(self):
        with pytest.raises(DomainError):
            GridFunction((1.0,))
        with pytest.raises(DomainError):
            GridFunction((0.0, math.inf))
