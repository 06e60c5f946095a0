import numpy as np
import pytest

from multirdd.core import CounterfactualSpec, CutoffSchedule, Sample
from multirdd.errors import QuadratureDivergence, SingularLocalDesign, ZeroDensityEverywhere
from multirdd.quadrature import QuadratureConfig
from multirdd.weights import (
    PolyBasis,
    correction_weights,
    discrete_weights_normalized,
    intercept_weights,
    local_beta_fit,
)

from . import oracles


def even_schedule(K, doses=None):
    c = np.arange(1, K + 1) / (K + 1)
    return CutoffSchedule.from_doses(c, np.arange(1, K + 2) if doses is None else doses, (0.0, 1.0))


UNIT = CounterfactualSpec.uniform("cutoff-only", [(0.0, 1.0)])


class TestBasis:
    @pytest.mark.parametrize("rho2", range(5))
    def test_full_size(self, rho2):
        from math import factorial

        J = 2 * factorial(rho2 + 2) // (2 * factorial(rho2)) - (rho2 + 1)
        assert PolyBasis(rho2, "full").J == J

    def test_full_rho3_is_16(self):
        assert PolyBasis(3, "full").J == 16

    def test_cutoff_only(self):
        b = PolyBasis(4, "cutoff-only")
        assert b.J == 5
        assert b.exponents[0] == (0,)

    def test_first_is_constant(self):
        for p in ("full", "cutoff-only", "dose-change"):
            assert sum(PolyBasis(2, p).exponents[0]) == 0

    def test_full_excludes_mixed_dose_terms(self):
        assert all(min(g[1], g[2]) == 0 for g in PolyBasis(4, "full").exponents)


class TestLocalFit:
    def test_constant(self):
        sch = even_schedule(10)
        for at in (0.2, 0.5, 0.77):
            v = local_beta_fit(np.full(10, 7.0), sch, PolyBasis(1), 0.3, at=[at])
            assert v == pytest.approx(7.0, abs=1e-10)

    def test_line(self):
        sch = even_schedule(10)
        b = 1.0 - 2.0 * sch.c
        for at in (0.1, 0.5, 0.9):
            assert local_beta_fit(b, sch, PolyBasis(1), 0.3, at=[at]) == pytest.approx(1 - 2 * at, abs=1e-10)

    def test_full_profile_rho3_oracle(self):
        rng = np.random.default_rng(0)
        K = 40
        c = np.sort(rng.uniform(0.05, 0.95, K))
        doses = rng.uniform(0.0, 1.0, K + 1)
        sch = CutoffSchedule.from_doses(c, doses, (0.0, 1.0))
        basis = PolyBasis(3, "full")
        bhat = rng.standard_normal(K)
        pts = sch.points("full")
        at = pts.mean(axis=0)
        h2 = 2.0
        got = local_beta_fit(bhat, sch, basis, h2, k="uniform", at=at)
        L = oracles.local_intercept_weights(pts.tolist(), at.tolist(), basis.exponents, h2, "uniform")
        assert got == pytest.approx(float(L @ bhat), rel=1e-8, abs=1e-8)

    def test_singular(self):
        sch = even_schedule(10)
        with pytest.raises(SingularLocalDesign) as ei:
            local_beta_fit(np.ones(10), sch, PolyBasis(2), 0.05, at=[0.5])
        assert ei.value.at[0] == pytest.approx(0.5)


class TestCorrectionWeights:
    def test_sum_to_one(self):
        w = correction_weights(even_schedule(20), UNIT, PolyBasis(1), 3 / 21)
        assert w.delta.sum() == pytest.approx(1.0, abs=1e-4)
        assert np.all(np.isfinite(w.delta))

    def test_linear_integral(self):
        sch = even_schedule(20)
        w = correction_weights(sch, UNIT, PolyBasis(1), 3 / 21)
        beta = 0.3 + 1.7 * sch.c
        assert w.delta @ beta == pytest.approx(0.3 + 1.7 / 2, abs=1e-4)

    def test_matches_pointwise_oracle(self):
        # Delta is the integral of the local intercept weights
        sch = even_schedule(8)
        basis = PolyBasis(1)
        h2 = 0.4
        w = correction_weights(sch, UNIT, basis, h2)
        xg, wg = np.polynomial.legendre.leggauss(400)
        t = 0.5 * (xg + 1)
        ref = np.zeros(8)
        for ti, wi in zip(t, wg):
            ref += 0.5 * wi * oracles.local_intercept_weights(sch.points("cutoff-only").tolist(), [ti],
                                                              basis.exponents, h2)
        np.testing.assert_allclose(w.delta, ref, atol=2e-5)

    def test_infinite_h2_rho0_is_plain_average(self):
        w = correction_weights(even_schedule(7), UNIT, PolyBasis(0), np.inf)
        np.testing.assert_allclose(w.delta, np.full(7, 1 / 7), atol=1e-12)

    def test_independent_of_outcomes(self):
        a = correction_weights(even_schedule(12), UNIT, PolyBasis(2), 0.4)
        b = correction_weights(even_schedule(12), UNIT, PolyBasis(2), 0.4)
        np.testing.assert_array_equal(a.delta, b.delta)

    def test_profile_reduction(self):
        sch = even_schedule(15)
        cf = CounterfactualSpec.uniform("dose-change", [(0.0, 1.0), 1.0])
        a = correction_weights(sch, cf, PolyBasis(1, "dose-change"), 0.3)
        b = correction_weights(sch, UNIT, PolyBasis(1), 0.3)
        np.testing.assert_allclose(a.delta, b.delta, atol=1e-10)

    def test_singular_node_reported(self):
        with pytest.raises(SingularLocalDesign):
            correction_weights(even_schedule(10), UNIT, PolyBasis(2), 0.1)

    def test_divergence(self):
        quad = QuadratureConfig(nodes_per_dim=2, split_at_kinks=False, tol=1e-12)
        with pytest.raises(QuadratureDivergence):
            correction_weights(even_schedule(10), UNIT, PolyBasis(1), 0.35, quad=quad)

    def test_quadrature_diagnostics(self):
        w = correction_weights(even_schedule(10), UNIT, PolyBasis(1), 0.35)
        assert w.error < 1e-6
        assert w.mass == pytest.approx(1.0, abs=1e-12)
        assert w.to_dict()["quadrature"]["nodes"] == w.nodes

    def test_full_profile_polynomial_reproduction(self):
        rng = np.random.default_rng(3)
        K = 30
        c = np.arange(1, K + 1) / (K + 1)
        doses = np.concatenate([[0.0], rng.uniform(0, 1, K)])
        sch = CutoffSchedule(tuple(zip(c, doses[:-1], doses[1:])), (0.0, 1.0))
        cf = CounterfactualSpec.uniform("full", [(0.2, 0.8), (0.2, 0.8), (0.2, 0.8)])
        basis = PolyBasis(1, "full")
        quad = QuadratureConfig(nodes_per_dim=6)
        w = correction_weights(sch, cf, basis, np.inf, quad=quad)
        pts = sch.points("full")
        p = 0.5 + pts[:, 0] - 2 * pts[:, 1] + 3 * pts[:, 2]
        assert w.delta @ p == pytest.approx(0.5 + 0.5 - 1.0 + 1.5, abs=1e-8)


class TestDiscreteEstimated:
    def test_symmetric_halves(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(size=10_000)
        sch = CutoffSchedule.from_doses([0.3, 0.7], [0, 1, 2], (0, 1))
        ew = discrete_weights_normalized(Sample(x, x), sch, 0.1)
        np.testing.assert_allclose(ew.weights, [0.5, 0.5], atol=0.02)

    def test_single_cutoff(self):
        x = np.linspace(0, 1, 50)
        ew = discrete_weights_normalized(Sample(x, x), CutoffSchedule.from_doses([0.5], [0, 1], (0, 1)), 0.2)
        assert ew.weights.tolist() == [1.0]

    def test_density_oracle(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(size=200)
        sch = CutoffSchedule.from_doses([0.25, 0.6], [0, 1, 2], (0, 1))
        ew = discrete_weights_normalized(Sample(x, x), sch, 0.15)
        for j, c in enumerate(sch.c):
            assert ew.density[j] == pytest.approx(oracles.density_at(x, c, 0.15), abs=1e-12)

    def test_zero_density(self):
        x = np.linspace(0.0, 0.1, 20)
        with pytest.raises(ZeroDensityEverywhere):
            discrete_weights_normalized(Sample(x, x), CutoffSchedule.from_doses([0.5], [0, 1], (0, 1)), 0.1)


def test_intercept_weights_shape():
    L = intercept_weights(even_schedule(10), PolyBasis(1), 0.3, [[0.2], [0.5]])
    assert L.shape == (2, 10)
    np.testing.assert_allclose(L.sum(axis=1), 1.0, atol=1e-12)
