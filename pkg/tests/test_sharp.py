import warnings

import numpy as np
import pytest

from multirdd.core import BandwidthPlan, CounterfactualSpec, CutoffSchedule, Sample, nn_residuals
from multirdd.errors import AllGridPointsInfeasible, RDDValidationError
from multirdd.lpr import estimate_jumps
from multirdd.mc import DgpConfig, draw_sample
from multirdd.sharp import (
    RateWarning,
    aggregate_variance,
    ate_continuous,
    ate_discrete,
    ate_discrete_estimated,
    select_h2,
    var_sharp,
)
from multirdd.weights import PolyBasis

from . import oracles

UNIT = CounterfactualSpec.uniform("cutoff-only", [(0.0, 1.0)])


def two_cut():
    return CutoffSchedule.from_doses([0.35, 0.7], [0, 1, 3], (0.0, 1.0))


def noisy(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    sch = two_cut()
    y = np.cos(x) + sch.treatment(x) + rng.standard_normal(n) * 0.3
    return Sample(y, x), sch


class TestDiscrete:
    def test_single_weight(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=200)
        y = x + (x >= 0.5) + rng.standard_normal(200)
        sch = CutoffSchedule.from_doses([0.5], [0, 1], (0, 1))
        plan = BandwidthPlan((0.3,))
        res = ate_discrete(Sample(y, x), sch, [1.0], plan)
        assert res.mu == estimate_jumps(Sample(y, x), sch, plan).values[0]

    def test_noiseless_steps(self):
        x = np.linspace(0, 1, 300, endpoint=False)
        sch = two_cut()
        y = sch.treatment(x)
        res = ate_discrete(Sample(y, x), sch, [0.5, 0.5], BandwidthPlan((0.2, 0.2)))
        assert res.mu == pytest.approx(1.5, abs=1e-10)
        assert res.mu_bc == pytest.approx(1.5, abs=1e-10)
        assert res.variance == pytest.approx(0.0, abs=1e-20)

    def test_linearity(self):
        s, sch = noisy()
        plan = BandwidthPlan((0.2, 0.2))
        a = ate_discrete(s, sch, [0.2, 0.8], plan).mu
        b = ate_discrete(s, sch, [0.9, 0.1], plan).mu
        c = ate_discrete(s, sch, [0.3 * 0.2 + 0.7 * 0.9, 0.3 * 0.8 + 0.7 * 0.1], plan).mu
        assert c == pytest.approx(0.3 * a + 0.7 * b, abs=1e-12)

    def test_weights_validated(self):
        s, sch = noisy()
        with pytest.raises(RDDValidationError):
            ate_discrete(s, sch, [0.7, 0.7], BandwidthPlan((0.2, 0.2)))

    def test_location_invariance(self):
        x = np.linspace(0, 1, 300, endpoint=False)
        sch = two_cut()
        y = sch.treatment(x)
        plan = BandwidthPlan((0.2, 0.2))
        base = ate_discrete(Sample(y, x), sch, [0.5, 0.5], plan)
        shifted = ate_discrete(Sample(y + 4 - 3 * x, x), sch, [0.5, 0.5], plan)
        assert shifted.mu == pytest.approx(base.mu, abs=1e-8)

    def test_bias_correction_exactness(self):
        # quadratic side means: the local-linear fit is biased, the quadratic one exact
        x = np.linspace(0, 1, 600, endpoint=False)
        sch = two_cut()
        y = sch.treatment(x) + 5 * x ** 2
        res = ate_discrete(Sample(y, x), sch, [0.5, 0.5], BandwidthPlan((0.2, 0.2)))
        assert res.mu_bc == pytest.approx(1.5, abs=1e-9)
        assert abs(res.mu - 1.5) > 1e-4

    def test_ci_from_bias_corrected_pair(self):
        s, sch = noisy()
        res = ate_discrete(s, sch, [0.5, 0.5], BandwidthPlan((0.2, 0.2)))
        lo, hi = res.ci95
        assert lo < res.mu_bc < hi
        assert hi - lo == pytest.approx(2 * 1.96 * res.se_bc)
        d = res.to_dict()
        assert set(d) >= {"mu", "se", "mu_bc", "se_bc", "ci95", "h1", "h2", "weights", "diagnostics"}


class TestVariance:
    def test_zero_residuals(self):
        x = np.linspace(0, 1, 200, endpoint=False)
        sch = CutoffSchedule.from_doses([0.5], [0, 1], (0, 1))
        y = (x >= 0.5).astype(float)
        assert var_sharp(Sample(y, x), sch, [1.0], BandwidthPlan((0.2,)), rho=1) == 0.0

    def test_single_cutoff_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=120)
        y = np.sin(4 * x) + (x >= 0.5) + rng.standard_normal(120)
        sch = CutoffSchedule.from_doses([0.5], [0, 1], (0, 1))
        got = var_sharp(Sample(y, x), sch, [1.0], BandwidthPlan((0.3,)), rho=1)
        ref = oracles.var_sharp(x, y, [0.5], [0.3], 1, [1.0])
        assert got == pytest.approx(ref, rel=1e-10)

    def test_quadratic_in_weights(self):
        s, sch = noisy()
        plan = BandwidthPlan((0.3, 0.3))
        v1 = var_sharp(s, sch, [0.3, 0.7], plan, rho=1)
        v2 = var_sharp(s, sch, [0.6, 1.4], plan, rho=1)
        assert v2 == pytest.approx(4 * v1, rel=1e-14)

    def test_overlap_enters(self):
        # overlapping windows: the variance is not the sum of per-cutoff pieces
        s, sch = noisy(800)
        plan = BandwidthPlan((0.35, 0.35))
        js = estimate_jumps(s, sch, plan)
        e2 = nn_residuals(s, sch)
        w = np.array([0.5, 0.5])
        whole = aggregate_variance(js, e2, w)
        parts = aggregate_variance(js, e2, np.array([0.5, 0.0])) + aggregate_variance(js, e2, np.array([0.0, 0.5]))
        assert abs(whole - parts) > 1e-8
        ref = oracles.var_sharp(s.x, s.y, sch.c, js.h, 1, w)
        assert whole == pytest.approx(ref, rel=1e-10)

    def test_positive(self):
        s, sch = noisy()
        assert var_sharp(s, sch, [0.5, 0.5], BandwidthPlan((0.2, 0.2)), rho=2) > 0


class TestEstimatedWeights:
    def test_runs_and_positive(self):
        s, sch = noisy(1500)
        res = ate_discrete_estimated(s, sch, 0.1, BandwidthPlan((0.2, 0.2)))
        assert res.variance > 0
        np.testing.assert_allclose(sum(res.weights_used), 1.0)

    def test_delta_form(self):
        s, sch = noisy(1500)
        a = ate_discrete_estimated(s, sch, 0.1, BandwidthPlan((0.2, 0.2)), influence="delta")
        b = ate_discrete_estimated(s, sch, 0.1, BandwidthPlan((0.2, 0.2)))
        assert a.mu == b.mu
        assert a.variance != b.variance


class TestContinuous:
    def test_constant_effect(self):
        K = 12
        c = np.arange(1, K + 1) / (K + 1)
        sch = CutoffSchedule.from_doses(c, 2.0 * np.arange(K + 1), (0, 1))
        x = np.linspace(0, 1, 2000, endpoint=False)
        y = sch.treatment(x)
        plan = BandwidthPlan.uniform(1 / (K + 1), K, h2=4 / (K + 1))
        res = ate_continuous(Sample(y, x), sch, UNIT, plan, quad=None)
        assert res.mu == pytest.approx(2.0, abs=1e-4)
        assert res.mu_bc == pytest.approx(2.0, abs=1e-4)

    def test_rate_warning(self):
        cfg = DgpConfig(500)
        s = draw_sample(cfg, 1)
        plan = BandwidthPlan.uniform(1 / (cfg.K + 1), cfg.K, h2=3 / (cfg.K + 1))
        cf = CounterfactualSpec.uniform("dose-change", [(0.0, 1.0), 1.0])
        # rho2 = 1 is below the recommended order for a two-dimensional profile
        with pytest.warns(RateWarning):
            ate_continuous(s, cfg.schedule, cf, plan)

    def test_needs_h2(self):
        s, sch = noisy()
        with pytest.raises(RDDValidationError):
            ate_continuous(s, sch, UNIT, BandwidthPlan((0.2, 0.2)))

    def test_infinite_h2_naive(self):
        cfg = DgpConfig(1789)
        s = draw_sample(cfg, 4)
        K = cfg.K
        plan = BandwidthPlan.uniform(1 / (K + 1), K, h2=np.inf, rho2=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RateWarning)
            res = ate_continuous(s, cfg.schedule, UNIT, plan)
        js = estimate_jumps(s, cfg.schedule, plan)
        assert res.mu == pytest.approx(js.values.mean(), abs=1e-12)


class TestSelect:
    def setup_method(self):
        self.cfg = DgpConfig(1789)
        self.s = draw_sample(self.cfg, 11)
        K = self.cfg.K
        self.plan = BandwidthPlan.uniform(1 / (K + 1), K)

    def test_single_point(self):
        h = 5 / (self.cfg.K + 1)
        sel = select_h2(self.s, self.cfg.schedule, UNIT, self.plan, grid=[h])
        assert sel.h2_star == h
        assert sel.estimate == (sel.result.mu_bc, sel.result.variance_bc)

    def test_curve_matches_public_api(self):
        K = self.cfg.K
        grid = [3 / (K + 1), 6 / (K + 1)]
        sel = select_h2(self.s, self.cfg.schedule, UNIT, self.plan, grid=grid)
        for h2 in grid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RateWarning)
                r = ate_continuous(self.s, self.cfg.schedule, UNIT, self.plan.replace(h2=h2))
            assert sel.curve[h2] == pytest.approx((r.mu - r.mu_bc) ** 2 + r.variance, rel=1e-12)
        assert sel.h2_star == min(sel.curve, key=sel.curve.get)

    def test_all_infeasible(self):
        with pytest.raises(AllGridPointsInfeasible):
            select_h2(self.s, self.cfg.schedule, UNIT, self.plan, grid=[0.01, 0.02])

    def test_infeasible_points_skipped(self):
        K = self.cfg.K
        sel = select_h2(self.s, self.cfg.schedule, UNIT, self.plan, grid=[0.01, 4 / (K + 1)])
        assert sel.h2_star == 4 / (K + 1)
        assert [h for h, _ in sel.infeasible] == [0.01]
