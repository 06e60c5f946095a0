import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multirdd.core import (
    TRIANGULAR,
    UNIFORM,
    BandwidthPlan,
    CounterfactualSpec,
    CutoffSchedule,
    KernelSpec,
    Sample,
    kernel_eval,
    nn_residual_vectors,
    nn_residuals,
    validate_schedule,
)
from multirdd.errors import (
    EmptyWindow,
    RDDValidationError,
    TooFewNeighbors,
    UnorderedCutoffs,
    WindowCrossesCutoff,
)

from . import oracles


def one_cut(c=0.5):
    return CutoffSchedule.from_doses([c], [0, 1], (0.0, 1.0))


class TestSample:
    def test_lengths_must_match(self):
        with pytest.raises(RDDValidationError):
            Sample([1.0, 2.0], [0.1])

    def test_nonfinite_x_rejected(self):
        with pytest.raises(RDDValidationError):
            Sample([1.0, 2.0], [0.1, np.nan])

    def test_empty_rejected(self):
        with pytest.raises(RDDValidationError):
            Sample([], [])

    def test_sorted_is_stable(self):
        s = Sample([1.0, 2.0, 3.0], [0.5, 0.1, 0.5])
        t = s.sorted()
        assert t.x.tolist() == [0.1, 0.5, 0.5]
        assert t.y.tolist() == [2.0, 1.0, 3.0]


class TestSchedule:
    def test_unordered(self):
        with pytest.raises(UnorderedCutoffs):
            CutoffSchedule.from_doses([0.4, 0.3], [0, 1, 2], (0, 1))

    def test_outside_domain(self):
        with pytest.raises(RDDValidationError):
            CutoffSchedule.from_doses([1.0], [0, 1], (0, 1))

    def test_triples_and_treatment(self):
        s = CutoffSchedule.from_doses([0.3, 0.6], [1, 2, 4], (0, 1))
        assert s.cutoffs == ((0.3, 1.0, 2.0), (0.6, 2.0, 4.0))
        assert s.treatment(np.array([0.1, 0.3, 0.59, 0.6])).tolist() == [1, 2, 2, 4]
        assert s.points("dose-change")[:, 1].tolist() == [1.0, 2.0]


class TestKernel:
    def test_values(self):
        assert kernel_eval(TRIANGULAR, 0.0) == 1.0
        assert kernel_eval(TRIANGULAR, 0.5) == 0.5
        assert kernel_eval(TRIANGULAR, 1.5) == 0.0
        assert kernel_eval(UNIFORM, 0.3) == 0.5
        assert kernel_eval(UNIFORM, -1.0) == 0.5

    @pytest.mark.parametrize("kind", ["triangular", "uniform"])
    def test_integrates_to_one_simpson(self, kind):
        # composite Simpson on each half, exact on the piecewise linear kernel
        u = np.linspace(-1, 1, 2001)
        f = KernelSpec(kind)(u)
        step = u[1] - u[0]
        total = step / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
        assert abs(total - 1.0) < 1e-10

    @given(st.floats(-3, 3, allow_nan=False))
    def test_symmetric(self, u):
        for k in (TRIANGULAR, UNIFORM):
            assert kernel_eval(k, u) == kernel_eval(k, -u)

    def test_unknown_kind(self):
        with pytest.raises(RDDValidationError):
            KernelSpec("epanechnikov")


class TestValidate:
    def test_well_separated(self):
        x = np.linspace(0.005, 0.995, 100)
        r = validate_schedule(Sample(x, x), one_cut(), BandwidthPlan((0.2,)))
        assert not r.any_clipped
        assert r.n_left[0] > 0 and r.n_right[0] > 0

    def test_clipping(self):
        x = np.linspace(0.005, 0.995, 200)
        sch = CutoffSchedule.from_doses([0.3, 0.4], [0, 1, 2], (0, 1))
        r = validate_schedule(Sample(x, x), sch, BandwidthPlan((0.2, 0.2)))
        np.testing.assert_allclose(r.h1, [0.1, 0.1], atol=1e-15)
        assert r.clipped.tolist() == [True, True]

    def test_no_clip_raises(self):
        x = np.linspace(0.005, 0.995, 200)
        sch = CutoffSchedule.from_doses([0.3, 0.4], [0, 1, 2], (0, 1))
        with pytest.raises(WindowCrossesCutoff):
            validate_schedule(Sample(x, x), sch, BandwidthPlan((0.2, 0.2), clip=False))

    def test_empty_right(self):
        x = np.linspace(0.0, 0.4, 50)
        with pytest.raises(EmptyWindow) as ei:
            validate_schedule(Sample(x, x), one_cut(), BandwidthPlan((0.2,)))
        assert (ei.value.j, ei.value.side) == (1, "right")

    def test_distinct_values_counted(self):
        # three copies of one x on the left count as one distinct value
        x = np.array([0.45, 0.45, 0.45, 0.42, 0.55, 0.6, 0.65])
        with pytest.raises(EmptyWindow) as ei:
            validate_schedule(Sample(x, x), one_cut(), BandwidthPlan((0.2,)))
        assert ei.value.side == "left"

    def test_pure(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=300)
        s = Sample(x, x)
        sch = CutoffSchedule.from_doses([0.3, 0.6], [0, 1, 2], (0, 1))
        a = validate_schedule(s, sch, BandwidthPlan((0.25, 0.25))).to_dict()
        b = validate_schedule(s, sch, BandwidthPlan((0.25, 0.25))).to_dict()
        assert a == b


class TestNN:
    def test_hand_case(self):
        x = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
        y = np.array([0.0, 0.0, 3.0, 0.0, 0.0])
        sch = CutoffSchedule.from_doses([0.9], [0, 1], (0, 1))
        e2 = nn_residuals(Sample(y, x), sch)
        assert e2[2] == pytest.approx(6.75, abs=1e-12)

    def test_constant_within_segment(self):
        x = np.linspace(0.01, 0.99, 40)
        y = np.where(x < 0.5, 2.0, -1.0)
        assert np.all(nn_residuals(Sample(y, x), one_cut()) == 0.0)

    def test_unit_variance(self):
        rng = np.random.default_rng(7)
        n = 10_000
        s = Sample(rng.standard_normal(n), rng.uniform(size=n))
        assert abs(nn_residuals(s, one_cut()).mean() - 1.0) < 0.05

    def test_too_few(self):
        x = np.array([0.1, 0.2, 0.3, 0.4, 0.6, 0.7])
        with pytest.raises(TooFewNeighbors):
            nn_residuals(Sample(x, x), one_cut())

    def test_ties_go_to_smaller_index(self):
        # dyadic x values give exact distance ties: 0.25 and 0.75 are both 0.25 from 0.5
        x = np.array([0.75, 0.375, 0.5, 0.625, 0.25])
        y = np.array([10.0, 0.0, 0.0, 0.0, 1.0])
        r = nn_residual_vectors(Sample(y, x), CutoffSchedule.from_doses([0.9], [0, 1], (0, 1)))
        # neighbours of x=0.5 are indices 1, 3 and then 0 (index 0 beats index 4)
        assert r[2] == pytest.approx(np.sqrt(0.75) * (0.0 - 10.0 / 3))

    def test_never_crosses_cutoff(self):
        # a huge value just across the cutoff must not leak in
        x = np.array([0.1, 0.2, 0.3, 0.45, 0.51, 0.6, 0.7, 0.8])
        y = np.array([0, 0, 0, 0, 1e6, 1e6, 1e6, 1e6], dtype=float)
        e2 = nn_residuals(Sample(y, x), one_cut())
        assert np.all(e2 == 0)

    def test_vector_outer_products(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=30)
        Y = rng.standard_normal((30, 2))
        out = nn_residuals(Sample(Y[:, 0], x), one_cut(), response=Y)
        r = oracles.nn_resid(x, Y, [0.5])
        np.testing.assert_allclose(out, r[:, :, None] * r[:, None, :], atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(12, 60))
        x = np.round(rng.uniform(size=n), 2)  # rounding creates ties
        y = rng.standard_normal(n)
        cs = [0.35, 0.7]
        sch = CutoffSchedule.from_doses(cs, [0, 1, 2], (0, 1))
        try:
            got = nn_residual_vectors(Sample(y, x), sch)
        except TooFewNeighbors:
            return
        np.testing.assert_allclose(got, oracles.nn_resid(x, y, cs), atol=1e-12)


class TestCounterfactual:
    def test_discrete_must_sum_to_one(self):
        with pytest.raises(RDDValidationError):
            CounterfactualSpec.discrete([0.5, 0.6])

    def test_discrete_nonnegative(self):
        with pytest.raises(RDDValidationError):
            CounterfactualSpec.discrete([1.5, -0.5])

    def test_uniform_mass(self):
        cf = CounterfactualSpec.uniform("full", [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)])
        assert cf.total_mass() == pytest.approx(1.0, abs=1e-6)
        assert list(cf.integrated) == [0, 1, 2]

    def test_fixed_coordinate(self):
        cf = CounterfactualSpec.uniform("dose-change", [(0.0, 1.0), 1.0])
        assert list(cf.integrated) == [0]
        pts = cf.full_points(np.array([[0.25]]))
        assert pts.tolist() == [[0.25, 1.0]]
