import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from numpy.testing import assert_allclose

from drmv.duality import (
    INFEASIBLE,
    RobustParams,
    dual_order,
    feasible_region_check,
    inner_max_second_moment,
    lp_norm,
    parse_order,
    robust_objective,
    worst_case_mean,
)
from drmv.errors import InvalidInputError
from drmv.moments import ReturnSeries, empirical_moments

# Frozen from drmv.oracle (perturbation program and golden-section dual),
# computed once and pinned here.
WCM_TWO_POINTS = 0.14644660940672627
H_TWO_POINTS = 0.10379949748426479

orders = st.sampled_from([1.0, 2.0, math.inf, 1.5, 3.0])
# numpy's norm underflows on tiny entries; keep its comparison to normal magnitudes
entries = st.floats(-1e3, 1e3).filter(lambda x: x == 0.0 or abs(x) > 1e-100)


def moments_of(rows):
    return empirical_moments(ReturnSeries(np.asarray(rows, dtype=float)))


@st.composite
def instances(draw, max_n=8, max_d=4):
    d = draw(st.integers(1, max_d))
    n = draw(st.integers(2, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    x = rng.normal(0.01, 0.05, (n, d))
    phi = rng.normal(1.0 / d, 0.5, d)
    phi += (1.0 - phi.sum()) / d
    return x, phi


class TestOrders:
    @pytest.mark.parametrize("p,q", [(1, math.inf), (2, 2), (math.inf, 1), (3, 1.5)])
    def test_conjugate(self, p, q):
        assert dual_order(p) == pytest.approx(q)

    def test_parse(self):
        assert parse_order("inf") == math.inf
        assert parse_order("2") == 2.0
        with pytest.raises(InvalidInputError):
            parse_order("0.5")
        with pytest.raises(InvalidInputError):
            parse_order("abc")

    def test_norm_examples(self):
        assert lp_norm([0.5, 0.5], 2) == pytest.approx(math.sqrt(0.5))
        assert lp_norm([0.5, 0.5], 1) == 1.0
        assert lp_norm([3, -4], math.inf) == 4.0

    def test_norm_rejects_small_order(self):
        with pytest.raises(InvalidInputError):
            lp_norm([1.0], 0.9)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), orders,
           st.floats(-100, 100))
    def test_norm_homogeneous(self, v, p, c):
        assert lp_norm(np.multiply(c, v), p) == pytest.approx(abs(c) * lp_norm(v, p),
                                                                rel=1e-12, abs=1e-300)

    @given(st.lists(entries, min_size=1, max_size=6), orders)
    def test_norm_matches_numpy(self, v, p):
        assert lp_norm(v, p) == pytest.approx(np.linalg.norm(v, ord=p), rel=1e-12, abs=1e-300)


class TestParams:
    def test_q_property(self):
        assert RobustParams(p=1).q == math.inf

    @pytest.mark.parametrize("kw", [dict(delta=-1), dict(delta0=0), dict(epsilon=1),
                                    dict(p=0.5), dict(rho=math.inf), dict(alpha_bar=math.nan),
                                    dict(alpha_bar=math.inf)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            RobustParams(**kw)

    def test_replace(self):
        p = RobustParams(delta=0.1).replace(p=1)
        assert (p.p, p.delta) == (1.0, 0.1)


class TestWorstCaseMean:
    def test_zero_radius(self):
        m = moments_of([[0.1, 0.3], [0.2, -0.1]])
        phi = np.array([0.3, 0.7])
        assert worst_case_mean(phi, m, RobustParams(delta=0.0)) == phi @ m.mean

    def test_single_asset(self):
        m = moments_of([[0.1, 0.0], [0.1, 0.5]])
        assert worst_case_mean([1.0, 0.0], m, RobustParams(delta=0.04)) == pytest.approx(-0.1)

    def test_two_point_example(self):
        m = moments_of([[1.0, 0.0], [0.0, 1.0]])
        got = worst_case_mean([0.5, 0.5], m, RobustParams(delta=0.25))
        assert got == pytest.approx(WCM_TWO_POINTS, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            worst_case_mean([1.0], moments_of([[0.1, 0.2], [0.0, 0.1]]), RobustParams())

    @settings(max_examples=80, deadline=None)
    @given(instances(), orders, st.floats(0, 1))
    def test_below_nominal_and_affine_in_sqrt_delta(self, inst, p, delta):
        x, phi = inst
        m = empirical_moments(ReturnSeries(x))
        nominal = phi @ m.mean
        w = [worst_case_mean(phi, m, RobustParams(p=p, delta=t * t)) for t in (0.0, 0.5, 1.0)]
        assert w[0] == pytest.approx(nominal)
        assert worst_case_mean(phi, m, RobustParams(p=p, delta=delta)) <= nominal
        if math.sqrt(delta) * lp_norm(phi, p) > 1e-12 * (1 + abs(nominal)):
            assert worst_case_mean(phi, m, RobustParams(p=p, delta=delta)) < nominal
        assert w[1] - w[0] == pytest.approx(w[2] - w[1], rel=1e-9, abs=1e-15)


class TestFeasibleRegion:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.m = empirical_moments(ReturnSeries(rng.normal(0.01, 0.04, (60, 3))))
        self.phi = np.array([0.2, 0.3, 0.5])

    def test_boundary_zero_radius(self):
        prm = RobustParams(delta=0.0, alpha_bar=float(self.phi @ self.m.mean))
        assert feasible_region_check(self.phi, self.m, prm)

    def test_slack(self):
        assert feasible_region_check(self.phi, self.m, RobustParams(delta=0.01, alpha_bar=-10))

    def test_just_past_boundary(self):
        prm = RobustParams(delta=0.01)
        edge = worst_case_mean(self.phi, self.m, prm)
        assert not feasible_region_check(self.phi, self.m, prm.replace(alpha_bar=edge + 1e-6))

    def test_budget(self):
        prm = RobustParams(alpha_bar=-10)
        assert not feasible_region_check(self.phi + 1e-9, self.m, prm)
        assert not feasible_region_check(self.phi[:2], self.m, prm)


class TestInnerMax:
    def test_single_point_zero_radius(self):
        m = moments_of([[0.1, 0.2], [0.1, 0.2]])
        assert inner_max_second_moment([1, 0], 0.1, m, RobustParams()) == pytest.approx(0.01)

    def test_single_point_positive_radius(self):
        m = moments_of([[0.1, 0.2], [0.1, 0.2]])
        got = inner_max_second_moment([1, 0], 0.1, m, RobustParams(delta=0.04))
        assert got == pytest.approx(0.05)

    def test_two_point_example(self):
        m = moments_of([[0.0], [0.2]])
        got = inner_max_second_moment([1.0], 0.12, m, RobustParams(delta=0.04))
        assert got == pytest.approx(H_TWO_POINTS, rel=1e-12)

    def test_infeasible_sentinel(self):
        m = moments_of([[0.0], [0.2]])
        assert inner_max_second_moment([1.0], 0.31, m, RobustParams(delta=0.04)) is INFEASIBLE
        assert inner_max_second_moment([1.0], 0.1 + 1e-9, m, RobustParams()) is INFEASIBLE
        assert repr(INFEASIBLE) == "INFEASIBLE"

    def test_boundary_is_feasible(self):
        m = moments_of([[0.0], [0.2]])
        got = inner_max_second_moment([1.0], 0.3, m, RobustParams(delta=0.04))
        # square-root term vanishes: 0.02 + 2 * 0.2 * 0.1 + 0.04
        assert got == pytest.approx(0.1, rel=1e-12)

    def test_zero_radius_identity(self):
        x = np.random.default_rng(1).normal(size=(7, 3))
        m = empirical_moments(ReturnSeries(x))
        phi = np.array([0.5, 0.25, 0.25])
        got = inner_max_second_moment(phi, float(phi @ m.mean), m, RobustParams())
        assert got == pytest.approx(np.mean((x @ phi) ** 2), rel=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(instances(), st.sampled_from([1.0, 2.0, math.inf]), st.floats(1e-4, 0.5))
    def test_alpha_scan_recovers_robust_objective(self, inst, p, delta):
        x, phi = inst
        m = empirical_moments(ReturnSeries(x))
        prm = RobustParams(p=p, delta=delta)
        centre = float(phi @ m.mean)
        r = math.sqrt(delta) * lp_norm(phi, p)
        assume(r > 1e-8)
        grid = np.linspace(centre - r, centre + r, 4001)
        vals = np.array([inner_max_second_moment(phi, a, m, prm) - a * a for a in grid])
        k = int(np.argmax(vals))
        # refine between neighbours by golden section on the concave profile
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        f = lambda a: -(inner_max_second_moment(phi, a, m, prm) - a * a)
        g = (math.sqrt(5) - 1) / 2
        for _ in range(100):
            a1, a2 = hi - g * (hi - lo), lo + g * (hi - lo)
            if f(a1) < f(a2):
                hi = a2
            else:
                lo = a1
        best = -f(0.5 * (lo + hi))
        target = robust_objective(phi, m, prm)
        assert best == pytest.approx(target, rel=1e-8)
        assert abs(0.5 * (lo + hi) - centre) <= 1e-6 * (1 + abs(centre))

    @settings(max_examples=60, deadline=None)
    @given(instances(), orders, st.floats(0, 0.5), st.floats(-1.5, 1.5))
    def test_finite_exactly_on_interval(self, inst, p, delta, frac):
        x, phi = inst
        m = empirical_moments(ReturnSeries(x))
        prm = RobustParams(p=p, delta=delta)
        r = math.sqrt(delta) * lp_norm(phi, p)
        centre = float(phi @ m.mean)
        alpha = centre + frac * r
        shift = abs(alpha - centre)  # what survived rounding
        out = inner_max_second_moment(phi, alpha, m, prm)
        if shift < r * (1 - 1e-9):
            assert out is not INFEASIBLE and np.isfinite(out)
        elif shift > r * (1 + 1e-9):
            assert out is INFEASIBLE


class TestRobustObjective:
    def test_zero_radius_is_variance(self):
        x = np.random.default_rng(2).normal(size=(9, 2))
        m = empirical_moments(ReturnSeries(x))
        phi = np.array([0.6, 0.4])
        assert robust_objective(phi, m, RobustParams()) == pytest.approx(np.var(x @ phi), rel=1e-12)

    def test_constant_series(self):
        m = moments_of([[0.1, 0.2], [0.1, 0.2]])
        phi = np.array([0.3, 0.7])
        assert robust_objective(phi, m, RobustParams(delta=0.5)) == pytest.approx(0.5 * phi @ phi)

    def test_two_point_example(self):
        m = moments_of([[0.0], [0.2]])
        assert robust_objective([1.0], m, RobustParams(delta=0.04)) == pytest.approx(0.09)

    @settings(max_examples=60, deadline=None)
    @given(instances(), orders, st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_delta(self, inst, p, d1, d2):
        x, phi = inst
        m = empirical_moments(ReturnSeries(x))
        lo, hi = sorted((d1, d2))
        var = float(phi @ m.covariance @ phi)
        a = robust_objective(phi, m, RobustParams(p=p, delta=lo))
        b = robust_objective(phi, m, RobustParams(p=p, delta=hi))
        assert var <= a * (1 + 1e-12) + 1e-300
        assert a <= b * (1 + 1e-12)

    def test_matches_definition(self):
        x = np.random.default_rng(4).normal(size=(12, 3))
        m = empirical_moments(ReturnSeries(x))
        phi = np.array([0.2, 0.5, 0.3])
        expect = (np.std(x @ phi) + math.sqrt(0.3) * np.abs(phi).sum()) ** 2
        assert_allclose(robust_objective(phi, m, RobustParams(p=1, delta=0.3)), expect, rtol=1e-12)
