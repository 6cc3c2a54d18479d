import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fkgclt.infotheory import (
    SHIMIZU_SUP,
    SHIMIZU_TV,
    NotStandardizedError,
    _simpson,
    debruijn_tail_certificate,
    gaussian_distances,
    info_functionals,
    relative_entropy_debruijn,
    relative_entropy_direct,
    standardized_draws,
)
from fkgclt.smoothing import SmoothedDensity, fisher, smooth, standardize

from oracles import standardized_two_point, trapezoid_entropy, trapezoid_tv


def random_mixture(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    c = rng.normal(scale=rng.uniform(0.2, 3), size=n)
    w = rng.dirichlet(np.ones(n))
    return standardize(SmoothedDensity(c, w, float(rng.uniform(0.05, 2.0))))


class TestDirect:
    def test_gaussian_null(self):
        r = relative_entropy_direct(smooth(np.array([0.0]), 1.0))
        assert abs(r.D) <= 1e-10

    def test_rejects_unstandardized(self):
        with pytest.raises(NotStandardizedError) as exc:
            relative_entropy_direct(smooth(np.array([1.0, 3.0]), 1.0))
        assert exc.value.mean == pytest.approx(2.0)
        assert exc.value.variance == pytest.approx(2.0)

    @pytest.mark.parametrize("tau", [0.25, 1.0])
    def test_two_point_against_trapezoid(self, tau):
        c, w, t = standardized_two_point(tau)
        r = relative_entropy_direct(SmoothedDensity(c, w, t))
        ref = trapezoid_entropy(c, w, t)
        assert r.D > 0
        assert r.D == pytest.approx(ref, abs=1e-8)

    def test_pinsker_on_corpus(self, corpus):
        for m in corpus:
            s = standardize(m)
            D = relative_entropy_direct(s).D
            tv = gaussian_distances(s).TV
            assert 2 * D >= tv ** 2 * (1 - 1e-9) - 1e-12


class TestDistances:
    def test_gaussian_all_zero(self):
        d = gaussian_distances(smooth(np.array([0.0]), 1.0))
        assert d.TV < 1e-10 and d.sup < 1e-12
        assert d.tv_bound < 1e-4 and d.sup_bound < 1e-4

    def test_two_point_against_trapezoid(self):
        c, w, t = standardized_two_point(1.0)
        d = gaussian_distances(SmoothedDensity(c, w, t))
        tv, sup = trapezoid_tv(c, w, t)
        assert d.TV == pytest.approx(tv, abs=1e-8)
        assert d.sup == pytest.approx(sup, abs=1e-9)
        assert d.TV <= SHIMIZU_TV * math.sqrt(d.J_st)

    @given(st.integers(0, 10_000))
    def test_shimizu_bounds(self, seed):
        d = gaussian_distances(random_mixture(seed))
        assert d.tv_holds and d.sup_holds
        assert 0 <= d.TV <= 2

    def test_sup_bound_constant(self):
        assert SHIMIZU_SUP == pytest.approx(2.381976597885342, rel=1e-15)


class TestSimpson:
    @pytest.mark.parametrize("n", [3, 4, 7, 10, 201])
    def test_exact_on_cubics(self, n):
        x = np.linspace(0.0, 2.0, n)
        y = 1 - x + 3 * x ** 2 - x ** 3
        assert _simpson(y, x[1] - x[0]) == pytest.approx(2 - 2 + 8 - 4, abs=1e-12)


class TestDeBruijn:
    def test_certificate_closed_form(self):
        assert debruijn_tail_certificate(1e3) == pytest.approx(0.5 * math.log(1.001), rel=1e-14)
        assert debruijn_tail_certificate(1e3) <= 5.0e-4

    def test_two_point_route_agreement(self):
        r = relative_entropy_debruijn(np.array([-1.0, 1.0]), t_max=1e3, tau_min=1e-4, n_grid=200)
        direct = relative_entropy_direct(standardize(smooth(np.array([-1.0, 1.0]), 1e-4)))
        assert abs(direct.D - r.D) <= r.combined_error + direct.error
        lo, hi = r.interval
        assert lo <= direct.D <= hi

    def test_route_agreement_near_gaussian(self):
        u = stats.norm.ppf((np.arange(400) + 0.5) / 400)
        u = standardized_draws(u)
        r = relative_entropy_debruijn(u, tau_min=0.05, n_grid=121)
        direct = relative_entropy_direct(standardize(smooth(u, 0.05)))
        assert abs(direct.D - r.D) <= r.combined_error + direct.error
        assert r.D < 0.01

    def test_integrand_vanishes_for_gaussian_smoothing(self):
        # every grid model of a single standardized atom pair is checked via J_st >= 0
        r = relative_entropy_debruijn(np.array([-1.0, 1.0]), n_grid=41, tau_min=0.01)
        assert np.all(r.J_st >= -1e-9)
        # J_st(U + Z^s) <= 1/s bound that underlies the tail certificate
        assert np.all(r.J_st <= 1 / r.taus + 1e-9)

    def test_requires_standardized_samples(self):
        with pytest.raises(NotStandardizedError):
            relative_entropy_debruijn(np.array([0.0, 2.0]))

    def test_certificate_over_tolerance(self):
        with pytest.raises(ValueError, match="certificate"):
            relative_entropy_debruijn(np.array([-1.0, 1.0]), t_max=10.0, tol=1e-3)

    def test_custom_grid_must_be_log_spaced(self):
        with pytest.raises(ValueError):
            relative_entropy_debruijn(np.array([-1.0, 1.0]), tau_grid=[0.1, 0.2, 0.5, 1.0])


class TestInfoFunctionals:
    def test_consistent_with_standalone_calls(self):
        rng = np.random.default_rng(4)
        d = rng.choice([-2.0, 0.0, 1.0, 3.0], size=500)
        info = info_functionals(d, 1.0, n_grid=101)
        m = standardize(smooth(d, 1.0))
        assert info.D_direct == pytest.approx(relative_entropy_direct(m).D, abs=1e-12)
        assert info.distances.J_st == pytest.approx(fisher(smooth(d, 1.0)).J_st, abs=1e-9)
        lo, hi = info.debruijn.interval
        assert lo - 1e-9 <= info.D_direct <= hi + 1e-9
        assert info.pinsker_holds
