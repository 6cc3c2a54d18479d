import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from fkgclt.lattice import (
    BoxSpec,
    ModelSpec,
    SampleSet,
    box_sums,
    covariance_profile,
    hoeffding_integrals,
    quadrant_dependence,
    raw_box_sums,
    sample_system,
)

from oracles import (
    ising_adjacent_cov,
    ising_box_variance,
    ising_chain_boltzmann,
    ising_lattice_boltzmann,
)

T05 = math.tanh(0.5)
CHI = (1 + T05) / (1 - T05)


@pytest.fixture(scope="module")
def ising_ring():
    return sample_system(ModelSpec("ising1d", J=0.5), (64,), 20_000, seed=5)


class TestModelSpec:
    def test_negative_coupling_violates_fkg(self):
        with pytest.raises(ValueError, match="FKG"):
            ModelSpec("ising1d", J=-0.1)

    @pytest.mark.parametrize("kw", [{"kind": "potts"}, {"boundary": "open"}, {"burn_in": -1},
                                    {"probs": (0.2, 0.2)}, {"probs": (0.5,)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ModelSpec(**kw)

    def test_exact_flag(self):
        assert ModelSpec("ising1d", J=0.3).exact
        assert not ModelSpec("ising1d", J=0.3, h=0.1).exact
        assert not ModelSpec("ising2d", J=0.3).exact


class TestSampleSystem:
    def test_independent_site_moments(self):
        ens = sample_system(ModelSpec(), (10, ), 5000, seed=1)
        v = ens.values
        n = v.shape[0]
        assert np.all(np.abs(v.mean(axis=0)) <= 3 * v.std(axis=0, ddof=1) / math.sqrt(n))
        var_se = math.sqrt(2 / n) * 1.0
        assert np.all(np.abs(v.var(axis=0, ddof=1) - 1.0) <= 3 * max(var_se, 1e-3))

    def test_values_are_centered_spins(self):
        ens = sample_system(ModelSpec("ising1d", J=0.2), (8,), 10, seed=0)
        s = ens[3]
        assert set(np.unique(s.raw)) <= {-1, 1}
        assert s.values.size == 8 and s.chain == 0 and s.seed == 0

    @pytest.mark.parametrize("length, periodic", [(6, True), (5, False), (2, True)])
    def test_exact_chain_matches_boltzmann(self, length, periodic):
        spec = ModelSpec("ising1d", J=0.5, boundary="periodic" if periodic else "free")
        ens = sample_system(spec, (length,), 100_000, seed=11)
        configs, p = ising_chain_boltzmann(length, 0.5, periodic)
        code = ((ens.raw > 0).astype(int) * (1 << np.arange(length)[::-1])).sum(axis=1)
        ref_code = ((configs > 0).astype(int) * (1 << np.arange(length)[::-1])).sum(axis=1)
        counts = np.bincount(code, minlength=2 ** length)[ref_code]
        assert stats.chisquare(counts, p * counts.sum()).pvalue > 0.01

    def test_lag_correlations(self, ising_ring):
        prof = covariance_profile(ising_ring, 8)
        for r in range(1, 9):
            c, se = prof.cov_at(r)
            assert abs(c - T05 ** r) <= 3 * se

    def test_zero_coupling_is_independent(self):
        a = sample_system(ModelSpec("ising1d", J=0.0), (16,), 4000, seed=3).values.mean(axis=1)
        b = sample_system(ModelSpec(), (16,), 4000, seed=4).values.mean(axis=1)
        assert stats.ttest_ind(a, b).pvalue > 0.001
        assert stats.ks_2samp(a, b).pvalue > 0.001

    def test_deterministic(self):
        spec = ModelSpec("ising2d", J=0.3, burn_in=20, thin=2)
        a = sample_system(spec, (6, 6), 100, seed=9)
        b = sample_system(spec, (6, 6), 100, seed=9)
        np.testing.assert_array_equal(a.raw, b.raw)
        c = sample_system(spec, (6, 6), 100, seed=10)
        assert not np.array_equal(a.raw, c.raw)

    def test_chains_use_distinct_streams(self):
        ens = sample_system(ModelSpec(), (32,), 3000, seed=0)
        assert list(np.unique(ens.chains)) == [0, 1, 2]
        assert not np.array_equal(ens.raw[:1000], ens.raw[1024:2024])

    def test_heat_bath_2d_against_enumeration(self):
        spec = ModelSpec("ising2d", J=0.3, burn_in=200, thin=5)
        ens = sample_system(spec, (4, 4), 64 * 150, seed=2)
        x = ens.raw.astype(float)
        nn = (x * np.roll(x, 1, axis=1)).mean(axis=(1, 2))
        configs, p = ising_lattice_boltzmann((4, 4), 0.3)
        ref = float(p @ (configs * np.roll(configs, 1, axis=1)).mean(axis=(1, 2)))
        # replicas are independent; use their means for the error bar
        per = nn.reshape(64, -1).mean(axis=1)
        assert abs(nn.mean() - ref) <= 4 * per.std(ddof=1) / math.sqrt(64)

    def test_heat_bath_with_field(self):
        spec = ModelSpec("ising1d", J=0.4, h=0.2, burn_in=100, thin=4)
        ens = sample_system(spec, (6,), 64 * 100, seed=8)
        configs, p = ising_lattice_boltzmann((6,), 0.4, 0.2)
        ref = float(p @ configs.mean(axis=1))
        m = ens.raw.astype(float).mean(axis=1).reshape(64, -1).mean(axis=1)
        assert abs(m.mean() - ref) <= 4 * m.std(ddof=1) / 8
        # nonzero field: centered on the empirical grand mean
        assert ens.center == pytest.approx(ens.raw.mean())
        assert abs(ens.values.mean()) < 1e-12

    @pytest.mark.parametrize("ext", [(0,), (-3,), (1 << 29,)])
    def test_bad_extents(self, ext):
        with pytest.raises(ValueError):
            sample_system(ModelSpec(), ext, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sample_system(ModelSpec("ising2d", J=0.1), (8,), 2)


class TestBoxSums:
    def test_unit_box_is_site_value(self, ising_ring):
        ss = box_sums(ising_ring, BoxSpec(1, 5))
        np.testing.assert_array_equal(ss.draws, ising_ring.values[:, 5])

    def test_independent_variance(self):
        ens = sample_system(ModelSpec(), (64,), 5000, seed=2)
        ss = box_sums(ens, BoxSpec(50))
        assert abs(ss.variance - 1.0) <= 3 * math.sqrt(2 / len(ss))

    @pytest.mark.parametrize("n", [4, 16, 32])
    def test_ising_variance_geometric_oracle(self, ising_ring, n):
        # a 32-site arc of a 64-ring differs from the infinite chain by O(t^32)
        ss = box_sums(ising_ring, BoxSpec(n))
        d = ss.draws - ss.mean
        se = math.sqrt((np.mean(d ** 4) - ss.variance ** 2) / len(ss))
        assert abs(ss.variance - ising_box_variance(n, 0.5)) <= 3 * se

    def test_v_bookkeeping(self, ising_ring):
        ss = box_sums(ising_ring, BoxSpec(10))
        raw = raw_box_sums(ising_ring, BoxSpec(10))
        assert ss.v / ss.volume == ss.variance
        assert ss.v == pytest.approx(raw.var(ddof=1), rel=1e-12)

    def test_box_must_fit(self, ising_ring):
        with pytest.raises(ValueError):
            box_sums(ising_ring, BoxSpec(60, 10))

    def test_two_dimensional_box(self):
        ens = sample_system(ModelSpec(), (4, 5), 10, seed=0)
        ss = box_sums(ens, BoxSpec((2, 3), (1, 1)))
        ref = ens.values[:, 1:3, 1:4].sum(axis=(1, 2)) / math.sqrt(6)
        np.testing.assert_allclose(ss.draws, ref)

    def test_sample_set_needs_two(self):
        with pytest.raises(ValueError):
            SampleSet(np.array([1.0]), 1)


class TestCovarianceProfile:
    def test_independent(self):
        ens = sample_system(ModelSpec(), (32,), 5000, seed=6)
        prof = covariance_profile(ens, 5)
        off = prof.offsets[:, 0] != 0
        assert np.all(np.abs(prof.cov[off]) <= 3.5 * prof.se[off])
        assert prof.K[0] == pytest.approx(ens.values[:, 0].var(ddof=1))
        assert abs(prof.susceptibility - 1.0) <= 3 * prof.susceptibility_se + 0.05

    def test_susceptibility_converges_monotonically(self, ising_ring):
        prof = covariance_profile(ising_ring, 20)
        assert np.all(np.diff(prof.K) >= -3 * prof.K_se[1:])
        assert abs(prof.susceptibility - CHI) <= 3 * prof.susceptibility_se
        assert np.all(np.abs(prof.slow_variation[2][-3:] - 1) < 0.05)

    def test_symmetry_under_periodic_boundaries(self, ising_ring):
        prof = covariance_profile(ising_ring, 6)
        for r in range(1, 7):
            c1, s1 = prof.cov_at(r)
            c2, s2 = prof.cov_at(-r)
            assert abs(c1 - c2) <= 3 * math.hypot(s1, s2)

    def test_free_boundary_uses_midpoint(self):
        ens = sample_system(ModelSpec("ising1d", J=0.5, boundary="free"), (41,), 5000, seed=1)
        prof = covariance_profile(ens, 5)
        c, se = prof.cov_at(2)
        assert abs(c - T05 ** 2) <= 3 * se

    def test_radius_too_large(self, ising_ring):
        with pytest.raises(ValueError):
            covariance_profile(ising_ring, 40)

    def test_spatial_averaging_agrees(self, ising_ring):
        a = covariance_profile(ising_ring[:2000], 3, spatial=True)
        for r in range(4):
            assert abs(a.cov_at(r)[0] - (T05 ** r)) < 0.05


class TestQuadrantDependence:
    def test_independent_pairs(self):
        rng = np.random.default_rng(0)
        qd = quadrant_dependence(rng.normal(size=(20_000, 2)), n_grid=9)
        # the minimum over 81 cells sits slightly below zero by selection
        assert qd.min_H >= -4 * qd.min_se
        assert abs(qd.min_H) <= 4 * qd.min_se

    def test_adjacent_ising_boxes(self, ising_ring):
        s = raw_box_sums(ising_ring, BoxSpec(16)) / 4
        t = raw_box_sums(ising_ring, BoxSpec(16, 16)) / 4
        qd = quadrant_dependence(np.column_stack([s, t]))
        assert qd.min_H >= -3 * qd.min_se
        assert qd.min_z >= -4
        assert qd.cov == pytest.approx(ising_adjacent_cov(16, 16, 0.5), abs=4 * 0.01)
        assert all(c.holds for c in qd.checks)

    def test_antithetic_pairs_are_negative(self):
        rng = np.random.default_rng(1)
        s = rng.choice([-1.0, 1.0], size=4000)
        qd = quadrant_dependence(np.column_stack([s, -s]), grid=([0.0], [0.0]))
        # exact: P(S >= 0, -S >= 0) - P(S >= 0) P(S <= 0) = -p(1 - p) with p near 1/2
        p = np.mean(s > 0)
        assert qd.min_H == pytest.approx(-p * (1 - p), abs=1e-12)
        assert qd.min_H < -0.2
        assert all(not c.holds or c.cov <= 0 for c in qd.checks)

    def test_too_few_pairs(self):
        with pytest.raises(ValueError):
            quadrant_dependence(np.zeros((99, 2)))

    def test_influence_se_matches_bootstrap(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(3000, 2))
        pairs = np.column_stack([z[:, 0], 0.5 * z[:, 0] + z[:, 1]])
        grid = ([0.3], [-0.2])
        qd = quadrant_dependence(pairs, grid=grid)
        boots = [quadrant_dependence(pairs[rng.integers(0, 3000, 3000)], grid=grid).H[0, 0]
                 for _ in range(300)]
        assert qd.se[0, 0] == pytest.approx(np.std(boots), rel=0.2)


class TestHoeffding:
    @given(st.lists(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=2, max_size=60))
    def test_integral_is_covariance(self, pts):
        a = np.array(pts, dtype=float)
        total, neg = hoeffding_integrals(a[:, 0], a[:, 1])
        assert total == pytest.approx(np.cov(a[:, 0], a[:, 1], ddof=0)[0, 1], abs=1e-12)
        assert neg >= 0

    def test_comonotone_has_no_negative_part(self):
        s = np.arange(10.0)
        assert hoeffding_integrals(s, s)[1] == 0.0

    def test_antithetic_negative_part(self):
        s = np.array([-1.0, 1.0])
        total, neg = hoeffding_integrals(s, -s)
        assert total == pytest.approx(-1.0)
        assert neg == pytest.approx(1.0)
