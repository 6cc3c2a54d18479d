import json
import math

import numpy as np
import pytest

from fkgclt import experiments as ex
from fkgclt.lattice import ModelSpec, sample_system
from fkgclt.smoothing import fisher, smooth

T = math.tanh(0.5)


def small_config(tmp_path, **kw):
    base = dict(sizes=(1, 2, 4, 8), n_samples=1000, n_boot=4, n_grid=40,
                kappa_taus=(0.1, 1.0, 10.0), covariance_radius=3, output_dir=str(tmp_path),
                audit_pairs=((4, 4), (4, 2)))
    base.update(kw)
    return ex.ExperimentConfig(**base)


def ring_box_cov(m, n, L, t=T):
    """Cov of adjacent box sums on a periodic chain: sum over site pairs."""
    r = np.arange(L)
    corr = (t ** r + t ** (L - r)) / (1 + t ** L)
    total = sum(corr[(j - i) % L] for i in range(m) for j in range(m, m + n))
    return total / math.sqrt(m * n)


class TestConfig:
    def test_defaults(self):
        cfg = ex.ExperimentConfig()
        assert cfg.sizes == tuple(2 ** k for k in range(11))
        assert cfg.model.kind == "ising1d" and cfg.model.J == 0.5
        assert cfg.n_samples == 10_000

    def test_parse_text(self):
        text = """
        # a comment
        model.kind = independent
        sweep.sizes = 1, 2, 4   # trailing comment
        audit.pairs = 8x8, 8x4
        output.timing = yes
        """
        cfg = ex.build_config(ex.parse_config_text(text))
        assert cfg.model.kind == "independent"
        assert cfg.sizes == (1, 2, 4)
        assert cfg.audit_pairs == ((8, 8), (8, 4))
        assert cfg.timing is True

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("sweep.seed = 3\nmodel.J = 0.2\n")
        cfg = ex.load_config(path, ["sweep.seed=9", "quad.nodes = 128"])
        assert cfg.seed == 9 and cfg.model.J == 0.2 and cfg.quad.nodes == 128

    def test_env_output_dir(self, monkeypatch, tmp_path):
        monkeypatch.setenv(ex.OUTPUT_ENV, str(tmp_path))
        assert ex.ExperimentConfig().output_dir == str(tmp_path)

    @pytest.mark.parametrize("text", ["nonsense", "model.colour = red", "output.timing = maybe"])
    def test_bad_text(self, text):
        with pytest.raises(ValueError):
            ex.build_config(ex.parse_config_text(text))

    @pytest.mark.parametrize("kw", [{"sizes": (4, 2)}, {"sizes": ()}, {"n_samples": 999},
                                    {"tau": 0.0}, {"audit_pairs": ((2, 4),)}, {"n_boot": 1},
                                    {"kappa_taus": (1.0,)}, {"kappa_taus": (1.0, 2.0, 5.0)}])
    def test_invalid_fields(self, kw):
        with pytest.raises(ValueError):
            ex.ExperimentConfig(**kw)

    def test_two_dimensional_extents(self):
        cfg = ex.ExperimentConfig(model=ModelSpec("ising2d", J=0.2))
        assert cfg.lattice_extents() == (32, 32)


class TestSerialization:
    def test_float_round_trip(self):
        x = 0.1 + 0.2
        assert float(ex.fmt(x)) == x

    def test_json_special_values(self):
        d = json.loads(ex.dumps_json({"a": float("nan"), "b": [1.0, float("inf")], "c": None}))
        assert math.isnan(d["a"]) and d["b"][1] == math.inf and d["c"] is None

    def test_numpy_scalars(self):
        d = json.loads(ex.dumps_json({"a": np.float64(1.5), "b": np.int64(3), "c": np.bool_(True)}))
        assert d == {"a": 1.5, "b": 3, "c": True}


@pytest.fixture(scope="module")
def sweep_report(tmp_path_factory):
    cfg = small_config(tmp_path_factory.mktemp("sweep"), dump_samples=True)
    return cfg, ex.run_sweep(cfg)


@pytest.fixture(scope="module")
def audit_report(tmp_path_factory):
    cfg = small_config(tmp_path_factory.mktemp("audit"), n_samples=20_000)
    return cfg, ex.run_audit(cfg, ladder=False)


class TestSweep:
    @pytest.fixture
    def report(self, sweep_report):
        return sweep_report

    def test_files(self, report):
        cfg, rep = report
        out = ex.Path(cfg.output_dir)
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == ",".join(ex.SWEEP_HEADER)
        assert len(lines) == 1 + len(cfg.sizes)
        d = json.loads((out / "sweep.json").read_text())
        assert [r["n"] for r in d["records"]] == list(cfg.sizes)
        assert (out / "samples_n8.csv").exists()

    def test_single_site_matches_fisher(self, report):
        cfg, rep = report
        ens = sample_system(cfg.model, (8,), cfg.n_samples, cfg.seed)
        draws = ens.values[:, 0].astype(float)
        assert rep.records[0].J_st == pytest.approx(fisher(smooth(draws, 1.0)).J_st, abs=1e-12)

    def test_dump_matches_record(self, report):
        cfg, rep = report
        from fkgclt.cli import read_columns
        data, _ = read_columns(ex.Path(cfg.output_dir) / "samples_n4.csv")
        assert fisher(smooth(data[:, 0], 1.0)).J_st == pytest.approx(rep.records[2].J_st, abs=1e-12)

    def test_kappa_is_suffix_max(self, report):
        _, rep = report
        k = np.asarray(rep.kappa)
        assert np.all(np.diff(k, axis=0) <= 0)

    def test_interval_brackets_direct(self, report):
        _, rep = report
        for r in rep.records:
            assert r.D_lo <= r.D_direct + 1e-6 and r.D_direct <= r.D_hi + 1e-6

    def test_runtime_suppressed_without_timing(self, report):
        assert all(math.isnan(r.runtime_ms) for r in report[1].records)

    def test_verdict_keys(self, report):
        assert set(report[1].verdicts) >= {"jst_nonincreasing", "D_nonincreasing",
                                           "shimizu_holds", "final_Jst"}
        assert report[1].verdicts["shimizu_holds"]

    def test_independent_sites_decay(self, tmp_path):
        cfg = small_config(tmp_path, model=ModelSpec("independent"), sizes=(1, 4, 16, 64),
                           n_samples=4000)
        rep = ex.run_sweep(cfg, write=False)
        assert rep.verdicts["jst_nonincreasing"]
        assert rep.records[-1].J_st <= 0.01
        # sum of iid +-1 spins has variance n, standardized to 1
        assert rep.records[-1].variance == pytest.approx(1.0, abs=0.1)

    def test_size_must_fit(self, tmp_path):
        cfg = small_config(tmp_path, extents=(4,))
        with pytest.raises(ValueError):
            ex.run_sweep(cfg, write=False)

    def test_two_dimensional(self, tmp_path):
        cfg = small_config(tmp_path, model=ModelSpec("ising2d", J=0.1, burn_in=50, thin=2),
                           sizes=(1, 2, 4), extents=(4, 4))
        rep = ex.run_sweep(cfg, write=False)
        assert [r.n for r in rep.records] == [1, 2, 4]
        assert all(np.prod(r.shape) == r.n for r in rep.records)


class TestAudit:
    @pytest.fixture
    def report(self, audit_report):
        return audit_report

    def test_covariance_matches_ring_oracle(self, report):
        cfg, rep = report
        L = 8
        for r in rep.records:
            assert abs(r.c_mn - ring_box_cov(r.m, r.n, L)) <= 4 * r.c_mn_se

    def test_identity_and_delta(self, report):
        _, rep = report
        for r in rep.records:
            assert r.identity_residual <= 1e-5
            assert r.delta >= -1e-10
        assert rep.verdicts["delta_nonnegative"] and rep.verdicts["covariance_positive"]

    def test_recursion_rhs(self, report):
        for r in report[1].records:
            assert r.recursion_rhs == pytest.approx(r.beta * r.J_st_m + (1 - r.beta) * r.J_st_n)
            assert r.d_emp == pytest.approx(r.J_st_sum - r.recursion_rhs)

    def test_files(self, report):
        cfg, _ = report
        out = ex.Path(cfg.output_dir)
        assert (out / "audit.csv").read_text().splitlines()[0] == ",".join(ex.AUDIT_HEADER)
        assert "d_of_m" in json.loads((out / "audit.json").read_text())

    def test_ladder(self, tmp_path):
        cfg = small_config(tmp_path, audit_pairs=((2, 2),), n_samples=2000)
        rep = ex.run_audit(cfg, write=False)
        assert [e["m"] for e in rep.ladder] == [1, 2, 4]

    def test_bad_pair(self, tmp_path):
        with pytest.raises(ValueError):
            ex.run_audit(small_config(tmp_path), pairs=((1, 2),), write=False)

    def test_split_boxes_two_dimensional(self):
        a, b = ex._split_boxes(8, 4, (4, 4))
        assert np.prod(a.corner) == 8 and np.prod(b.corner) == 4
        with pytest.raises(ValueError):
            ex._split_boxes(9, 9, (4, 4))
