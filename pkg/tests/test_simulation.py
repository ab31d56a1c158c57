"""Data-generating process, true-value oracle, and the replication engine."""

import numpy as np
import pytest

from survfuse import (DgpSpec, RngStream, SimConfig, ValidationError,
                      generate_dataset, rate_study, run_replications, true_phi)

DGP = DgpSpec()


class TestTruePhi:
    def test_at_zero(self):
        assert true_phi(DGP, 0.0) == 1.0

    @pytest.mark.parametrize("t_star,expected", [(0.7, 0.4823), (0.9, 0.3924),
                                                 (0.2, 0.8110)])
    def test_closed_form_values(self, t_star, expected):
        # independently verified against dense quadrature below; the exact
        # values are 0.482316, 0.392438, 0.810975
        assert true_phi(DGP, t_star) == pytest.approx(expected, abs=5e-5)

    def test_matches_dense_quadrature(self):
        # oracle: 1e6-point quadrature of the defining double integral
        w1 = np.linspace(0.0, 1.0, 1_000_001)
        for t_star in (0.2, 0.7, 0.9, 1.7):
            direct = 0.5 * (np.trapezoid(np.exp(-(0.8 + 0.4 * w1) * t_star), w1)
                            + np.trapezoid(np.exp(-(0.8 + 0.6 * w1) * t_star), w1))
            assert true_phi(DGP, t_star) == pytest.approx(direct, abs=1e-8)

    def test_general_coefficients(self):
        dgp = DgpSpec(event_coef=(1.1, 0.0, 0.3, 0.0), w2_prob=0.25)
        w1 = np.linspace(0.0, 1.0, 200_001)
        t_star = 0.6
        direct = (0.25 * np.trapezoid(np.exp(-(1.4 + 0.0 * w1) * t_star), w1)
                  + 0.75 * np.trapezoid(np.exp(-1.1 * t_star + 0 * w1), w1))
        assert true_phi(dgp, t_star) == pytest.approx(direct, abs=1e-8)


class TestGenerateDataset:
    def test_source_split(self):
        sample = generate_dataset(DGP, 300, RngStream(1))
        assert sample.n1 == 100 and sample.n0 == 200

    def test_inspection_support(self):
        sample = generate_dataset(DGP, 3000, RngStream(2))
        cs = sample.source == 0
        assert np.all(sample.insp_time[cs] > 0.5)
        assert np.all(sample.insp_time[cs] < 1.0)

    def test_status_probability_matches_cdf(self):
        # oracle: P(Delta_C = 1 | C near 0.75) = E_W[F(0.75|W) | C near 0.75];
        # C depends on W, so weight the closed-form CDF by the conditional
        # density of C at 0.75
        sample = generate_dataset(DGP, 300_000, RngStream(3))
        cs = sample.source == 0
        c = sample.insp_time[cs]
        near = np.abs(c - 0.75) < 0.01
        got = np.mean(sample.status_ind[cs][near])
        W = sample.covariates[cs][near]
        expected = np.mean(1.0 - np.exp(-DGP.event_rate(W) * c[cs.sum() * 0:][near]))
        assert got == pytest.approx(expected, abs=0.01)

    def test_event_cdf_by_stratum(self):
        # W2 fixed, W1 binned: T | stratum is exponential with a known rate band
        stream = RngStream(4)
        n = 100_000
        w1 = stream.uniform(n)
        sel = (w1 > 0.45) & (w1 < 0.55)
        W = np.column_stack([w1, np.ones(n)])
        T = stream.exponential(DGP.event_rate(W), n)
        ts = np.sort(T[sel])
        grid_cdf = 1.0 - np.exp(-DGP.event_rate(np.array([[0.5, 1.0]]))[0] * ts)
        ks = np.max(np.abs(grid_cdf - np.arange(1, ts.size + 1) / ts.size))
        assert ks < 0.02

    def test_determinism(self):
        a = generate_dataset(DGP, 500, RngStream(9, 3))
        b = generate_dataset(DGP, 500, RngStream(9, 3))
        assert np.array_equal(a.covariates, b.covariates)
        assert np.array_equal(a.obs_time, b.obs_time, equal_nan=True)
        assert np.array_equal(a.insp_time, b.insp_time, equal_nan=True)

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            generate_dataset(DGP, 2, RngStream(1))


class TestSimConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            SimConfig(replications=0)
        with pytest.raises(ValidationError):
            SimConfig(n_total=(10,))
        with pytest.raises(ValidationError):
            SimConfig(nuisance_mode="bogus")
        with pytest.raises(ValidationError):
            SimConfig(estimators=("dr", "nope"))
        with pytest.raises(ValidationError):
            SimConfig(estimators=("ivw", "rc"))  # ivw needs cs too
        with pytest.raises(ValidationError):
            SimConfig(dgp="unknown")

    def test_from_json_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"replications": 2, "bogus": 1}')
        with pytest.raises(ValidationError, match="bogus"):
            SimConfig.from_json(path)

    def test_from_json_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"n_total": [60], "t_star": [0.7], "replications": 2,'
                        ' "seed": 5, "estimators": ["rc"], "nuisance_mode": "oracle"}')
        cfg = SimConfig.from_json(path)
        assert cfg.n_total == (60,) and cfg.replications == 2


class TestRunReplications:
    def test_deterministic_report(self):
        cfg = SimConfig(n_total=(60,), t_star=(0.7,), replications=2, seed=3,
                        estimators=("rc", "dr"), nuisance_mode="oracle")
        a = run_replications(cfg)
        b = run_replications(cfg)
        assert a.to_json() == b.to_json()

    def test_worker_pool_matches_serial(self):
        serial = SimConfig(n_total=(60,), t_star=(0.7,), replications=3, seed=3,
                           estimators=("rc", "dr"), nuisance_mode="oracle", threads=1)
        pooled = SimConfig(n_total=(60,), t_star=(0.7,), replications=3, seed=3,
                           estimators=("rc", "dr"), nuisance_mode="oracle", threads=2)
        a = run_replications(serial)
        b = run_replications(pooled)
        a.config["threads"] = b.config["threads"] = None
        assert a.to_json() == b.to_json()

    def test_report_shape_and_skips(self):
        cfg = SimConfig(n_total=(60, 90), t_star=(0.2, 0.7), replications=2, seed=4,
                        estimators=("cs", "rc", "ivw"), nuisance_mode="oracle")
        report = run_replications(cfg)
        assert len(report.rows) == 2 * 2 * 3
        cell = report.cell("cs", 60, 0.2)
        assert cell["not_identified"] == 2 and cell["failures"] == 0
        assert not report.invalid
        cell_ok = report.cell("cs", 60, 0.7)
        assert cell_ok["replications"] == 2
        assert report.cell("ivw", 60, 0.2)["not_identified"] == 2

    def test_mse_at_least_bias_squared(self):
        cfg = SimConfig(n_total=(120,), t_star=(0.7,), replications=4, seed=5,
                        estimators=("rc", "dr"), nuisance_mode="oracle")
        report = run_replications(cfg)
        for row in report.rows:
            assert row["mse"] >= row["bias"] ** 2 - 1e-15
            assert 0.0 <= row["coverage"] <= 1.0

    def test_csv_lines_shape(self):
        cfg = SimConfig(n_total=(60,), t_star=(0.7,), replications=1, seed=6,
                        estimators=("rc",), nuisance_mode="oracle")
        lines = run_replications(cfg).csv_lines()
        assert lines[0].startswith("estimator,n,t_star")
        assert len(lines) == 2


class TestRateStudy:
    def test_validations(self):
        with pytest.raises(ValidationError):
            rate_study(SimConfig(n_total=(300, 600, 1500), t_star=(0.2, 0.7),
                                 replications=200))
        with pytest.raises(ValidationError):
            rate_study(SimConfig(n_total=(300, 600), t_star=(0.7,), replications=200))
        with pytest.raises(ValidationError):
            rate_study(SimConfig(n_total=(300, 600, 1500), t_star=(0.7,),
                                 replications=50))
