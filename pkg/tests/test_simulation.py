import numpy as np
import pytest

from doubleweight import DgpSpec, EstimatorConfig, run_monte_carlo
from doubleweight.simulation import (
    LATENT_CLASS_TRUE_TAU,
    SINUSOIDAL_TRUE_TAU,
    paired_variance_gap,
    population_draws,
    sample_dgp,
    sample_latent_class,
    sample_sinusoidal,
    summary_to_dict,
    write_replications_csv,
    write_summary_json,
)


class TestSinusoidal:
    def test_replay_is_bit_identical(self):
        a, _, _ = sample_sinusoidal(200, 0.3, 42)
        b, _, _ = sample_sinusoidal(200, 0.3, 42)
        assert np.array_equal(a.y, b.y, equal_nan=True)
        assert np.array_equal(a.r_y, b.r_y)
        assert np.array_equal(a.z, b.z)
        assert np.array_equal(
            a.covariates.fully_observed, b.covariates.fully_observed
        )

    def test_true_tau_closed_form(self):
        # integral of sin(x)+cos(x) over (-10,10) divided by 20
        _, tau, _ = sample_sinusoidal(10, 0.5, 0)
        assert tau == pytest.approx(np.sin(10.0) / 10.0, abs=1e-15)
        assert tau == pytest.approx(-0.054402, abs=1e-6)

    def test_observed_fraction_matches_mean_p(self):
        n = 100_000
        ds, _, oracle = sample_sinusoidal(n, 0.5, 7)
        p = oracle["p"]
        rate = ds.n_observed_outcomes / n
        sd = np.sqrt(np.var(p) / n + np.mean(p * (1 - p)) / n)
        assert abs(rate - np.mean(p)) <= 3 * sd

    def test_potential_outcomes_consistent(self):
        ds, _, oracle = sample_sinusoidal(500, 0.5, 3)
        obs = ds.r_y == 1
        want = np.where(ds.z == 1, oracle["y1"], oracle["y0"])
        assert np.allclose(ds.y[obs], want[obs])


class TestLatentClass:
    def test_class_proportion(self):
        n = 100_000
        _, _, oracle = sample_latent_class(n, 0.2, 11)
        xi = oracle["xi"]
        assert abs(xi.mean() - 0.4) <= 3 * np.sqrt(0.4 * 0.6 / n)

    def test_observation_rates_by_class(self):
        n = 100_000
        _, _, oracle = sample_latent_class(n, 0.2, 12)
        xi, mask = oracle["xi"], oracle["mask"]
        rate_well = mask[xi == 0].mean()
        rate_ill = mask[xi == 1].mean()
        assert rate_well == pytest.approx(0.95, abs=0.005)
        assert rate_ill == pytest.approx(0.50, abs=0.01)

    def test_true_tau_against_brute_force(self):
        # the shipped value must match the Monte Carlo mean of individual
        # effects computed from the raw potential outcomes
        n = 2_000_000
        _, tau, oracle = sample_latent_class(n, 0.2, 13)
        effects = oracle["y1"] - oracle["y0"]
        se = np.std(effects) / np.sqrt(n)
        assert tau == 8.0
        assert abs(effects.mean() - tau) <= 3 * se

    def test_masked_cells_hidden(self):
        ds, _, oracle = sample_latent_class(300, 0.2, 14)
        pc = ds.covariates
        assert np.all(np.isnan(pc.partial[pc.observed_mask == 0]))
        assert np.allclose(
            pc.partial[pc.observed_mask == 1], oracle["w"][oracle["mask"] == 1]
        )


class TestPopulationDraws:
    def test_keys_and_shapes(self):
        for name in ("sinusoidal", "latent-class"):
            dgp = DgpSpec(name=name, n=100, e=0.2)
            draws = population_draws(dgp, 50, 3)
            assert set(draws) == {"y1", "y0", "z", "p", "x_adj", "u"}
            assert draws["u"].shape[0] == 50

    def test_full_data_flag(self):
        dgp = DgpSpec(name="sinusoidal", n=100, e=0.2, parameters={"full_data": True})
        draws = population_draws(dgp, 50, 3)
        assert np.all(draws["p"] == 1.0)


class TestRunMonteCarlo:
    def configs(self):
        return [
            EstimatorConfig(method="unadj", name="unadj"),
            EstimatorConfig(method="x-ps", name="x-ps"),
        ]

    def test_single_rep_reports_no_variance(self):
        dgp = DgpSpec(name="sinusoidal", n=300, e=0.5)
        s = run_monte_carlo(dgp, self.configs(), reps=1, seed=0)
        assert s.estimators["unadj"].empirical_variance is None
        assert s.estimators["unadj"].mean_bias is not None

    def test_worker_count_leaves_summary_identical(self):
        dgp = DgpSpec(name="sinusoidal", n=200, e=0.5)
        s1 = run_monte_carlo(dgp, self.configs(), reps=12, seed=3, workers=1)
        s2 = run_monte_carlo(dgp, self.configs(), reps=12, seed=3, workers=3)
        assert np.array_equal(s1.tau_hats, s2.tau_hats, equal_nan=True)
        assert np.array_equal(
            s1.sandwich_variances, s2.sandwich_variances, equal_nan=True
        )
        assert summary_to_dict(s1) == summary_to_dict(s2)

    def test_bootstrap_column(self):
        dgp = DgpSpec(name="sinusoidal", n=150, e=0.5)
        s = run_monte_carlo(dgp, self.configs(), reps=3, seed=1, with_bootstrap=20)
        assert s.estimators["unadj"].mean_bootstrap_variance is not None

    def test_artifacts_roundtrip(self, tmp_path):
        dgp = DgpSpec(name="latent-class", n=200, e=0.3)
        s = run_monte_carlo(dgp, self.configs(), reps=4, seed=9)
        jpath = tmp_path / "summary.json"
        cpath = tmp_path / "reps.csv"
        write_summary_json(s, jpath)
        write_replications_csv(s, cpath)
        import csv
        import json

        loaded = json.loads(jpath.read_text())
        assert loaded["true_tau"] == LATENT_CLASS_TRUE_TAU
        with open(cpath) as f:
            rows = list(csv.DictReader(f))
        assert {r["estimator"] for r in rows} == {"unadj", "x-ps"}
        got = [float(r["tau_hat"]) for r in rows if r["estimator"] == "unadj"]
        want = [t for t in s.tau_hats[:, 0] if np.isfinite(t)]
        assert got == want  # repr round-trip is lossless

    def test_rejects_zero_reps(self):
        dgp = DgpSpec(name="sinusoidal", n=100, e=0.5)
        with pytest.raises(ValueError):
            run_monte_carlo(dgp, self.configs(), reps=0, seed=0)


class TestPairedVarianceGap:
    def test_known_gap(self):
        rng = np.random.default_rng(0)
        base = rng.normal(size=4000)
        extra = base + rng.normal(scale=0.5, size=4000)
        gap, se = paired_variance_gap(extra, base)
        assert gap == pytest.approx(0.25, abs=4 * se)
        assert gap / se > 10


class TestDgpSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            DgpSpec(name="unknown", n=10, e=0.5)
        with pytest.raises(ValueError):
            DgpSpec(name="sinusoidal", n=10, e=1.5)
        with pytest.raises(ValueError):
            DgpSpec(name="sinusoidal", n=1, e=0.5)

    def test_custom_hook(self):
        calls = {}

        def sampler(n, e, seed):
            calls["args"] = (n, e)
            return sample_sinusoidal(n, e, seed)

        dgp = DgpSpec(name="custom", n=50, e=0.5, parameters={"sampler": sampler})
        ds, tau, _ = sample_dgp(dgp, 3)
        assert calls["args"] == (50, 0.5)
        assert tau == SINUSOIDAL_TRUE_TAU
