import json
import math

import numpy as np
import pytest
import scipy.stats

from skycast.errors import ConfigError, NumericsError
from skycast.evaluation import (
    ForecastSet,
    autocorrelation,
    evaluate_forecasts,
    forecast_skill,
    mae,
    nmap_pct,
    rmse,
    spearman,
    stratify_by_cloudiness,
    write_report,
)


class TestPointMetricsHandValues:
    def test_mae(self):
        assert mae([1.0, 2.0, 3.0], [2.0, 4.0, 0.0]) == pytest.approx(2.0, rel=1e-12)

    def test_rmse(self):
        expect = math.sqrt((1 + 4 + 9) / 3)
        assert rmse([1.0, 2.0, 3.0], [2.0, 4.0, 0.0]) == pytest.approx(expect, rel=1e-12)

    def test_nmap(self):
        # mean abs err 2, mean observation 2 -> 100%.
        assert nmap_pct([1.0, 2.0, 3.0], [2.0, 4.0, 0.0]) == pytest.approx(100.0, rel=1e-12)

    def test_skill_half(self):
        t = [0.0, 0.0]
        assert forecast_skill(t, [1.0, 1.0], [2.0, 2.0]) == pytest.approx(0.5, rel=1e-12)

    def test_skill_identical_forecasts_is_zero_even_at_zero_error(self):
        t = [5.0, 6.0]
        assert forecast_skill(t, t, t) == 0.0

    def test_skill_zero_reference_error_raises(self):
        t = [5.0, 6.0]
        with pytest.raises(NumericsError):
            forecast_skill(t, [5.5, 6.5], t)

    def test_nmap_zero_mean_raises(self):
        with pytest.raises(NumericsError):
            nmap_pct([0.0, 0.0], [1.0, 1.0])

    def test_empty_inputs_are_nan(self):
        assert math.isnan(mae([], []))
        assert math.isnan(rmse([], []))
        assert math.isnan(nmap_pct([], []))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            mae([1.0], [1.0, 2.0])


class TestPointMetricsBruteForce:
    def test_against_python_loops(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 1000, 500)
        b = rng.uniform(0, 1000, 500)
        bf_mae = sum(abs(x - y) for x, y in zip(a, b)) / len(a)
        bf_rmse = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / len(a))
        bf_nmap = 100.0 * bf_mae / (sum(a) / len(a))
        assert mae(a, b) == pytest.approx(bf_mae, rel=1e-10)
        assert rmse(a, b) == pytest.approx(bf_rmse, rel=1e-10)
        assert nmap_pct(a, b) == pytest.approx(bf_nmap, rel=1e-10)


class TestSpearman:
    def test_hand_case(self):
        # ranks x = 1,2,3; y = 3,1,2; sum d^2 = 6; 1 - 36/24 = -0.5
        assert spearman([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == pytest.approx(-0.5, rel=1e-12)

    def test_monotone_nonlinear_is_one(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert spearman(x, np.exp(x)) == pytest.approx(1.0, rel=1e-12)

    def test_reversed_is_minus_one(self):
        x = np.arange(20.0)
        assert spearman(x, -x) == pytest.approx(-1.0, rel=1e-12)

    def test_matches_scipy_no_ties(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            x = rng.normal(size=60)
            y = 0.4 * x + rng.normal(size=60)
            expect = scipy.stats.spearmanr(x, y).statistic
            assert spearman(x, y) == pytest.approx(expect, rel=1e-10)

    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            x = rng.integers(0, 6, 80).astype(float)
            y = rng.integers(0, 6, 80).astype(float)
            expect = scipy.stats.spearmanr(x, y).statistic
            assert spearman(x, y) == pytest.approx(expect, rel=1e-10, abs=1e-12)

    def test_constant_series_is_nan(self):
        assert math.isnan(spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]))


class TestAutocorrelation:
    def test_lag_zero_is_one(self):
        rng = np.random.default_rng(8)
        acf = autocorrelation(rng.normal(size=300), 5)
        assert acf[0] == 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=120)
        acf = autocorrelation(x, 10)
        xc = x - x.mean()
        var = float(np.sum(xc * xc))
        for k in range(11):
            bf = sum(xc[i] * xc[i + k] for i in range(len(x) - k)) / var
            assert acf[k] == pytest.approx(bf, rel=1e-10, abs=1e-12)

    def test_ar1_decay(self):
        rng = np.random.default_rng(10)
        phi = 0.8
        x = np.zeros(20000)
        for i in range(1, len(x)):
            x[i] = phi * x[i - 1] + rng.normal()
        acf = autocorrelation(x, 3)
        np.testing.assert_allclose(acf[1:], [phi, phi**2, phi**3], atol=0.05)

    def test_constant_series_raises(self):
        with pytest.raises(NumericsError):
            autocorrelation(np.ones(50), 3)


class TestStratify:
    def test_partition_and_boundaries(self):
        c = np.array([0.0, 0.19, 0.2, 0.5, 0.79, 0.8, 1.0])
        masks = stratify_by_cloudiness(c)
        np.testing.assert_array_equal(
            masks["clear"], [True, True, False, False, False, False, False]
        )
        np.testing.assert_array_equal(
            masks["partial"], [False, False, True, True, True, False, False]
        )
        np.testing.assert_array_equal(
            masks["overcast"], [False, False, False, False, False, True, True]
        )
        total = masks["clear"] | masks["partial"] | masks["overcast"]
        assert total.all()

    def test_out_of_range_clipped(self):
        masks = stratify_by_cloudiness(np.array([-0.5, 1.7]))
        assert masks["clear"][0] and masks["overcast"][1]


def make_forecast_set(rng, n=40, h=3):
    horizons = 600 * np.arange(1, h + 1)
    truth = rng.uniform(50, 900, (n, h))
    ref = truth + rng.normal(0, 60, (n, h))
    model = truth + rng.normal(0, 30, (n, h))
    return ForecastSet(
        t0_s=np.arange(n) * 600,
        horizons_s=horizons,
        ghi_true=truth,
        ghi_model=model,
        ghi_reference=ref,
        csi_t0=rng.uniform(0, 1.1, n),
    )


class TestEvaluateForecasts:
    def test_perfect_model(self):
        rng = np.random.default_rng(11)
        fs = make_forecast_set(rng)
        fs.ghi_model = fs.ghi_true.copy()
        rep = evaluate_forecasts(fs)
        assert rep.overall["mae_wm2"] == 0.0
        assert rep.overall["skill"] == pytest.approx(1.0)

    def test_model_equals_reference_has_zero_skill(self):
        rng = np.random.default_rng(12)
        fs = make_forecast_set(rng)
        fs.ghi_model = fs.ghi_reference.copy()
        rep = evaluate_forecasts(fs)
        assert rep.overall["skill"] == 0.0

    def test_per_horizon_rows_and_strata_counts(self):
        rng = np.random.default_rng(13)
        fs = make_forecast_set(rng, n=60, h=4)
        rep = evaluate_forecasts(fs)
        assert [r["horizon_s"] for r in rep.per_horizon] == [600, 1200, 1800, 2400]
        assert sum(r["n"] for r in rep.strata) == 60
        assert rep.n_forecasts == 60

    def test_shape_validation(self):
        with pytest.raises(ConfigError):
            ForecastSet(
                t0_s=np.arange(3),
                horizons_s=np.array([600]),
                ghi_true=np.zeros((3, 1)),
                ghi_model=np.zeros((3, 2)),
                ghi_reference=np.zeros((3, 1)),
                csi_t0=np.zeros(3),
            )


class TestWriteReport:
    def test_files_written_and_consistent(self, tmp_path):
        rng = np.random.default_rng(14)
        fs = make_forecast_set(rng, n=25, h=3)
        rep = evaluate_forecasts(fs)
        paths = write_report(rep, fs, str(tmp_path / "out"))
        with open(paths["metrics"]) as fh:
            payload = json.load(fh)
        assert payload["n_forecasts"] == 25
        assert payload["overall"]["mae_wm2"] == pytest.approx(rep.overall["mae_wm2"])
        with open(paths["records"]) as fh:
            lines = fh.read().strip().splitlines()
        assert len(lines) == 1 + 25 * 3  # header plus one row per forecast
        with open(paths["density"]) as fh:
            den = fh.read().strip().splitlines()[1:]
        counts = sum(int(line.split(",")[-1]) for line in den)
        assert counts == 25 * 3
