"""Scoring: MAE, RMSE, and the ensemble CRPS estimator."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odecast.errors import ContractViolation
from odecast.metrics import ScoreReport, crps_empirical, crps_mean, mae, rmse, score_windows
from odecast.numerics import RngStream

from helpers import crps_quadrature


class TestPointMetrics:
    def test_hand_example(self):
        pred = np.array([1.0, 2.0, 3.0])
        truth = np.array([2.0, 0.0, -3.0])
        assert mae(pred, truth) == pytest.approx((1 + 2 + 6) / 3)
        assert rmse(pred, truth) == pytest.approx(np.sqrt((1 + 4 + 36) / 3))

    def test_perfect_forecast(self):
        x = RngStream(1, 70).gaussian((4, 5))
        assert mae(x, x) == 0.0
        assert rmse(x, x) == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            mae(np.zeros(3), np.zeros(4))


class TestCrps:
    def test_binary_ensemble_exact(self):
        # samples {0, 1}, observation 0: CRPS = 1/2 - 1/4 = 1/4 exactly
        samples = np.array([0.0, 1.0])
        assert crps_empirical(samples, np.array(0.0)) == pytest.approx(0.25, abs=0)

    def test_single_member_reduces_to_absolute_error(self):
        s = RngStream(2, 70)
        x = s.gaussian((1, 6))
        y = s.gaussian((6,))
        got = crps_empirical(x, y)
        assert np.abs(got - np.abs(x[0] - y)).max() < 1e-14

    def test_degenerate_ensemble_is_absolute_error(self):
        samples = np.full((8,), 1.5)
        assert crps_empirical(samples, np.array(0.5)) == pytest.approx(1.0, abs=1e-14)

    def test_matches_quadrature_on_random_ensembles(self):
        stream = RngStream(3, 70)
        worst = 0.0
        for trial in range(200):
            k = int(stream.integers(2, 17, ()))
            loc = float(stream.gaussian(()))
            spread = 0.5 + float(stream.uniform(0.0, 2.0, ()))
            samples = loc + spread * stream.gaussian((k,))
            truth = loc + spread * float(stream.gaussian(()))
            got = float(crps_empirical(samples, np.array(truth)))
            want = crps_quadrature(samples, truth)
            worst = max(worst, abs(got - want))
        assert worst <= 1e-6

    def test_crps_bounded_by_mean_absolute_error(self):
        stream = RngStream(4, 70)
        for _ in range(50):
            samples = stream.gaussian((8, 3))
            truth = stream.gaussian((3,))
            crps = crps_empirical(samples, truth)
            mean_abs = np.abs(samples - truth).mean(axis=0)
            assert np.all(crps <= mean_abs + 1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(min_value=0, max_value=10_000),
        st.floats(min_value=-50.0, max_value=50.0, allow_nan=False),
    )
    def test_translation_invariance(self, seed, shift):
        stream = RngStream(seed, 71)
        samples = stream.gaussian((6,))
        truth = float(stream.gaussian(()))
        a = float(crps_empirical(samples, np.array(truth)))
        b = float(crps_empirical(samples + shift, np.array(truth + shift)))
        assert a == pytest.approx(b, abs=1e-10)

    def test_sharper_calibrated_ensemble_scores_better(self):
        stream = RngStream(5, 70)
        truth = np.zeros(500)
        tight = 0.2 * stream.gaussian((16, 500))
        loose = 2.0 * stream.gaussian((16, 500))
        assert crps_mean(tight, truth) < crps_mean(loose, truth)

    def test_pointwise_shape(self):
        samples = RngStream(6, 70).gaussian((4, 2, 3, 5))
        truth = np.zeros((2, 3, 5))
        assert crps_empirical(samples, truth).shape == (2, 3, 5)


class TestScoreReport:
    def test_score_windows_aggregates(self):
        stream = RngStream(7, 70)
        truth = stream.gaussian((3, 4, 2, 2))
        pred = truth + 0.5
        report = score_windows(pred, truth)
        assert report.mae == pytest.approx(0.5)
        assert report.rmse == pytest.approx(0.5)
        assert report.crps is None
        assert report.n_windows == 3
        assert len(report.per_horizon_mae) == 4

    def test_score_windows_with_samples(self):
        stream = RngStream(8, 70)
        truth = stream.gaussian((2, 3, 2, 1))
        samples = truth[:, None] + 0.1 * stream.gaussian((2, 5, 3, 2, 1))
        report = score_windows(samples.mean(axis=1), truth, samples)
        assert report.crps is not None and report.crps > 0
        assert len(report.per_horizon_crps) == 3

    def test_json_csv_round_trip_fields(self):
        r = ScoreReport(mae=1.0, rmse=2.0, crps=0.5, n_windows=4,
                        per_horizon_mae=[1.0, 1.5], per_horizon_crps=[0.4, 0.6])
        d = r.to_dict()
        assert set(d) >= {"mae", "rmse", "crps", "n_windows"}
        csv = r.to_csv()
        assert csv.splitlines()[0] == "metric,value"
        assert "crps,0.5" in csv
        horizon = r.horizon_csv().splitlines()
        assert horizon[0] == "horizon,mae,crps"
        assert len(horizon) == 3
