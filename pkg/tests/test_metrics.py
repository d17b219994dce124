import os
import sys
import unittest

import numpy as np
import pandas as pd

# Add parent directory to path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from functions.config import DATASET_PRESETS
from functions.data import build_dataset, load_csv, synth_deterministic
from functions.metrics import mae, mase, mismatch, mismatch_report, mismatch_table, mse
from test_data_generator import etth1_path
from utils import env_flag


def _dataset(values, name="fixture"):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    stamps = pd.date_range("2016-07-01", periods=len(values), freq="h")
    return build_dataset(values, stamps, (0.6, 0.2, 0.2), name, [f"c{i}" for i in range(values.shape[1])])


class TestPointMetrics(unittest.TestCase):
    def test_mse_mae(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        target = np.array([[1.0, 0.0], [0.0, 4.0]])
        self.assertEqual(mse(pred, target), (4.0 + 9.0) / 4)
        self.assertEqual(mae(pred, target), (2.0 + 3.0) / 4)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            mse(np.zeros(3), np.zeros(4))
        with self.assertRaises(ValueError):
            mae(np.zeros(3), np.zeros(4))


class TestMase(unittest.TestCase):
    def test_perfect_forecast(self):
        insample = np.random.default_rng(0).normal(size=50)
        target = np.random.default_rng(1).normal(size=10)
        self.assertEqual(mase(target, target, insample), 0.0)

    def test_random_walk_brute_force(self):
        """Test m=1 on a random walk against a hand loop"""
        rng = np.random.default_rng(2)
        insample = np.cumsum(rng.normal(size=(200, 2)), axis=0)
        target = insample[-1] + np.cumsum(rng.normal(size=(24, 2)), axis=0)
        pred = np.repeat(insample[-1:], 24, axis=0)
        expected = []
        for c in range(2):
            numerator = sum(abs(target[t, c] - pred[t, c]) for t in range(24)) / 24
            denominator = sum(abs(insample[t, c] - insample[t - 1, c]) for t in range(1, 200)) / 199
            expected.append(numerator / (denominator + 1e-8))
        self.assertAlmostEqual(mase(pred, target, insample, m=1), sum(expected) / 2, delta=1e-12)

    def test_seasonal_naive_scores_one(self):
        """Test that the seasonal naive continuation of a noisy seasonal series scores about 1"""
        rng = np.random.default_rng(3)
        t = np.arange(24 * 400)
        series = np.sin(2 * np.pi * t / 24) + 0.3 * rng.normal(size=len(t))
        insample, future = series[:-480], series[-480:]
        pred = series[-504:-24]
        self.assertAlmostEqual(mase(pred, future, insample, m=24), 1.0, delta=0.2)

    def test_short_insample(self):
        with self.assertRaises(ValueError):
            mase(np.zeros(4), np.zeros(4), np.zeros(24), m=24)


class TestMismatch(unittest.TestCase):
    def test_identity(self):
        X = np.random.default_rng(0).normal(size=(96, 3))
        ms, ss, sm = mismatch(X, X)
        self.assertEqual((ms, ss, sm), (0.0, 0.0, 0.0))

    def test_mean_shift_example(self):
        """Test that means 1 and 3 with equal shape give MS = 0.5"""
        X = 1.0 + np.sin(np.arange(48) * 2 * np.pi / 12)[:, None]
        ms, ss, _ = mismatch(X, X + 2.0)
        self.assertAlmostEqual(ms, 0.5, delta=1e-8)
        self.assertAlmostEqual(ss, 0.0, delta=1e-12)

    def test_bounds_and_scale_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            X = rng.normal(size=(32, 2)) * rng.uniform(0.1, 5.0)
            Y = rng.normal(loc=2.0 + rng.uniform(), size=(20, 2))
            values = np.array(mismatch(X, Y))
            self.assertTrue(np.all((values >= 0.0) & (values <= 1.0)))
            np.testing.assert_allclose(mismatch(7.5 * X, 7.5 * Y), values, rtol=1e-6, atol=1e-9)

    def test_constant_windows(self):
        _, _, sm = mismatch(np.zeros((16, 1)), np.zeros((8, 1)))
        self.assertEqual(sm, 0.0)

    def test_short_window(self):
        with self.assertRaises(ValueError):
            mismatch(np.zeros((1, 2)), np.zeros((8, 2)))

    def test_stationary_series_near_zero(self):
        t = np.arange(2400)
        ds = _dataset(np.sin(2 * np.pi * t / 24) + 0.5 * np.cos(2 * np.pi * t / 12))
        table = mismatch_table(ds, 96, [96])
        self.assertLess(table.loc[0, "SS"], 1e-6)
        self.assertLess(table.loc[0, "SM"], 1e-6)

    def test_ramp_mean_shift_grows_with_horizon(self):
        """Test that a linear trend gives MS increasing with the horizon"""
        ds = _dataset(synth_deterministic(2400, 1, 24, trend_slope=0.01).ravel())
        table = mismatch_table(ds, 96, [24, 48, 96, 192])
        self.assertTrue(np.all(np.diff(table["MS"].to_numpy()) > 0))
        self.assertEqual(list(table.columns), ["dataset", "horizon", "MS", "SS", "SM", "windows"])

    def test_frequency_switch(self):
        """Test that windows straddling a frequency change show a larger spectral mismatch"""
        t = np.arange(400)
        series = np.where(t < 200, np.sin(2 * np.pi * t / 24), np.sin(2 * np.pi * t / 6))
        straddling = mismatch(series[104:200], series[200:296])[2]
        before = mismatch(series[8:104], series[104:200])[2]
        self.assertGreater(straddling, before + 0.5)

    def test_window_count(self):
        ds = _dataset(np.random.default_rng(5).normal(size=(1000, 2)))
        report = mismatch_report(ds, 96, 48)
        self.assertEqual(report.windows, 200 - 96 - 48 + 1)


@unittest.skipUnless(etth1_path() and env_flag("PULSE_RUN_SLOW"), "ETTh1 CSV absent or PULSE_RUN_SLOW unset")
class TestEtth1Mismatch(unittest.TestCase):
    def test_reference_values(self):
        preset = DATASET_PRESETS["ETTh1"]
        ds = load_csv(etth1_path(), split_ratios=preset["split"], max_rows=preset["max_rows"])
        report = mismatch_report(ds, 96, 96)
        for value, reference in ((report.MS, 0.332), (report.SS, 0.114), (report.SM, 0.267)):
            self.assertAlmostEqual(value, reference, delta=0.1 * reference)


if __name__ == "__main__":
    unittest.main()
