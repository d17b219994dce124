import io
import os
import shutil
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from unittest.mock import patch

import pandas as pd

# Add parent directory to path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.config import (
    ConfigError,
    TrainConfig,
    apply_preset,
    config_from_dict,
    config_hash,
    config_to_dict,
    config_to_ini,
    load_config,
    parse_config,
)
from functions.report import print_metrics_summary, print_training_summary, print_verify_summary
from utils import read_csv, write_csv


class TestParseConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = parse_config("")
        self.assertEqual(cfg, TrainConfig())
        self.assertEqual((cfg.T, cfg.H, cfg.W, cfg.P, cfg.d_router), (96, 96, 24, 24, 16))
        self.assertEqual((cfg.lr, cfg.alpha, cfg.batch_size), (0.005, 0.15, 32))

    def test_sections_and_flags(self):
        cfg = parse_config("[model]\nT = 336\nW = auto\n[flags]\nuse_router = false\n[train]\nlr = 0.001\n")
        self.assertEqual(cfg.T, 336)
        self.assertEqual(cfg.W, 0)
        self.assertEqual(cfg.lr, 0.001)
        self.assertFalse(cfg.flags.use_router)
        self.assertTrue(cfg.flags.use_anchor)

    def test_preset_then_overrides(self):
        """Test that explicit keys win over the dataset preset"""
        cfg = parse_config("[data]\npreset = ETTm1\n[train]\nbatch_size = 8\n")
        self.assertEqual(cfg.W, 96)
        self.assertEqual(cfg.split_ratios, (0.6, 0.2, 0.2))
        self.assertEqual(cfg.batch_size, 8)

    def test_rejects_unknown_input(self):
        for text in ("[model]\nwidth = 3\n", "[extra]\nT = 3\n", "[model]\nT = many\n", "[flags]\nuse_sam = maybe\n"):
            with self.assertRaises(ConfigError):
                parse_config(text)
        with self.assertRaises(ConfigError):
            apply_preset(TrainConfig(), "ETTh9")

    def test_validation(self):
        for text in ("[model]\nT = 0\n", "[model]\ndropout = 1.0\n", "[data]\nsplit_train = 0.9\n", "[model]\nbackbone = rnn\n"):
            with self.assertRaises(ConfigError):
                parse_config(text)


class TestConfigPersistence(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_ini_round_trip(self):
        cfg = parse_config("[model]\nW = auto\nT = 48\n[flags]\nstatistic_aware = false\n")
        self.assertEqual(parse_config(config_to_ini(cfg)), cfg)

    def test_dict_round_trip(self):
        cfg = TrainConfig().with_flags(use_sam=False)
        self.assertEqual(config_from_dict(config_to_dict(cfg)), cfg)
        with self.assertRaises(ConfigError):
            config_from_dict({**config_to_dict(cfg), "depth": 3})

    def test_hash(self):
        self.assertEqual(config_hash(TrainConfig()), config_hash(TrainConfig()))
        self.assertNotEqual(config_hash(TrainConfig()), config_hash(TrainConfig().with_flags(use_anchor=False)))
        self.assertEqual(len(config_hash(TrainConfig())), 16)

    def test_load_config(self):
        path = os.path.join(self.test_dir, "run.ini")
        with open(path, "w", encoding="utf-8") as f:
            f.write("[train]\nseed = 5\n")
        with patch.dict(os.environ, {"PULSE_SEED": ""}):
            self.assertEqual(load_config(path).seed, 5)
        with patch.dict(os.environ, {"PULSE_SEED": "11"}):
            self.assertEqual(load_config(path).seed, 11)
            self.assertEqual(load_config(None).seed, 11)
        with patch.dict(os.environ, {"PULSE_SEED": "eleven"}):
            with self.assertRaises(ConfigError):
                load_config(path)
        with self.assertRaises(FileNotFoundError):
            load_config(os.path.join(self.test_dir, "absent.ini"))

    def test_csv_header_round_trip(self):
        df = pd.DataFrame({"horizon": [96, 192], "MS": [0.3, 0.4]})
        path = write_csv(df, os.path.join(self.test_dir, "out", "table.csv"), {"command": "diagnose", "T": 96, "dataset": "ETT h1"})
        header, loaded = read_csv(path)
        self.assertEqual(header, {"command": "diagnose", "T": "96", "dataset": "ETT_h1"})
        pd.testing.assert_frame_equal(loaded, df)


class TestReports(unittest.TestCase):
    def test_training_summary(self):
        history = pd.DataFrame(
            {"epoch": [1, 2], "train_loss": [0.9, 0.7], "val_mse": [0.5, 0.6], "val_mae": [0.4, 0.45]}
        )
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            print_training_summary(history, 1, {"mse": 0.55, "mae": 0.5}, stopped_early=True)
        output = buffer.getvalue()
        self.assertIn("TRAINING SUMMARY", output)
        self.assertIn("Epochs run: 2 (early stop)", output)
        self.assertIn("Validation: MSE=0.5000", output)

    def test_empty_tables_warn(self):
        with self.assertLogs(level="WARNING"):
            print_training_summary(pd.DataFrame(), 0, {}, stopped_early=False)
        with self.assertLogs(level="WARNING"):
            print_metrics_summary(pd.DataFrame())

    def test_verify_summary_lists_failures(self):
        frame = pd.DataFrame({"name": ["add", "route"], "passed": [True, False]})
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            print_verify_summary({"gradcheck": frame})
        self.assertIn("gradcheck: 1/2 passed", buffer.getvalue())
        self.assertIn("failed: route", buffer.getvalue())


if __name__ == "__main__":
    unittest.main()
