import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from functions.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from functions.config import ConfigError, TrainConfig, apply_preset, config_hash, config_to_ini, load_config
from functions.data import DataError, MarkSpec, SeriesDataset, detect_period_acf, load_csv, make_windows, window_at
from functions.data import synth_seasonal_hetero, write_series_csv
from functions.metrics import mae, mase, mismatch_table, mse
from functions.model import PulseModel
from functions.numerics import NonFiniteError, Rng
from functions.report import print_metrics_summary, print_training_summary, print_verify_summary
from functions.train import evaluate, fit, predict
from functions.verify import check_beta_prior, check_complexity, check_gradients, check_prop31
from functions.verify import COLLAPSE_CELL, check_scale_collapse_gradient, check_thm32
from utils import setup_logging, write_csv

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_DATA = 3

CHECKPOINT_NAME = "checkpoint.pulse"
VERIFY_SUITES = ("prop31", "thm32", "gradcheck", "beta", "complexity")
ABLATIONS = [
    ("full", {}),
    ("w/o Phase Anchor", {"use_anchor": False}),
    ("w/o Router", {"use_router": False}),
    ("w/o SAM", {"use_sam": False}),
    ("w/o Statistic-Aware", {"statistic_aware": False}),
]


# ----------------------------------------
# Shared helpers
# ----------------------------------------


def read_config(path: str | None, preset: str | None = None) -> TrainConfig:
    try:
        cfg = load_config(path)
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from None
    if preset:
        cfg = apply_preset(cfg, preset)
    return cfg


def parse_marks(cfg: TrainConfig) -> MarkSpec:
    try:
        return MarkSpec.parse(cfg.marks)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def prepare_data(cfg: TrainConfig, data_path: str, resolve_period: bool = True) -> tuple[SeriesDataset, MarkSpec, int]:
    """Load and split the series, resolve the period W (ACF when ``W = auto``)."""
    ds = load_csv(
        data_path,
        timestamp_column=cfg.timestamp_column,
        split_ratios=cfg.split_ratios,
        min_split_rows=cfg.T + cfg.H,
        max_rows=cfg.max_rows,
    )
    W = cfg.W if cfg.W > 0 or not resolve_period else detect_period_acf(ds, cfg.acf_max_lag)
    return ds, parse_marks(cfg), W


def output_header(cfg: TrainConfig, command: str, **extra) -> dict:
    return {"command": command, "config_hash": config_hash(cfg), **extra}


def split_metrics(model: PulseModel, ds: SeriesDataset, marks: MarkSpec, split: str, mase_m: int) -> dict:
    cfg = model.cfg
    batches = list(make_windows(ds, split, cfg.T, cfg.H, marks, cfg.batch_size))
    predictions = predict(model, batches, workers=cfg.eval_workers)
    pred = np.concatenate(predictions, axis=0)
    target = np.concatenate([b.Y for b in batches], axis=0)
    return {
        "split": split,
        "mse": mse(pred, target),
        "mae": mae(pred, target),
        "mase": mase(pred, target, ds.split_values("train"), m=mase_m),
        "mase_m": mase_m,
        "windows": len(pred),
    }


# ----------------------------------------
# Commands
# ----------------------------------------


def cmd_train(args) -> int:
    cfg = read_config(args.config, args.preset)
    ds, marks, W = prepare_data(cfg, args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.info(f"Training on '{ds.name}' with T={cfg.T}, H={cfg.H}, W={W}, config {config_hash(cfg)}")

    model = PulseModel(cfg, ds.channels, marks.F, W=W)
    result = fit(model, ds, cfg, marks)
    save_checkpoint(model, out_dir / CHECKPOINT_NAME, float32=args.float32)
    (out_dir / "config.ini").write_text(config_to_ini(cfg), encoding="utf-8")
    write_csv(result.history, out_dir / "history.csv", output_header(cfg, "train", dataset=ds.name, W=W))

    val_mse, val_mae = evaluate(model, list(make_windows(ds, "val", cfg.T, cfg.H, marks, cfg.batch_size)))
    test_mse, test_mae = evaluate(model, list(make_windows(ds, "test", cfg.T, cfg.H, marks, cfg.batch_size)))
    logging.info(f"Final validation MSE {val_mse:.6f}, MAE {val_mae:.6f}; test MSE {test_mse:.6f}, MAE {test_mae:.6f}")
    print_training_summary(result.history, result.best_epoch, {"mse": test_mse, "mae": test_mae}, result.stopped_early)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds, marks, _ = prepare_data(model.cfg, args.data, resolve_period=False)
    rows = [split_metrics(model, ds, marks, split, args.mase_m) for split in args.splits.split(",")]
    metrics = pd.DataFrame(rows, columns=["split", "mse", "mae", "mase", "mase_m", "windows"])
    write_csv(metrics, args.out, output_header(model.cfg, "eval", dataset=ds.name))
    print_metrics_summary(metrics)
    return EXIT_OK


def cmd_forecast(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    ds, marks, _ = prepare_data(cfg, args.data, resolve_period=False)
    batch = window_at(ds, args.split, cfg.T, cfg.H, marks, args.window_index)
    result = model.forecast(batch)
    H, C = cfg.H, ds.channels
    steps, channels = np.meshgrid(np.arange(H), np.arange(C), indexing="ij")
    table = pd.DataFrame(
        {
            "step": steps.ravel(),
            "channel": np.array(ds.columns)[channels.ravel()],
            "prediction": result.prediction.values[0].ravel(),
            "ground_truth": batch.Y[0].ravel(),
            "A_y": result.A_y.values[0].ravel(),
        }
    )
    header = output_header(cfg, "forecast", dataset=ds.name, split=args.split, window=args.window_index, scale="zscore")
    write_csv(table, args.out, header)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = read_config(args.config, args.preset)
    ds = load_csv(args.data, cfg.timestamp_column, cfg.split_ratios, max_rows=cfg.max_rows)
    horizons = [int(h) for h in args.horizons.split(",")]
    table = mismatch_table(ds, args.T, horizons)
    header = output_header(cfg, "diagnose", T=args.T, aggregation="channel-mean_then_window-mean_stride1_test")
    write_csv(table, args.out, header)
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = read_config(args.config, args.preset)
    ds, marks, W = prepare_data(base, args.data)
    rows = []
    for variant, changes in ABLATIONS:
        cfg = base.with_flags(**changes)
        logging.info(f"Ablation '{variant}' ({config_hash(cfg)})")
        model = PulseModel(cfg, ds.channels, marks.F, W=W)
        result = fit(model, ds, cfg, marks)
        test_mse, test_mae = evaluate(model, list(make_windows(ds, "test", cfg.T, cfg.H, marks, cfg.batch_size)))
        rows.append(
            {
                "variant": variant,
                "use_anchor": cfg.flags.use_anchor,
                "use_router": cfg.flags.use_router,
                "use_sam": cfg.flags.use_sam,
                "statistic_aware": cfg.flags.statistic_aware,
                "val_mse": result.best_val_mse,
                "mse": test_mse,
                "mae": test_mae,
            }
        )
    table = pd.DataFrame(rows)
    write_csv(table, args.out, output_header(base, "ablate", dataset=ds.name, W=W))
    print_metrics_summary(table, title="ABLATION SUMMARY")
    return EXIT_OK


def cmd_synth(args) -> int:
    rng = Rng(args.seed, 0)
    ratios = tuple(float(r) for r in args.split.split(","))
    ds = synth_seasonal_hetero(rng, args.length, args.channels, args.W1, args.W2, args.trend, args.noise, ratios)
    write_series_csv(ds, args.out)
    logging.info(f"Synthetic series written to {args.out}: {ds.length} rows x {ds.channels} channels")
    return EXIT_OK


def run_verify_suite(suite: str, seed: int) -> pd.DataFrame:
    rng = Rng(seed, 0)
    if suite == "prop31":
        reports = [check_prop31(rng, 32, 1.0, 1.0, 50), check_prop31(rng, 32, 100.0, 1.0, 50)]
        return pd.concat([r.to_frame() for r in reports], ignore_index=True)
    if suite == "thm32":
        sampled = check_thm32(rng)
        collapse = check_thm32(rng, grid=[COLLAPSE_CELL], exact=True, label="thm32_exact_collapse")
        return pd.concat([sampled, collapse, check_scale_collapse_gradient(seed=seed)], ignore_index=True)
    if suite == "gradcheck":
        return check_gradients(rng)
    if suite == "beta":
        return check_beta_prior(rng)
    if suite == "complexity":
        return check_complexity()
    raise ConfigError(f"Unknown verification suite '{suite}'")


def cmd_verify(args) -> int:
    suites = VERIFY_SUITES if args.suite == "all" else (args.suite,)
    results = {suite: run_verify_suite(suite, args.seed) for suite in suites}
    frames = [frame.assign(suite=suite) for suite, frame in results.items()]
    table = pd.concat(frames, ignore_index=True)
    write_csv(table, args.out, {"command": "verify", "suite": args.suite, "seed": args.seed})
    print_verify_summary(results)
    failed = int((~table["passed"].astype(bool)).sum())
    if failed:
        logging.error(f"{failed} verification checks failed")
        return EXIT_FAILED
    return EXIT_OK


def cmd_export_anchors(args) -> int:
    """Codebook rows plus the history and future anchors of one window, in long format."""
    model = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    ds, marks, _ = prepare_data(cfg, args.data, resolve_period=False)
    codebook = model.codebook.M.values
    rows = [
        {"source": "codebook", "index": l, "channel": ds.columns[c], "value": codebook[l, c]}
        for l in range(codebook.shape[0])
        for c in range(codebook.shape[1])
    ]
    batch = window_at(ds, args.split, cfg.T, cfg.H, marks, args.window_index)
    result = model.eval().forecast(batch)
    for source, anchor in (("history_anchor", result.A_x.values[0]), ("future_anchor", result.A_y.values[0])):
        rows += [
            {"source": source, "index": h, "channel": ds.columns[c], "value": anchor[h, c]}
            for h in range(anchor.shape[0])
            for c in range(anchor.shape[1])
        ]
    header = output_header(cfg, "export-anchors", dataset=ds.name, split=args.split, window=args.window_index, W=model.W)
    write_csv(pd.DataFrame(rows, columns=["source", "index", "channel", "value"]), args.out, header)
    return EXIT_OK


# ----------------------------------------
# Argument parsing
# ----------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulse", description="Phase-anchored forecasting of non-stationary multivariate time series"
    )
    parser.add_argument(
        "--log_level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default="INFO",
        help="Set the logging level",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p, with_data: bool = True):
        p.add_argument("--config", type=str, default=None, help="INI config file (defaults when omitted)")
        p.add_argument("--preset", type=str, default=None, help="Dataset preset applied on top of the config")
        if with_data:
            p.add_argument("--data", type=str, required=True, help="CSV with a date column and numeric channels")

    p = sub.add_parser("train", help="Train a model and write checkpoint + history")
    config_args(p)
    p.add_argument("--out", type=str, required=True, help="Output directory")
    p.add_argument("--float32", action="store_true", help="Store checkpoint parameters as 32-bit floats")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MSE, MAE and MASE of a checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True, help="Metrics CSV")
    p.add_argument("--splits", type=str, default="test", help="Comma-separated splits (default: test)")
    p.add_argument("--mase_m", type=int, default=1, help="Seasonal period of the MASE baseline (1 or 96)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="Forecast of one window as a plot-ready CSV")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--window_index", type=int, default=0)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("diagnose", help="History-future mismatch table (MS, SS, SM)")
    config_args(p)
    p.add_argument("--T", type=int, default=96)
    p.add_argument("--horizons", type=str, default="96,192,336,720")
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("ablate", help="Full model and the four single-component ablations")
    config_args(p)
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="Write a synthetic seasonal, heteroscedastic series")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--W1", type=int, default=24)
    p.add_argument("--W2", type=int, default=168)
    p.add_argument("--trend", type=float, default=0.001)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--split", type=str, default="0.7,0.1,0.2")
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="Run verification suites")
    p.add_argument("suite", choices=VERIFY_SUITES + ("all",))
    p.add_argument("--out", type=str, default="verify_report.csv")
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-anchors", help="Codebook and history anchor of a trained model")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--window_index", type=int, default=0)
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_export_anchors)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as e:
        logging.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as e:
        logging.error(f"Data error: {e}")
        return EXIT_DATA
    except NonFiniteError as e:
        logging.error(f"Training aborted: {e}", exc_info=True)
        return EXIT_FAILED
    except ValueError as e:
        logging.error(f"Invalid arguments: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
