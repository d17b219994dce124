import logging

import pandas as pd

BANNER_WIDTH = 50


def _banner(title: str) -> None:
    print("\n" + "=" * BANNER_WIDTH)
    print(title)
    print("=" * BANNER_WIDTH)


def print_training_summary(history: pd.DataFrame, best_epoch: int, test_metrics: dict, stopped_early: bool) -> None:
    """Console summary after ``pulse train``."""
    if history is None or history.empty:
        logging.warning("Cannot print training summary: history is empty")
        return
    _banner("TRAINING SUMMARY")
    print(f"\nEpochs run: {len(history)}{' (early stop)' if stopped_early else ''}")
    print(f"Best epoch: {best_epoch}")
    best = history[history["epoch"] == best_epoch]
    if not best.empty:
        row = best.iloc[0]
        print(f"Validation: MSE={row['val_mse']:.4f}, MAE={row['val_mae']:.4f}")
    if test_metrics:
        print(f"Test: MSE={test_metrics['mse']:.4f}, MAE={test_metrics['mae']:.4f}")

    print("\nLoss per epoch:")
    for row in history.itertuples():
        marker = " *" if row.epoch == best_epoch else ""
        print(f"  {row.epoch:>3}: train {row.train_loss:.4f}  val MSE {row.val_mse:.4f}{marker}")
    print("\n" + "=" * BANNER_WIDTH)


def print_metrics_summary(metrics: pd.DataFrame, title: str = "EVALUATION SUMMARY") -> None:
    """One line per row of a metrics table (eval and ablate)."""
    if metrics is None or metrics.empty:
        logging.warning("Cannot print metrics summary: table is empty")
        return
    _banner(title)
    label_column = "variant" if "variant" in metrics.columns else "split"
    for row in metrics.to_dict(orient="records"):
        label = row.get(label_column, "")
        values = ", ".join(
            f"{key.upper()}={row[key]:.4f}" for key in ("mse", "mae", "mase") if key in row and pd.notna(row[key])
        )
        print(f"  {label}: {values}")
    print("\n" + "=" * BANNER_WIDTH)


def print_verify_summary(results: dict[str, pd.DataFrame]) -> None:
    _banner("VERIFICATION SUMMARY")
    for suite, frame in results.items():
        passed = int(frame["passed"].sum())
        print(f"  {suite}: {passed}/{len(frame)} passed")
        for row in frame[~frame["passed"]].to_dict(orient="records"):
            detail = row.get("name") or row.get("check")
            print(f"    - failed: {detail}")
    print("\n" + "=" * BANNER_WIDTH)
