import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import SeriesDataset, window_starts

EPS = 1e-8
WINDOW_CHUNK = 512


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mae shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def mase(pred: np.ndarray, target: np.ndarray, insample: np.ndarray, m: int = 1, eps: float = EPS) -> float:
    """
    Mean absolute scaled error against the seasonal naive forecast with period m.

    The last axis is the channel axis (1-D inputs are one channel). The numerator
    averages |y - y_hat| over all forecast entries of a channel, the denominator
    |y_t - y_{t-m}| over the in-sample series of that channel; channels are then averaged.
    """
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    insample = np.asarray(insample, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mase shape mismatch: {pred.shape} vs {target.shape}")
    if m < 1:
        raise ValueError(f"Seasonal period m must be >= 1, got {m}")
    if insample.shape[0] < m + 1:
        raise ValueError(f"In-sample series has {insample.shape[0]} points; at least m+1={m + 1} needed")
    if pred.ndim == 1:
        pred, target = pred[:, None], target[:, None]
    if insample.ndim == 1:
        insample = insample[:, None]
    if insample.shape[1] != pred.shape[-1]:
        raise ValueError(f"In-sample has {insample.shape[1]} channels, forecast has {pred.shape[-1]}")

    numerator = np.abs(target - pred).reshape(-1, pred.shape[-1]).mean(axis=0)
    scale = np.abs(insample[m:] - insample[:-m]).mean(axis=0) + eps
    return float(np.mean(numerator / scale))


# ----------------------------------------
# History-future mismatch
# ----------------------------------------


@dataclass(frozen=True)
class MismatchReport:
    dataset: str
    horizon: int
    MS: float
    SS: float
    SM: float
    windows: int
    aggregation: str = "per-channel mean, then mean over stride-1 test windows"


def _mismatch_batch(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """(n, T, C) and (n, H, C) windows -> (n, 3) channel-averaged (MS, SS, SM)."""
    mu_x, mu_y = X.mean(axis=1), Y.mean(axis=1)
    sd_x, sd_y = X.std(axis=1), Y.std(axis=1)
    ms = np.abs(mu_y - mu_x) / (np.abs(mu_y) + np.abs(mu_x) + EPS)
    ss = np.abs(sd_y - sd_x) / (sd_y + sd_x + EPS)

    # zero-pad both windows to a common length so the bins line up
    n_fft = max(X.shape[1], Y.shape[1])
    spec_x = np.abs(np.fft.rfft(X, n=n_fft, axis=1))
    spec_y = np.abs(np.fft.rfft(Y, n=n_fft, axis=1))
    mass_x, mass_y = spec_x.sum(axis=1), spec_y.sum(axis=1)
    valid = (mass_x > 0) & (mass_y > 0)
    safe_x = np.where(valid, mass_x, 1.0)[:, None, :]
    safe_y = np.where(valid, mass_y, 1.0)[:, None, :]
    sm = 0.5 * np.abs(spec_x / safe_x - spec_y / safe_y).sum(axis=1)
    sm = np.where(valid, sm, 0.0)
    return np.stack([ms.mean(axis=1), ss.mean(axis=1), sm.mean(axis=1)], axis=1)


def mismatch(X: np.ndarray, Y: np.ndarray) -> tuple[float, float, float]:
    """(MS, SS, SM) between a T x C history and an H x C future, averaged over channels."""
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    if X.shape[0] < 2 or Y.shape[0] < 2:
        raise ValueError(f"mismatch needs T, H >= 2, got {X.shape[0]} and {Y.shape[0]}")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"Channel mismatch: {X.shape} vs {Y.shape}")
    ms, ss, sm = _mismatch_batch(X[None], Y[None])[0]
    return float(ms), float(ss), float(sm)


def mismatch_report(ds: SeriesDataset, T: int, H: int, split: str = "test") -> MismatchReport:
    starts = window_starts(ds, split, T, H)
    totals = np.zeros(3)
    for i in range(0, len(starts), WINDOW_CHUNK):
        chunk = starts[i : i + WINDOW_CHUNK]
        X = ds.values[chunk[:, None] + np.arange(T)[None, :]]
        Y = ds.values[chunk[:, None] + T + np.arange(H)[None, :]]
        totals += _mismatch_batch(X, Y).sum(axis=0)
    ms, ss, sm = totals / len(starts)
    return MismatchReport(dataset=ds.name, horizon=H, MS=float(ms), SS=float(ss), SM=float(sm), windows=len(starts))


def mismatch_table(ds: SeriesDataset, T: int, horizons: list[int], split: str = "test") -> pd.DataFrame:
    """One row per horizon: dataset, horizon, MS, SS, SM, windows."""
    rows = []
    for H in horizons:
        report = mismatch_report(ds, T, H, split)
        logging.info(f"Mismatch {ds.name} T={T} H={H}: MS={report.MS:.3f} SS={report.SS:.3f} SM={report.SM:.3f}")
        rows.append(
            {
                "dataset": report.dataset,
                "horizon": report.horizon,
                "MS": report.MS,
                "SS": report.SS,
                "SM": report.SM,
                "windows": report.windows,
            }
        )
    return pd.DataFrame(rows, columns=["dataset", "horizon", "MS", "SS", "SM", "windows"])
