import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from .numerics import Rng

STD_GUARD = 1e-8
SPLITS = ("train", "val", "test")
MARK_FEATURES = ("MinuteOfHour", "HourOfDay", "DayOfWeek", "DayOfMonth", "DayOfYear")
SYNTH_EPOCH = "2016-07-01 00:00:00"


class DataError(ValueError):
    """Raised for unreadable, incomplete or too-short input series."""


@dataclass(frozen=True)
class MarkSpec:
    features: tuple[str, ...] = ("HourOfDay",)

    def __post_init__(self):
        unknown = [f for f in self.features if f not in MARK_FEATURES]
        if unknown:
            raise ValueError(f"Unknown calendar features {unknown}; choose from {MARK_FEATURES}")

    @classmethod
    def parse(cls, text: str) -> "MarkSpec":
        names = tuple(part.strip() for part in text.split(",") if part.strip())
        return cls(names)

    @property
    def F(self) -> int:
        return len(self.features)

    def __str__(self) -> str:
        return ",".join(self.features)


@dataclass
class SeriesDataset:
    """
    Z-scored multivariate series with its calendar and contiguous train/val/test split.

    ``values`` holds the series scaled with train-split statistics; ``raw_values``
    keeps the untouched input for export and fixture checks.
    """

    values: np.ndarray
    timestamps: pd.DatetimeIndex
    split_ratios: tuple[float, float, float]
    train_mean: np.ndarray
    train_std: np.ndarray
    name: str = "series"
    columns: list[str] = field(default_factory=list)
    raw_values: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def split_sizes(self) -> tuple[int, int, int]:
        return split_sizes(self.length, self.split_ratios)

    def split_bounds(self, split: str) -> tuple[int, int]:
        """Half-open [start, end) row range of a split."""
        if split not in SPLITS:
            raise ValueError(f"Unknown split '{split}', expected one of {SPLITS}")
        n_train, n_val, n_test = self.split_sizes()
        starts = {"train": 0, "val": n_train, "test": n_train + n_val}
        sizes = {"train": n_train, "val": n_val, "test": n_test}
        return starts[split], starts[split] + sizes[split]

    def split_values(self, split: str) -> np.ndarray:
        start, end = self.split_bounds(split)
        return self.values[start:end]


@dataclass
class WindowBatch:
    X: np.ndarray  # B x T x C
    Y: np.ndarray  # B x H x C
    x_marks: np.ndarray  # B x T x F
    y_marks: np.ndarray  # B x H x F
    t_end: np.ndarray  # B, absolute row index of the last input step

    @property
    def size(self) -> int:
        return self.X.shape[0]


def split_sizes(total: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(math.floor(total * ratios[0] + 1e-9))
    n_test = int(math.floor(total * ratios[2] + 1e-9))
    return n_train, total - n_train - n_test, n_test


def _zscore(raw: np.ndarray, n_train: int, columns: list[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    train = raw[:n_train]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    for c in np.flatnonzero(std < STD_GUARD):
        logging.warning(f"Channel '{columns[c]}' is constant on the train split; using std=1")
        std[c] = 1.0
    return (raw - mean) / std, mean, std


def build_dataset(
    raw: np.ndarray,
    timestamps: pd.DatetimeIndex,
    split_ratios: tuple[float, float, float],
    name: str,
    columns: list[str],
    min_split_rows: int = 1,
) -> SeriesDataset:
    raw = np.asarray(raw, dtype=np.float64)
    sizes = split_sizes(len(raw), split_ratios)
    for split, size in zip(SPLITS, sizes):
        if size < max(min_split_rows, 1):
            raise DataError(
                f"Split '{split}' of '{name}' has {size} rows; at least {max(min_split_rows, 1)} required"
            )
    values, mean, std = _zscore(raw, sizes[0], columns)
    return SeriesDataset(
        values=values,
        timestamps=timestamps,
        split_ratios=tuple(split_ratios),
        train_mean=mean,
        train_std=std,
        name=name,
        columns=list(columns),
        raw_values=raw,
    )


def load_csv(
    path: str | Path,
    timestamp_column: str = "date",
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    min_split_rows: int = 1,
    max_rows: int = 0,
) -> SeriesDataset:
    """
    Read a ``date`` + numeric-channel CSV (ETT/Electricity layout) and z-score it
    with train-split statistics.

    Args:
        path: CSV file
        timestamp_column: name of the timestamp column
        split_ratios: (train, val, test) fractions of the rows
        min_split_rows: smallest acceptable split, normally T + H
        max_rows: keep only the first rows (0 keeps all), as the ETT protocol does
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Data file not found: {path}")

    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if max_rows:
        df = df.iloc[:max_rows]
    if timestamp_column not in df.columns:
        raise DataError(f"Timestamp column '{timestamp_column}' not found in {path}")
    channel_columns = [c for c in df.columns if c != timestamp_column]
    if not channel_columns:
        raise DataError(f"No numeric channel columns in {path}")

    stamps = pd.to_datetime(df[timestamp_column], errors="coerce", format="ISO8601")
    bad = np.flatnonzero(stamps.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise DataError(
            f"Could not parse timestamp at row {row}, column '{timestamp_column}': {df[timestamp_column].iloc[row]!r}"
        )
    if not stamps.is_monotonic_increasing or stamps.duplicated().any():
        diffs = np.flatnonzero(np.diff(stamps.to_numpy().astype("datetime64[ns]").astype(np.int64)) <= 0)
        raise DataError(f"Timestamps are not strictly increasing at row {int(diffs[0]) + 1}")

    numeric = df[channel_columns].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    missing = numeric.isna().to_numpy()
    if missing.any():
        row, col = np.argwhere(missing)[0]
        raise DataError(
            f"Missing or non-numeric value at row {int(row)}, column '{channel_columns[col]}': "
            f"{df[channel_columns[col]].iloc[row]!r}"
        )

    ds = build_dataset(
        numeric.to_numpy(dtype=np.float64),
        pd.DatetimeIndex(stamps),
        split_ratios,
        name=path.stem,
        columns=channel_columns,
        min_split_rows=min_split_rows,
    )
    logging.info(
        f"Loaded '{ds.name}': {ds.length} rows x {ds.channels} channels, splits {ds.split_sizes()}"
    )
    return ds


def write_series_csv(ds: SeriesDataset, path: str | Path, raw: bool = True) -> None:
    """Write the series in the ``date`` + channels layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = ds.raw_values if raw and ds.raw_values is not None else ds.values
    df = pd.DataFrame(values, columns=ds.columns)
    df.insert(0, "date", ds.timestamps.strftime("%Y-%m-%d %H:%M:%S"))
    df.to_csv(path, index=False)


def calendar_features(timestamps: pd.DatetimeIndex, marks: MarkSpec) -> np.ndarray:
    """Calendar features in [-0.5, 0.5], one column per enabled mark (Monday = 0)."""
    ts = pd.DatetimeIndex(timestamps)
    columns = []
    for feature in marks.features:
        if feature == "MinuteOfHour":
            columns.append(ts.minute.to_numpy() / 59.0 - 0.5)
        elif feature == "HourOfDay":
            columns.append(ts.hour.to_numpy() / 23.0 - 0.5)
        elif feature == "DayOfWeek":
            columns.append(ts.dayofweek.to_numpy() / 6.0 - 0.5)
        elif feature == "DayOfMonth":
            columns.append((ts.day.to_numpy() - 1) / 30.0 - 0.5)
        elif feature == "DayOfYear":
            columns.append((ts.dayofyear.to_numpy() - 1) / 365.0 - 0.5)
    if not columns:
        return np.zeros((len(ts), 0))
    return np.stack(columns, axis=1).astype(np.float64)


def count_windows(split_length: int, T: int, H: int) -> int:
    return split_length - T - H + 1


def window_starts(ds: SeriesDataset, split: str, T: int, H: int) -> np.ndarray:
    start, end = ds.split_bounds(split)
    count = count_windows(end - start, T, H)
    if count < 1:
        raise DataError(
            f"T+H={T + H} exceeds the {split} split length {end - start} of '{ds.name}'"
        )
    return start + np.arange(count)


def _gather(ds: SeriesDataset, marks_matrix: np.ndarray, starts: np.ndarray, T: int, H: int) -> WindowBatch:
    x_index = starts[:, None] + np.arange(T)[None, :]
    y_index = starts[:, None] + T + np.arange(H)[None, :]
    return WindowBatch(
        X=ds.values[x_index],
        Y=ds.values[y_index],
        x_marks=marks_matrix[x_index],
        y_marks=marks_matrix[y_index],
        t_end=starts + T - 1,
    )


def make_windows(
    ds: SeriesDataset,
    split: str,
    T: int,
    H: int,
    marks: MarkSpec,
    batch_size: int,
    rng: Rng | None = None,
    shuffle: bool = False,
) -> Iterator[WindowBatch]:
    """
    Yield stride-1 (X, Y) windows of a split in batches.

    Without shuffling windows come in ascending start order; with shuffling the
    start indices are permuted by ``rng``.
    """
    starts = window_starts(ds, split, T, H)
    if shuffle:
        if rng is None:
            raise ValueError("Shuffled windows need an Rng")
        starts = starts[rng.permutation(len(starts))]
    marks_matrix = calendar_features(ds.timestamps, marks)
    for i in range(0, len(starts), batch_size):
        yield _gather(ds, marks_matrix, starts[i : i + batch_size], T, H)


def window_at(ds: SeriesDataset, split: str, T: int, H: int, marks: MarkSpec, index: int) -> WindowBatch:
    starts = window_starts(ds, split, T, H)
    if not 0 <= index < len(starts):
        raise DataError(f"Window index {index} out of range for {len(starts)} {split} windows")
    return _gather(ds, calendar_features(ds.timestamps, marks), starts[index : index + 1], T, H)


# ----------------------------------------
# Period detection
# ----------------------------------------


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """r(l) = sum (x_t - mu)(x_{t+l} - mu) / ((n - l) * var) for l = 0..max_lag."""
    x = series - series.mean()
    var = x.var()
    n = len(x)
    return np.array([np.dot(x[: n - lag], x[lag:]) / ((n - lag) * var) for lag in range(max_lag + 1)])


def detect_period_acf(ds: SeriesDataset, max_lag: int) -> int:
    """
    Global period W from the channel-averaged ACF of the train split.

    W is the smallest lag in [2, max_lag] that is a strict local maximum above
    half the largest ACF value in that range; the global argmax is the fallback.
    """
    train = ds.split_values("train")
    if len(train) <= 2 * max_lag:
        raise DataError(f"Train split ({len(train)} rows) must be longer than 2*max_lag={2 * max_lag}")
    varying = [c for c in range(train.shape[1]) if train[:, c].std() > STD_GUARD]
    if not varying:
        raise DataError(f"All channels of '{ds.name}' are constant; no period can be detected")

    acf = np.mean([autocorrelation(train[:, c], max_lag + 1) for c in varying], axis=0)
    window = acf[2 : max_lag + 1]
    threshold = 0.5 * window.max()
    for lag in range(2, max_lag + 1):
        if acf[lag] > acf[lag - 1] and acf[lag] > acf[lag + 1] and acf[lag] > threshold:
            logging.info(f"ACF period detected for '{ds.name}': W={lag} (r={acf[lag]:.3f})")
            return lag
    lag = int(np.argmax(window)) + 2
    logging.warning(f"No qualifying ACF peak for '{ds.name}'; falling back to global argmax W={lag}")
    return lag


# ----------------------------------------
# Synthetic data
# ----------------------------------------


def synth_deterministic(T_total: int, C: int, W1: int, trend_slope: float) -> np.ndarray:
    t = np.arange(T_total, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * np.arange(C)[None, :] / C
    return trend_slope * t + np.sin(2.0 * np.pi * t / W1 + phase)


def synth_seasonal_hetero(
    rng: Rng,
    T_total: int,
    C: int,
    W1: int,
    W2: int,
    trend_slope: float,
    noise_base: float,
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> SeriesDataset:
    """Trend + per-channel phase-shifted seasonality + noise whose scale cycles with period W2."""
    if T_total < 4 * max(W1, W2):
        raise ValueError(f"T_total={T_total} must be at least 4*max(W1, W2)={4 * max(W1, W2)}")
    t = np.arange(T_total, dtype=np.float64)[:, None]
    scale = noise_base * (1.0 + 0.5 * np.sin(2.0 * np.pi * t / W2))
    raw = synth_deterministic(T_total, C, W1, trend_slope) + scale * rng.normal(size=(T_total, C))
    timestamps = pd.date_range(SYNTH_EPOCH, periods=T_total, freq="h")
    columns = [f"ch{c}" for c in range(C)]
    return build_dataset(raw, timestamps, split_ratios, name="synth_seasonal_hetero", columns=columns)
