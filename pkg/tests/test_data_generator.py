import os
import argparse
import logging

import numpy as np
import pandas as pd


def generate_ett_like_csv(output_path, rows=720, channels=3, period=24, trend=0.002, noise=0.1, seed=7):
    """
    Write a small hourly CSV in the ETT layout (``date`` + numeric channels).

    Channel c is a sine with period ``period`` shifted by 2*pi*c/channels, plus a
    linear trend and Gaussian noise.

    Args:
        output_path: Path where the CSV file will be saved
        rows: Number of hourly rows
        channels: Number of numeric channels
        period: Seasonal period in rows
        trend: Slope of the linear trend per row
        noise: Standard deviation of the additive noise
        seed: Seed for the noise generator
    """
    rng = np.random.default_rng(seed)
    t = np.arange(rows, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * np.arange(channels)[None, :] / channels
    values = trend * t + np.sin(2.0 * np.pi * t / period + phase) + noise * rng.normal(size=(rows, channels))

    df = pd.DataFrame(values, columns=[f"ch{c}" for c in range(channels)])
    df.insert(0, "date", pd.date_range("2016-07-01", periods=rows, freq="h").strftime("%Y-%m-%d %H:%M:%S"))

    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(output_path, index=False)

    # Return stats for verification
    return {
        "rows": rows,
        "channels": channels,
        "columns": list(df.columns),
        "means": df.iloc[:, 1:].mean().to_dict(),
    }


def generate_broken_csv(output_path, problem="missing", rows=48):
    """A fixture with one defect: ``missing`` value, ``bad_date`` or ``unsorted`` timestamps."""
    generate_ett_like_csv(output_path, rows=rows, channels=2)
    df = pd.read_csv(output_path, dtype=str)
    if problem == "missing":
        df.loc[5, "ch1"] = ""
    elif problem == "bad_date":
        df.loc[3, "date"] = "not-a-date"
    elif problem == "unsorted":
        df.loc[[10, 11], "date"] = df.loc[[11, 10], "date"].to_numpy()
    else:
        raise ValueError(f"Unknown problem '{problem}'")
    df.to_csv(output_path, index=False)
    return problem


def etth1_path():
    """Public ETTh1 CSV from PULSE_ETTH1_CSV or tests/test_data/ETTh1.csv, None when absent."""
    candidate = os.environ.get("PULSE_ETTH1_CSV") or os.path.join(os.path.dirname(os.path.abspath(__file__)), "test_data", "ETTh1.csv")
    if not os.path.isfile(candidate):
        logging.warning(f"ETTh1 CSV not found at {candidate}; reference-value tests are skipped")
        return None
    return candidate


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Generate sample series data for testing")
    parser.add_argument("--output", type=str, default="./test_data/sample_series.csv", help="Path to save the generated CSV file")
    parser.add_argument("--rows", type=int, default=720, help="Number of hourly rows")
    parser.add_argument("--channels", type=int, default=3, help="Number of channels")

    args = parser.parse_args()
    stats = generate_ett_like_csv(args.output, args.rows, args.channels)

    print("\nSummary of generated data:")
    print(f"Rows: {stats['rows']}")
    print(f"Columns: {', '.join(stats['columns'])}")
