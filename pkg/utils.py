import logging
import os
from pathlib import Path

import pandas as pd

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def setup_logging(level: str = "INFO") -> None:
    """Root logger with the project format; safe to call more than once."""
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level.upper()))


def format_header(fields: dict) -> str:
    return "# " + " ".join(f"{key}={str(value).replace(' ', '_')}" for key, value in fields.items())


def write_csv(df: pd.DataFrame, path: str | Path, header: dict) -> Path:
    """Write ``df`` as CSV preceded by a single ``# key=value ...`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_header(header) + "\n")
        df.to_csv(f, index=False, lineterminator="\n")
    logging.info(f"Wrote {len(df)} rows to {path}")
    return path


def read_csv(path: str | Path) -> tuple[dict, pd.DataFrame]:
    """Inverse of ``write_csv``: the header fields and the table."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
    header = {}
    if first.startswith("# "):
        for item in first[2:].split(" "):
            key, _, value = item.partition("=")
            header[key] = value
    return header, pd.read_csv(path, skiprows=1 if header else 0)


def env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")
