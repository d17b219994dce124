import configparser
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Unknown config key, unknown section or unparseable value."""


@dataclass(frozen=True)
class Flags:
    use_anchor: bool = True
    use_router: bool = True
    use_sam: bool = True
    statistic_aware: bool = True


@dataclass(frozen=True)
class TrainConfig:
    # [data]
    timestamp_column: str = "date"
    split_train: float = 0.7
    split_val: float = 0.1
    split_test: float = 0.2
    marks: str = "HourOfDay"
    max_rows: int = 0
    acf_max_lag: int = 200
    # [model]
    T: int = 96
    H: int = 96
    W: int = 24  # 0 means detect with ACF
    L: int = 24
    P: int = 24
    d_router: int = 16
    d_backbone: int = 512
    d_t: int = 16
    backbone: str = "mlp"
    dropout: float = 0.1
    swap_stage1: bool = False
    affine: bool = False
    # [train]
    lr: float = 0.005
    epochs: int = 30
    patience: int = 5
    batch_size: int = 32
    alpha: float = 0.15
    seed: int = 2024
    per_sample_lambda: bool = False
    clip_norm: float = 0.0
    eval_workers: int = 1
    max_batches: int = 0  # 0 means the full epoch
    # [flags]
    flags: Flags = field(default_factory=Flags)

    @property
    def split_ratios(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)

    def with_flags(self, **changes) -> "TrainConfig":
        return replace(self, flags=replace(self.flags, **changes))

    def validate(self) -> "TrainConfig":
        positive = ["T", "H", "L", "P", "d_router", "d_backbone", "d_t", "epochs", "batch_size", "eval_workers"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"'{name}' must be positive, got {getattr(self, name)}")
        if self.W < 0:
            raise ConfigError(f"'W' must be positive or 'auto', got {self.W}")
        if self.lr <= 0 or self.alpha <= 0:
            raise ConfigError("'lr' and 'alpha' must be positive")
        if self.patience < 0:
            raise ConfigError("'patience' must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"'dropout' must be in [0, 1), got {self.dropout}")
        total = self.split_train + self.split_val + self.split_test
        if min(self.split_ratios) <= 0 or abs(total - 1.0) > 1e-9:
            raise ConfigError(f"Split ratios must be positive and sum to 1, got {self.split_ratios}")
        if self.backbone not in ("mlp", "linear"):
            raise ConfigError(f"Unknown backbone '{self.backbone}' (expected 'mlp' or 'linear')")
        return self


SECTIONS: dict[str, tuple[str, ...]] = {
    "data": ("preset", "timestamp_column", "split_train", "split_val", "split_test", "marks", "max_rows", "acf_max_lag"),
    "model": ("T", "H", "W", "L", "P", "d_router", "d_backbone", "d_t", "backbone", "dropout", "swap_stage1", "affine"),
    "train": (
        "lr", "epochs", "patience", "batch_size", "alpha", "seed",
        "per_sample_lambda", "clip_norm", "eval_workers", "max_batches",
    ),
    "flags": tuple(f.name for f in fields(Flags)),
}

# Dataset defaults: period W, split ratios, standard row cap, batch size, calendar marks
DATASET_PRESETS: dict[str, dict] = {
    "ETTh1": dict(W=24, split=(0.6, 0.2, 0.2), max_rows=14400, batch_size=256, marks="HourOfDay"),
    "ETTh2": dict(W=24, split=(0.6, 0.2, 0.2), max_rows=14400, batch_size=256, marks="HourOfDay"),
    "ETTm1": dict(W=96, split=(0.6, 0.2, 0.2), max_rows=57600, batch_size=256, marks="MinuteOfHour,HourOfDay"),
    "ETTm2": dict(W=96, split=(0.6, 0.2, 0.2), max_rows=57600, batch_size=256, marks="MinuteOfHour,HourOfDay"),
    "Electricity": dict(W=168, split=(0.7, 0.1, 0.2), max_rows=0, batch_size=64, marks="HourOfDay,DayOfWeek"),
    "Solar": dict(W=144, split=(0.7, 0.1, 0.2), max_rows=0, batch_size=64, marks="MinuteOfHour,HourOfDay"),
    "Traffic": dict(W=168, split=(0.7, 0.1, 0.2), max_rows=0, batch_size=64, marks="HourOfDay,DayOfWeek"),
    "Weather": dict(W=144, split=(0.7, 0.1, 0.2), max_rows=0, batch_size=256, marks="MinuteOfHour,HourOfDay"),
}


def apply_preset(cfg: TrainConfig, name: str) -> TrainConfig:
    if name not in DATASET_PRESETS:
        raise ConfigError(f"Unknown dataset preset '{name}'. Known: {', '.join(DATASET_PRESETS)}")
    p = DATASET_PRESETS[name]
    train, val, test = p["split"]
    return replace(
        cfg,
        W=p["W"],
        L=p["W"],
        split_train=train,
        split_val=val,
        split_test=test,
        max_rows=p["max_rows"],
        batch_size=p["batch_size"],
        marks=p["marks"],
    )


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            if name == "W" and raw.lower() == "auto":
                return 0
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"Invalid value for '{name}': {raw!r}") from None


def parse_config(text: str, source: str = "<string>") -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (T, H, W, ...)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"Could not parse config {source}: {e}") from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"Unknown config section [{section}] in {source}")
        for key in parser[section]:
            if key not in SECTIONS[section]:
                raise ConfigError(f"Unknown key '{key}' in section [{section}] of {source}")

    cfg = TrainConfig()
    if parser.has_option("data", "preset"):
        cfg = apply_preset(cfg, parser.get("data", "preset").strip())

    defaults = asdict(TrainConfig())
    top_changes = {}
    flag_changes = {}
    for section, keys in SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if key == "preset" or not parser.has_option(section, key):
                continue
            raw = parser.get(section, key)
            if section == "flags":
                flag_changes[key] = _coerce(key, raw, defaults["flags"][key])
            else:
                top_changes[key] = _coerce(key, raw, defaults[key])
    cfg = replace(cfg, **top_changes)
    if flag_changes:
        cfg = cfg.with_flags(**flag_changes)
    return cfg.validate()


def load_config(path: str | Path | None) -> TrainConfig:
    """Read an INI config; None gives the defaults. PULSE_SEED overrides the seed."""
    if path is None:
        cfg = TrainConfig()
    else:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file not found: {path}")
        cfg = parse_config(path.read_text(encoding="utf-8"), source=str(path))
    env_seed = os.environ.get("PULSE_SEED")
    if env_seed:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"PULSE_SEED must be an integer, got {env_seed!r}") from None
        logging.info(f"Seed overridden by PULSE_SEED: {cfg.seed}")
    return cfg.validate()


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    flags = Flags(**data.pop("flags", {}))
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
    return TrainConfig(flags=flags, **data).validate()


def config_to_ini(cfg: TrainConfig) -> str:
    values = asdict(cfg)
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            if key == "preset":
                continue
            value = values["flags"][key] if section == "flags" else values[key]
            if key == "W" and value == 0:
                value = "auto"
            lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: TrainConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
