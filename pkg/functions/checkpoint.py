"""
Checkpoint file layout:

    b"PULSE1" | uint64 little-endian header length | UTF-8 JSON header | payload

The header carries the effective config, the data shape (channels, marks, period),
the float width and a manifest of (name, shape, offset, nbytes) per parameter.
The payload is the raw little-endian parameter values in manifest order.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, config_from_dict, config_hash, config_to_dict
from .model import PulseModel

MAGIC = b"PULSE1"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")
_DTYPES = {8: np.dtype("<f8"), 4: np.dtype("<f4")}


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint file."""


def _build_header(model: PulseModel, float_width: int) -> tuple[dict, list[np.ndarray]]:
    dtype = _DTYPES[float_width]
    manifest = []
    chunks = []
    offset = 0
    for name, p in model.named_parameters().items():
        data = np.ascontiguousarray(p.values, dtype=dtype)
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": data.nbytes})
        chunks.append(data)
        offset += data.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(model.cfg),
        "config_hash": config_hash(model.cfg),
        "channels": model.C,
        "n_marks": model.F,
        "W": model.W,
        "float_width": float_width,
        "payload_bytes": offset,
        "manifest": manifest,
    }
    return header, chunks


def checkpoint_bytes(model: PulseModel, float32: bool = False) -> bytes:
    header, chunks = _build_header(model, 4 if float32 else 8)
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, _LENGTH.pack(len(encoded)), encoded] + [c.tobytes() for c in chunks])


def save_checkpoint(model: PulseModel, path: str | Path, float32: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model, float32=float32))
    logging.info(f"Checkpoint written: {path} ({'float32' if float32 else 'float64'})")
    return path


def read_header(blob: bytes) -> tuple[dict, memoryview]:
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"Bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    start = len(MAGIC) + _LENGTH.size
    if len(blob) < start:
        raise CheckpointError("Checkpoint ends inside the header length field")
    (length,) = _LENGTH.unpack_from(blob, len(MAGIC))
    if len(blob) < start + length:
        raise CheckpointError(f"Header declares {length} bytes but only {len(blob) - start} remain")
    try:
        header = json.loads(blob[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint header is not valid JSON: {e}") from None
    return header, memoryview(blob)[start + length :]


def checkpoint_from_bytes(blob: bytes) -> PulseModel:
    """Validate the whole file against its manifest before building the model."""
    header, payload = read_header(blob)
    width = header.get("float_width")
    if width not in _DTYPES:
        raise CheckpointError(f"Unsupported float width {width!r}")
    dtype = _DTYPES[width]
    manifest = header.get("manifest", [])
    expected = sum(entry["nbytes"] for entry in manifest)
    if len(payload) != expected or header.get("payload_bytes") != expected:
        raise CheckpointError(f"Payload length {len(payload)} does not match manifest total {expected}")

    try:
        cfg = config_from_dict(header["config"])
    except (ConfigError, KeyError, TypeError) as e:
        raise CheckpointError(f"Checkpoint config is invalid: {e}") from None
    model = PulseModel(cfg, header["channels"], header["n_marks"], W=header["W"])
    params = model.named_parameters()

    arrays = {}
    offset = 0
    for entry in manifest:
        name = entry["name"]
        if name not in params:
            raise CheckpointError(f"Unknown parameter '{name}' in checkpoint")
        shape = tuple(entry["shape"])
        if shape != params[name].shape:
            raise CheckpointError(f"Parameter '{name}' has shape {shape}, model expects {params[name].shape}")
        if entry["offset"] != offset or entry["nbytes"] != int(np.prod(shape)) * dtype.itemsize:
            raise CheckpointError(f"Manifest entry for '{name}' has inconsistent offset or size")
        arrays[name] = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
        offset += entry["nbytes"]
    missing = set(params) - set(arrays)
    if missing:
        raise CheckpointError(f"Checkpoint is missing parameters: {sorted(missing)}")

    for name, values in arrays.items():
        params[name].values[...] = values.astype(np.float64)
    model.checkpoint_float_width = width
    return model.eval()


def load_checkpoint(path: str | Path) -> PulseModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    model = checkpoint_from_bytes(path.read_bytes())
    logging.info(f"Checkpoint loaded: {path}")
    return model
