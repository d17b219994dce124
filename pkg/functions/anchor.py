"""
Phase anchors: a learnable codebook indexed by global phase plus a calendar encoder.

Windows are stored oldest-first while the retrieval index counts steps backwards
from the window end, so window row h uses backward offset T-1-h.
"""

from dataclasses import dataclass

import numpy as np

from .layers import Linear, Module, parameter
from .numerics import (
    DiffTensor,
    NonFiniteError,
    Rng,
    add,
    gather_rows,
    gelu,
    matmul,
    pad,
    reshape,
    take_slice,
)

CONV_KERNEL = 3


class Codebook(Module):
    def __init__(self, L: int, C: int):
        if L < 1:
            raise ValueError(f"Codebook size L must be >= 1, got {L}")
        self.L = L
        self.C = C
        # zero start: training begins in the plain RevIN regime
        self.M = parameter(np.zeros((L, C)), name="M")


class TimeEncoder(Module):
    """Linear-GELU-Linear projection, kernel-3 convolution along time, then a linear adapter to C."""

    def __init__(self, F: int, C: int, d_t: int, rng: Rng):
        self.F = F
        self.C = C
        self.d_t = d_t
        self.mlp_in = Linear(F, d_t, rng)
        self.mlp_out = Linear(d_t, d_t, rng)
        bound = 1.0 / np.sqrt(CONV_KERNEL * d_t)
        self.conv_weight = parameter(rng.uniform(-bound, bound, size=(CONV_KERNEL, d_t, d_t)))
        self.conv_bias = parameter(np.zeros(d_t))
        self.adapter = Linear(d_t, C, rng)


@dataclass
class AnchorOutputs:
    """A_x plus the future anchor whenever no router generates it (None when one does)."""

    A_x: DiffTensor
    A_y_fallback: DiffTensor | None = None

    def __post_init__(self):
        if self.A_x.ndim != 3:
            raise ValueError(f"A_x must be (B, T, C), got {self.A_x.shape}")
        if not np.isfinite(self.A_x.values).all():
            raise NonFiniteError("history anchor is not finite")
        fallback = self.A_y_fallback
        if fallback is not None and (fallback.ndim != 3 or fallback.shape[::2] != self.A_x.shape[::2]):
            raise ValueError(f"A_y_fallback {fallback.shape} does not match A_x {self.A_x.shape}")


def phase_index(t_end, h, W: int, L: int):
    """((t_end mod W) - h) mod L; works on ints and integer arrays."""
    if W < 1 or L < 1:
        raise ValueError(f"W and L must be >= 1, got W={W}, L={L}")
    result = ((np.asarray(t_end, dtype=np.int64) % W) - np.asarray(h, dtype=np.int64)) % L
    return int(result) if np.ndim(result) == 0 else result


def history_indices(t_end: np.ndarray, T: int, W: int, L: int) -> np.ndarray:
    """B x T codebook rows for windows ending at ``t_end`` (row h uses offset T-1-h)."""
    offsets = (T - 1 - np.arange(T))[None, :]
    return phase_index(np.asarray(t_end, dtype=np.int64)[:, None], offsets, W, L)


def future_indices(t_end: np.ndarray, H: int, W: int, L: int) -> np.ndarray:
    """B x H codebook rows for the steps following ``t_end``."""
    steps = np.asarray(t_end, dtype=np.int64)[:, None] + 1 + np.arange(H)[None, :]
    return (steps % W) % L


def _conv_same(encoder: TimeEncoder, h: DiffTensor) -> DiffTensor:
    length = h.shape[-2]
    padded = pad(h, axis=-2, before=1, after=1)
    out = None
    for k in range(CONV_KERNEL):
        tap = reshape(gather_rows(encoder.conv_weight, np.array([k])), (encoder.d_t, encoder.d_t))
        term = matmul(take_slice(padded, -2, k, k + length), tap)
        out = term if out is None else add(out, term)
    return add(out, encoder.conv_bias)


def time_encode(encoder: TimeEncoder, marks: DiffTensor) -> DiffTensor:
    """(..., len, F) calendar marks -> (..., len, C)."""
    if marks.shape[-1] != encoder.F:
        raise ValueError(f"TimeEncoder expects {encoder.F} mark features, got shape {marks.shape}")
    h = encoder.mlp_out(gelu(encoder.mlp_in(marks)))
    return encoder.adapter(_conv_same(encoder, h))


def _check_batch(t_end: np.ndarray, marks: DiffTensor, encoder: TimeEncoder) -> None:
    if marks.ndim != 3 or marks.shape[0] != len(t_end):
        raise ValueError(f"Marks shape {marks.shape} does not match {len(t_end)} window end indices")
    if marks.shape[-1] != encoder.F:
        raise ValueError(f"Marks have {marks.shape[-1]} features, encoder expects {encoder.F}")


def build_history_anchor(
    codebook: Codebook, encoder: TimeEncoder, t_end: np.ndarray, x_marks: DiffTensor, W: int
) -> DiffTensor:
    """A_x[b, h] = M[idx(t_end[b], T-1-h)] + TimeEncoder(x_marks[b])[h]."""
    _check_batch(t_end, x_marks, encoder)
    index = history_indices(t_end, x_marks.shape[1], W, codebook.L)
    return add(gather_rows(codebook.M, index), time_encode(encoder, x_marks))


def build_future_anchor_lookup(
    codebook: Codebook, encoder: TimeEncoder, t_end: np.ndarray, y_marks: DiffTensor, W: int
) -> DiffTensor:
    """Copy codebook rows forward from the window end; the baseline the router replaces."""
    _check_batch(t_end, y_marks, encoder)
    index = future_indices(t_end, y_marks.shape[1], W, codebook.L)
    return add(gather_rows(codebook.M, index), time_encode(encoder, y_marks))
