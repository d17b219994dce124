"""
Dual-stream predictor: a channel-independent backbone for the normalised residual
and the phase router that generates the future anchor.

Router tokens: each channel is front-padded to a multiple of P, cut into N patches
of length P and transposed to (P, N); a linear map N -> d then acts along the
patch-count axis. Token p therefore summarises position p of every patch, the
token count is always P, and the attention cost is independent of T and H.
"""

import math
from dataclasses import dataclass

import numpy as np

from .anchor import AnchorOutputs, Codebook, TimeEncoder, build_future_anchor_lookup, build_history_anchor, time_encode
from .config import TrainConfig
from .data import WindowBatch
from .layers import Linear, Module
from .norm import NormState, ResidualAffine, disentangle_normalize, generative_denorm
from .numerics import (
    DiffTensor,
    Rng,
    add,
    dropout,
    gelu,
    matmul,
    mul,
    pad,
    reshape,
    softmax,
    take_slice,
    transpose,
)

INIT_STREAM = 1
DROPOUT_STREAM = 4


# ----------------------------------------
# Backbones
# ----------------------------------------


class Backbone(Module):
    """(B, T, C) normalised input -> (B, H, C) latent future; T, H, C fixed at construction."""

    T: int
    H: int
    C: int

    def __call__(self, x_tilde: DiffTensor) -> DiffTensor:
        if x_tilde.ndim != 3 or x_tilde.shape[1:] != (self.T, self.C):
            raise ValueError(f"Backbone expects (B, {self.T}, {self.C}), got {x_tilde.shape}")
        channels_first = transpose(x_tilde, (0, 2, 1))
        return transpose(self.forward_channels(channels_first), (0, 2, 1))

    def forward_channels(self, x: DiffTensor) -> DiffTensor:
        raise NotImplementedError


class MlpBackbone(Backbone):
    """Shared per-channel MLP: Linear T->d_b, GELU, dropout, Linear d_b->H."""

    def __init__(self, T: int, H: int, C: int, d_b: int, dropout_rate: float, rng: Rng, dropout_rng: Rng | None = None):
        self.T, self.H, self.C = T, H, C
        self.dropout_rate = dropout_rate
        self.dropout_rng = dropout_rng
        self.hidden = Linear(T, d_b, rng)
        self.out = Linear(d_b, H, rng)

    def forward_channels(self, x: DiffTensor) -> DiffTensor:
        h = gelu(self.hidden(x))
        h = dropout(h, self.dropout_rate, self.dropout_rng, self.training)
        return self.out(h)


class LinearBackbone(Backbone):
    """Per-channel linear map T->H."""

    def __init__(self, T: int, H: int, C: int, rng: Rng):
        self.T, self.H, self.C = T, H, C
        self.proj = Linear(T, H, rng)

    def forward_channels(self, x: DiffTensor) -> DiffTensor:
        return self.proj(x)


def build_backbone(
    name: str, T: int, H: int, C: int, d_b: int, dropout_rate: float, rng: Rng, dropout_rng: Rng | None = None
) -> Backbone:
    if name == "mlp":
        return MlpBackbone(T, H, C, d_b, dropout_rate, rng, dropout_rng)
    if name == "linear":
        return LinearBackbone(T, H, C, rng)
    raise ValueError(f"Unknown backbone '{name}'")


def backbone_forward(backbone: Backbone, x_tilde: DiffTensor) -> DiffTensor:
    return backbone(x_tilde)


# ----------------------------------------
# Phase router
# ----------------------------------------


class AttentionBlock(Module):
    """Single-head cross attention, no residual and no normalisation."""

    def __init__(self, d: int, rng: Rng):
        self.d = d
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)


class PhaseRouter(Module):
    def __init__(self, T: int, H: int, P: int, d: int, rng: Rng, swap_stage1: bool = False):
        if P < 1 or d < 1:
            raise ValueError(f"Router needs P >= 1 and d >= 1, got P={P}, d={d}")
        self.T, self.H, self.P, self.d = T, H, P, d
        self.N_x = math.ceil(T / P)
        self.N_y = math.ceil(H / P)
        self.swap_stage1 = swap_stage1
        self.proj_x = Linear(self.N_x, d, rng)
        self.proj_y = Linear(self.N_y, d, rng)
        self.stage1 = AttentionBlock(d, rng)
        self.stage2 = AttentionBlock(d, rng)
        self.out_hidden = Linear(d, d, rng)
        self.out_proj = Linear(d, self.N_y, rng)


def tokenize(seq: DiffTensor, P: int, proj: Linear) -> DiffTensor:
    """(B, Len, C) -> (B*C, P, d) phase tokens."""
    B, length, C = seq.shape
    if length < 1:
        raise ValueError("tokenize needs a non-empty sequence")
    n = math.ceil(length / P)
    channels = transpose(seq, (0, 2, 1))
    channels = pad(channels, axis=2, before=n * P - length)
    patches = reshape(channels, (B * C, n, P))
    return proj(transpose(patches, (0, 2, 1)))


def cross_attention(q_in: DiffTensor, kv_in: DiffTensor, block: AttentionBlock) -> DiffTensor:
    """softmax(Q K^T / sqrt(d)) V with Q from ``q_in`` and K, V from ``kv_in``."""
    if q_in.shape[-1] != block.d or kv_in.shape[-1] != block.d:
        raise ValueError(f"Attention width {block.d} does not match inputs {q_in.shape}, {kv_in.shape}")
    q = block.w_q(q_in)
    k = block.w_k(kv_in)
    v = block.w_v(kv_in)
    scores = mul(matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))), 1.0 / math.sqrt(block.d))
    return matmul(softmax(scores, axis=-1), v)


def route(router: PhaseRouter, A_x: DiffTensor, Y0: DiffTensor, enc_y: DiffTensor) -> DiffTensor:
    """Generate A_y from the history anchor and the backbone latent, plus future calendar encoding."""
    B, H, C = Y0.shape
    if A_x.shape != (B, router.T, C) or enc_y.shape != Y0.shape or H != router.H:
        raise ValueError(f"route shape mismatch: A_x {A_x.shape}, Y0 {Y0.shape}, enc_y {enc_y.shape}")
    tokens_x = tokenize(A_x, router.P, router.proj_x)
    tokens_y = tokenize(Y0, router.P, router.proj_y)
    if router.swap_stage1:
        z = cross_attention(tokens_y, tokens_x, router.stage1)
    else:
        z = cross_attention(tokens_x, tokens_y, router.stage1)
    e = cross_attention(tokens_y, z, router.stage2)
    decoded = router.out_proj(gelu(router.out_hidden(e)))  # (B*C, P, N_y)
    flat = reshape(transpose(decoded, (0, 2, 1)), (B * C, router.N_y * router.P))
    trimmed = take_slice(flat, 1, router.N_y * router.P - H, router.N_y * router.P)
    generated = transpose(reshape(trimmed, (B, C, H)), (0, 2, 1))
    return add(generated, enc_y)


@dataclass(frozen=True)
class RouterOpCount:
    """Multiply-add counts of one channel's routing pass."""

    projection: int
    qkv: int
    attention_scores: int
    attention_values: int
    output: int

    @property
    def attention(self) -> int:
        return self.attention_scores + self.attention_values

    @property
    def total(self) -> int:
        return self.projection + self.qkv + self.attention + self.output


def count_router_ops(router: PhaseRouter, T: int, H: int) -> RouterOpCount:
    P, d = router.P, router.d
    n_x, n_y = math.ceil(T / P), math.ceil(H / P)
    return RouterOpCount(
        projection=P * n_x * d + P * n_y * d,
        qkv=2 * 3 * P * d * d,
        attention_scores=2 * P * P * d,
        attention_values=2 * P * P * d,
        output=P * d * d + P * d * n_y,
    )


# ----------------------------------------
# Full model
# ----------------------------------------


@dataclass
class Forecast:
    prediction: DiffTensor
    A_x: DiffTensor
    A_y: DiffTensor
    Y0: DiffTensor
    state: NormState


class PulseModel(Module):
    """Codebook, calendar encoder, backbone and router, shaped by a TrainConfig."""

    def __init__(self, cfg: TrainConfig, channels: int, n_marks: int, W: int | None = None):
        self.cfg = cfg
        self.C = channels
        self.F = n_marks
        self.W = W if W is not None else cfg.W
        if self.W < 1:
            raise ValueError("PulseModel needs a resolved period W >= 1")
        rng = Rng(cfg.seed, INIT_STREAM)
        self.codebook = Codebook(cfg.L, channels)
        self.encoder = TimeEncoder(n_marks, channels, cfg.d_t, rng)
        self.backbone = build_backbone(
            cfg.backbone, cfg.T, cfg.H, channels, cfg.d_backbone, cfg.dropout, rng, Rng(cfg.seed, DROPOUT_STREAM)
        )
        self.router = PhaseRouter(cfg.T, cfg.H, cfg.P, cfg.d_router, rng, swap_stage1=cfg.swap_stage1)
        # with M = 0 these make A_x = A_y = 0 at step 0, i.e. plain RevIN
        for layer in (self.encoder.adapter, self.router.out_proj):
            layer.weight.values[...] = 0.0
        self.affine = ResidualAffine(channels) if cfg.affine else None

    def parameter_groups(self) -> dict[str, dict[str, DiffTensor]]:
        groups = {}
        for group in ("codebook", "encoder", "backbone", "router", "affine"):
            module = getattr(self, group)
            if module is not None:
                groups[group] = module.named_parameters(prefix=f"{group}.")
        return groups

    def zeros(self, length: int, batch: int) -> DiffTensor:
        return DiffTensor(np.zeros((batch, length, self.C)))

    def anchors(self, batch: WindowBatch) -> AnchorOutputs:
        """History anchor; the fallback future anchor is the lookup without router and zeros without anchors."""
        B, T, H = batch.size, batch.x_marks.shape[1], batch.y_marks.shape[1]
        flags = self.cfg.flags
        if not flags.use_anchor:
            return AnchorOutputs(A_x=self.zeros(T, B), A_y_fallback=self.zeros(H, B))
        A_x = build_history_anchor(self.codebook, self.encoder, batch.t_end, DiffTensor(batch.x_marks), self.W)
        if flags.use_router:
            return AnchorOutputs(A_x=A_x)
        lookup = build_future_anchor_lookup(self.codebook, self.encoder, batch.t_end, DiffTensor(batch.y_marks), self.W)
        return AnchorOutputs(A_x=A_x, A_y_fallback=lookup)

    def future_inputs(self, anchors: AnchorOutputs, y_marks: DiffTensor) -> DiffTensor:
        """The fallback future anchor, or the calendar encoding the router adds to its output."""
        if anchors.A_y_fallback is not None:
            return anchors.A_y_fallback
        return time_encode(self.encoder, y_marks)

    def future_anchor(self, A_x: DiffTensor, Y0: DiffTensor, future_inputs: DiffTensor) -> DiffTensor:
        flags = self.cfg.flags
        if flags.use_anchor and flags.use_router:
            return route(self.router, A_x, Y0, future_inputs)
        return future_inputs

    def forecast(self, batch: WindowBatch) -> Forecast:
        """Inference path: anchor, residual normalisation, backbone, router, generative denorm."""
        X = DiffTensor(batch.X)
        anchors = self.anchors(batch)
        x_tilde, state = disentangle_normalize(X, anchors.A_x, affine=self.affine)
        Y0 = self.backbone(x_tilde)
        A_y = self.future_anchor(anchors.A_x, Y0, self.future_inputs(anchors, DiffTensor(batch.y_marks)))
        prediction = generative_denorm(Y0, A_y, state, affine=self.affine)
        return Forecast(prediction=prediction, A_x=anchors.A_x, A_y=A_y, Y0=Y0, state=state)
