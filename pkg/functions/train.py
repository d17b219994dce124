import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import TrainConfig
from .data import MarkSpec, SeriesDataset, WindowBatch, make_windows
from .model import PulseModel
from .norm import denorm_with_stats, disentangle_normalize
from .numerics import (
    DiffTensor,
    NonFiniteError,
    Rng,
    Tape,
    complex_modulus,
    mean,
    rdft,
    sub,
    transpose,
    zero_grads,
)
from .sam import MixPlan, make_plan, mix, mix_batch, naive_mix_stats

SHUFFLE_STREAM = 2
MIXUP_STREAM = 3
MODULUS_EPS = 1e-12


# ----------------------------------------
# Loss
# ----------------------------------------


def freq_mae(pred: DiffTensor, target: DiffTensor) -> DiffTensor:
    """
    Mean over (batch, channel, bin) of the DFT-modulus error along the horizon.

    The modulus is sqrt(re^2 + im^2 + 1e-12); sqrt(1e-12) is subtracted per bin
    so the loss is exactly 0 when pred equals target.
    """
    if pred.shape != target.shape:
        raise ValueError(f"freq_mae shape mismatch: {pred.shape} vs {target.shape}")
    re, im = rdft(transpose(sub(pred, target), (0, 2, 1)))
    modulus = complex_modulus(re, im, eps=MODULUS_EPS)
    return mean(sub(modulus, np.sqrt(MODULUS_EPS)))


# ----------------------------------------
# Optimizer
# ----------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def adam_step(
    params: Sequence[DiffTensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int | None = None,
) -> None:
    """Bias-corrected Adam update in place; parameters without a gradient are left alone."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(f"Adam got {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    state.t = state.t + 1 if t is None else t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"Adam shape mismatch for parameter {i}: {p.shape}, grad {g.shape}")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        m_hat = state.m[i] / (1 - beta1**state.t)
        v_hat = state.v[i] / (1 - beta2**state.t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: Sequence[DiffTensor], lr: float, clip_norm: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.clip_norm = clip_norm
        self.state = AdamState(m=[np.zeros_like(p.values) for p in self.params], v=[np.zeros_like(p.values) for p in self.params])

    def zero_grad(self) -> None:
        zero_grads(self.params)

    def step(self) -> float:
        """Clip (when enabled), update, and return the pre-clip gradient norm."""
        norm = global_grad_norm(self.params)
        if self.clip_norm > 0:
            clip_global_norm(self.params, self.clip_norm)
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)
        return norm


def global_grad_norm(params: Iterable[DiffTensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))


def clip_global_norm(params: Sequence[DiffTensor], max_norm: float) -> float:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ----------------------------------------
# Training step
# ----------------------------------------


def batch_loss(model: PulseModel, batch: WindowBatch, plan: MixPlan, trace: dict | None = None) -> DiffTensor:
    """Forward pass of one training batch with mixup; fills ``trace`` with lambda and min sigma."""
    trace = {} if trace is None else trace
    trace["lambda"] = plan.lam_min
    X = DiffTensor(batch.X)
    anchors = model.anchors(batch)
    x_tilde, state = disentangle_normalize(X, anchors.A_x, affine=model.affine)
    future = model.future_inputs(anchors, DiffTensor(batch.y_marks))
    mixed = mix_batch(plan, x_tilde, anchors.A_x, future, state, DiffTensor(batch.Y))
    mu, sigma = mixed.mu, mixed.sigma
    if plan.enabled and not plan.statistic_aware:
        mu, sigma = naive_mix_stats(mix(plan, X), mixed.A_x)
    trace["sigma_min"] = float(sigma.values.min())
    Y0 = model.backbone(mixed.x_tilde)
    A_y = model.future_anchor(mixed.A_x, Y0, mixed.enc_y)
    prediction = denorm_with_stats(Y0, A_y, mu, sigma, affine=model.affine)
    return freq_mae(prediction, mixed.Y)


def train_epoch(
    model: PulseModel,
    loader: Iterable[WindowBatch],
    plan_source: Callable[[int], MixPlan],
    optimizer: Adam,
    cfg: TrainConfig,
    epoch: int = 0,
) -> float:
    """One pass over ``loader``; returns the mean batch loss."""
    model.train()
    losses = []
    for index, batch in enumerate(tqdm(loader, desc=f"Epoch {epoch + 1}", unit="batch", leave=False)):
        if cfg.max_batches and index >= cfg.max_batches:
            break
        plan = plan_source(batch.size)
        trace: dict = {}
        optimizer.zero_grad()
        try:
            with Tape() as tape:
                loss = batch_loss(model, batch, plan, trace)
            if not np.isfinite(loss.values):
                raise NonFiniteError(f"loss is {loss.values.item()}")
            tape.backward(loss)
            if any(p.grad is not None and not np.isfinite(p.grad).all() for p in optimizer.params):
                raise NonFiniteError("gradient is not finite")
        except NonFiniteError as e:
            raise NonFiniteError(
                f"Non-finite training step at batch {index} "
                f"(lambda={trace.get('lambda', float('nan')):.6g}, "
                f"min sigma_mix={trace.get('sigma_min', float('nan')):.6g}): {e}"
            ) from e
        optimizer.step()
        losses.append(loss.values.item())
    if not losses:
        raise ValueError("Training loader produced no batches")
    return float(np.mean(losses))


# ----------------------------------------
# Evaluation
# ----------------------------------------


def predict_batch(model: PulseModel, batch: WindowBatch) -> np.ndarray:
    return model.forecast(batch).prediction.values


def predict(model: PulseModel, batches: Sequence[WindowBatch], workers: int = 1) -> list[np.ndarray]:
    """Forecasts per batch, in batch order; forward passes may run on a thread pool."""
    model.eval()
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda b: predict_batch(model, b), batches))
    return [predict_batch(model, b) for b in batches]


def evaluate(model: PulseModel, batches: Sequence[WindowBatch], workers: int = 1) -> tuple[float, float]:
    """(MSE, MAE) over every element of every window, reduced in window order."""
    batches = list(batches)
    if not batches:
        raise ValueError("Cannot evaluate on an empty loader")
    predictions = predict(model, batches, workers)
    squared = 0.0
    absolute = 0.0
    count = 0
    for batch, pred in zip(batches, predictions):
        diff = pred - batch.Y
        squared += float(np.sum(diff * diff))
        absolute += float(np.sum(np.abs(diff)))
        count += diff.size
    return squared / count, absolute / count


# ----------------------------------------
# Fit
# ----------------------------------------


@dataclass
class FitResult:
    history: pd.DataFrame
    best_epoch: int
    best_val_mse: float
    stopped_early: bool
    best_params: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def snapshot(model: PulseModel) -> dict[str, np.ndarray]:
    return {name: p.values.copy() for name, p in model.named_parameters().items()}


def restore(model: PulseModel, params: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters().items():
        p.values[...] = params[name]


def fit(model: PulseModel, ds: SeriesDataset, cfg: TrainConfig, marks: MarkSpec) -> FitResult:
    """
    Train with early stopping on validation MSE and restore the best parameters.

    Returns the per-epoch history (epoch, train_loss, val_mse, val_mae).
    """
    shuffle_rng = Rng(cfg.seed, SHUFFLE_STREAM)
    mix_rng = Rng(cfg.seed, MIXUP_STREAM)
    optimizer = Adam(model.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    val_batches = list(make_windows(ds, "val", cfg.T, cfg.H, marks, cfg.batch_size))

    def plan_source(size: int) -> MixPlan:
        return make_plan(mix_rng, size, cfg.alpha, cfg.flags, per_sample=cfg.per_sample_lambda)

    rows = []
    best_mse = float("inf")
    best_epoch = -1
    best_params = snapshot(model)
    stale = 0
    stopped_early = False
    for epoch in range(cfg.epochs):
        loader = make_windows(ds, "train", cfg.T, cfg.H, marks, cfg.batch_size, rng=shuffle_rng, shuffle=True)
        train_loss = train_epoch(model, loader, plan_source, optimizer, cfg, epoch)
        val_mse, val_mae = evaluate(model, val_batches, workers=cfg.eval_workers)
        rows.append({"epoch": epoch + 1, "train_loss": train_loss, "val_mse": val_mse, "val_mae": val_mae})
        logging.info(f"Epoch {epoch + 1}/{cfg.epochs}: train loss {train_loss:.6f}, val MSE {val_mse:.6f}, val MAE {val_mae:.6f}")

        if val_mse < best_mse:
            best_mse = val_mse
            best_epoch = epoch + 1
            best_params = snapshot(model)
            stale = 0
        else:
            stale += 1
            if stale >= max(cfg.patience, 1):
                logging.info(f"Early stopping after epoch {epoch + 1} (best epoch {best_epoch})")
                stopped_early = True
                break

    restore(model, best_params)
    model.eval()
    history = pd.DataFrame(rows, columns=["epoch", "train_loss", "val_mse", "val_mae"])
    return FitResult(
        history=history, best_epoch=best_epoch, best_val_mse=best_mse, stopped_early=stopped_early, best_params=best_params
    )
