"""
Statistic-aware mixup.

Mixed samples keep the residual decoding statistics of their parents by
interpolating (mu_R, sigma_R) directly instead of re-estimating them from the
mixed waveform, whose scale can collapse when the two residuals are anti-correlated.
"""

from dataclasses import dataclass

import numpy as np

from .config import Flags
from .norm import NormState
from .numerics import DiffTensor, Rng, add, gather_rows, mean_std, mul, sample_beta, sub


@dataclass(frozen=True)
class MixPlan:
    lam: float | np.ndarray  # scalar, or one value per sample with per-sample mixing
    perm: np.ndarray
    enabled: bool = True
    statistic_aware: bool = True

    @property
    def is_identity(self) -> bool:
        return not self.enabled or bool(np.all(np.asarray(self.lam) == 1.0))

    @property
    def lam_min(self) -> float:
        return float(np.min(self.lam))


@dataclass
class MixedBatch:
    x_tilde: DiffTensor
    A_x: DiffTensor
    enc_y: DiffTensor
    mu: DiffTensor
    sigma: DiffTensor
    Y: DiffTensor


def make_plan(rng: Rng, batch_size: int, alpha: float, flags: Flags, per_sample: bool = False) -> MixPlan:
    """Permutation first, then lambda ~ Beta(alpha, alpha); disabled plans are the identity."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not flags.use_sam:
        return MixPlan(lam=1.0, perm=np.arange(batch_size), enabled=False, statistic_aware=flags.statistic_aware)
    perm = rng.permutation(batch_size)
    if per_sample:
        lam = np.array([sample_beta(rng, alpha, alpha) for _ in range(batch_size)])
    else:
        lam = sample_beta(rng, alpha, alpha)
    return MixPlan(lam=lam, perm=perm, enabled=True, statistic_aware=flags.statistic_aware)


def _lam_tensor(plan: MixPlan, ndim: int) -> DiffTensor:
    lam = np.asarray(plan.lam, dtype=np.float64)
    if lam.ndim == 1:
        lam = lam.reshape((-1,) + (1,) * (ndim - 1))
    return DiffTensor(lam)


def mix(plan: MixPlan, q: DiffTensor) -> DiffTensor:
    """lam * q + (1 - lam) * q[perm] along the batch axis, written as q[perm] + lam * (q - q[perm])."""
    if plan.is_identity:
        return q
    if len(plan.perm) != q.shape[0]:
        raise ValueError(f"Mix plan covers {len(plan.perm)} samples, tensor has shape {q.shape}")
    partner = gather_rows(q, plan.perm)
    return add(partner, mul(_lam_tensor(plan, q.ndim), sub(q, partner)))


def mix_batch(
    plan: MixPlan, x_tilde: DiffTensor, A_x: DiffTensor, enc_y: DiffTensor, state: NormState, Y: DiffTensor
) -> MixedBatch:
    if x_tilde.shape != A_x.shape or enc_y.shape != Y.shape or x_tilde.shape[0] != Y.shape[0]:
        raise ValueError(
            f"mix_batch shape mismatch: x_tilde {x_tilde.shape}, A_x {A_x.shape}, enc_y {enc_y.shape}, Y {Y.shape}"
        )
    return MixedBatch(
        x_tilde=mix(plan, x_tilde),
        A_x=mix(plan, A_x),
        enc_y=mix(plan, enc_y),
        mu=mix(plan, state.mu_R),
        sigma=mix(plan, state.sigma_R),
        Y=mix(plan, Y),
    )


def naive_mix_stats(x_mix: DiffTensor, a_x_mix: DiffTensor) -> tuple[DiffTensor, DiffTensor]:
    """Statistics re-estimated over time from the mixed residual waveform x_mix - a_x_mix."""
    if x_mix.shape != a_x_mix.shape:
        raise ValueError(f"naive_mix_stats shape mismatch: {x_mix.shape} vs {a_x_mix.shape}")
    return mean_std(sub(x_mix, a_x_mix), axis=1)


def collapse_ratio(sigma_i: float, sigma_j: float, rho: float, lam: float) -> float:
    """(sigma_naive / sigma_mix)^2 for two residuals with correlation rho."""
    if sigma_i <= 0 or sigma_j <= 0:
        raise ValueError(f"sigma_i and sigma_j must be positive, got ({sigma_i}, {sigma_j})")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    interpolated = lam * sigma_i + (1.0 - lam) * sigma_j
    return 1.0 - 2.0 * lam * (1.0 - lam) * sigma_i * sigma_j * (1.0 - rho) / interpolated**2
