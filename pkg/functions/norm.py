from dataclasses import dataclass

import numpy as np

from .layers import Module, parameter
from .numerics import EPS_VAR, DiffTensor, add, div, mean_std, mul, sub


@dataclass
class NormState:
    """Per-sample, per-channel residual statistics captured at normalisation time."""

    mu_R: DiffTensor  # B x 1 x C
    sigma_R: DiffTensor  # B x 1 x C
    eps_var: float = EPS_VAR


class ResidualAffine(Module):
    """Optional learnable (gamma, beta) on the normalised residual; off by default."""

    def __init__(self, C: int):
        self.gamma = parameter(np.ones(C))
        self.beta = parameter(np.zeros(C))


def _check_same(a: DiffTensor, b: DiffTensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def disentangle_normalize(
    X: DiffTensor, A_x: DiffTensor, affine: ResidualAffine | None = None
) -> tuple[DiffTensor, NormState]:
    """X~ = (R_x - mu_R) / sigma_R + A_x with R_x = X - A_x, statistics over time."""
    _check_same(X, A_x, "disentangle_normalize")
    residual = sub(X, A_x)
    mu, sigma = mean_std(residual, axis=1)
    normalized = div(sub(residual, mu), sigma)
    if affine is not None:
        normalized = add(mul(normalized, affine.gamma), affine.beta)
    return add(normalized, A_x), NormState(mu_R=mu, sigma_R=sigma)


def instance_normalize(X: DiffTensor) -> tuple[DiffTensor, NormState]:
    """Plain RevIN: the residual-only path with a zero anchor."""
    return disentangle_normalize(X, DiffTensor(np.zeros(X.shape)))


def denorm_with_stats(
    Y0: DiffTensor,
    A_y: DiffTensor,
    mu: DiffTensor,
    sigma: DiffTensor,
    affine: ResidualAffine | None = None,
) -> DiffTensor:
    """Y^ = sigma * (Y0 - A_y) + mu + A_y with caller-supplied statistics."""
    _check_same(Y0, A_y, "denorm_with_stats")
    if np.any(sigma.values <= 0):
        raise ValueError("denorm_with_stats needs strictly positive sigma")
    fluctuation = sub(Y0, A_y)
    if affine is not None:
        fluctuation = div(sub(fluctuation, affine.beta), affine.gamma)
    return add(add(mul(sigma, fluctuation), mu), A_y)


def generative_denorm(
    Y0: DiffTensor, A_y: DiffTensor, state: NormState, affine: ResidualAffine | None = None
) -> DiffTensor:
    return denorm_with_stats(Y0, A_y, state.mu_R, state.sigma_R, affine=affine)
