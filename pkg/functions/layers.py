import numpy as np

from .numerics import DiffTensor, Rng, matmul, add


class Module:
    """Parameter container with train/eval mode, walked in attribute order."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> dict[str, DiffTensor]:
        params: dict[str, DiffTensor] = {}
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, DiffTensor) and value.requires_grad:
                params[name] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(prefix=f"{name}."))
        return params

    def parameters(self) -> list[DiffTensor]:
        return list(self.named_parameters().values())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def parameter(values, name: str | None = None) -> DiffTensor:
    return DiffTensor(values, requires_grad=True, name=name)


class Linear(Module):
    """y = x @ weight + bias over the last axis; weight is (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(max(in_features, 1))
        self.weight = parameter(rng.uniform(-bound, bound, size=(in_features, out_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: DiffTensor) -> DiffTensor:
        if x.shape[-1] != self.in_features:
            raise ValueError(f"Linear expected last dim {self.in_features}, got shape {x.shape}")
        out = matmul(x, self.weight)
        return add(out, self.bias) if self.bias is not None else out
