"""
Dense float64 tensors with a recording tape for reverse-mode gradients.

Every learnable value and every differentiable intermediate of the forecaster is a
DiffTensor. Operations executed while a Tape is active (``with Tape() as tape:``)
are appended to it in execution order; ``tape.backward(loss)`` replays them in
reverse. Outside a tape, operations only compute values, which is how evaluation
runs.

The DFT is a direct transform against a cached twiddle table. Horizons of
96/192/336/720 are not powers of two, and at these lengths an O(N^2) matmul is
cheap and bitwise reproducible. ``numpy.fft.rfft`` agrees with it to ~1e-12 and is
used as the oracle in the tests.
"""

import functools
import logging
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

EPS_VAR = 1e-8

_state = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when an operation on finite inputs produces NaN or Inf."""


# ----------------------------------------
# Random numbers
# ----------------------------------------


class Rng:
    """
    Seeded random stream backed by numpy's PCG64 bit generator.

    PCG64 is a fixed, published algorithm, so a seed reproduces the same stream on
    every platform. ``stream`` selects an independent sub-stream of the same seed
    (parameter init, batch shuffling, mixup and dropout each get their own), so
    disabling one consumer never shifts the draws of another.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        # numpy shuffles with Fisher-Yates
        return self.generator.permutation(n)


def sample_beta(rng: Rng, alpha: float, beta: float) -> float:
    """
    Draw one Beta(alpha, beta) sample in the open interval (0, 1).

    numpy's Beta sampler uses Johnk's algorithm when both shape parameters are
    at most 1 (the U-shaped regime mixup uses) and a gamma ratio otherwise.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"Beta shape parameters must be positive, got ({alpha}, {beta})")
    value = float(rng.generator.beta(alpha, beta))
    # Johnk in log-space can underflow to exactly 0 or 1 for tiny shapes
    return min(max(value, np.finfo(np.float64).tiny), 1.0 - np.finfo(np.float64).epsneg)


# ----------------------------------------
# Tensor and tape
# ----------------------------------------


class DiffTensor:
    """
    A float64 array with an optional gradient buffer of identical shape.

    ``values`` is a C-ordered (row-major) numpy array; ``grad`` is None until a
    backward pass reaches the tensor and then accumulates additively.
    """

    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        values = np.asarray(values, dtype=np.float64)
        # ascontiguousarray would promote 0-d losses to shape (1,)
        self.values = values if values.flags.c_contiguous else np.ascontiguousarray(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.values.shape:
            raise ValueError(f"Gradient shape {g.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name: str, inputs: tuple, output: DiffTensor, backward: Callable):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive operations executed while the tape is active."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def op_names(self) -> list[str]:
        return [r.name for r in self.records]

    def backward(self, output: DiffTensor, seed: np.ndarray | None = None) -> None:
        """Seed ``output`` (ones by default) and propagate in reverse recording order."""
        if seed is None:
            seed = np.ones_like(output.values)
        output.accumulate(np.asarray(seed, dtype=np.float64))
        for record in reversed(self.records):
            g = record.output.grad
            if g is None:
                continue
            in_grads = record.backward(g)
            for tensor, tg in zip(record.inputs, in_grads):
                if tg is not None and isinstance(tensor, DiffTensor) and tensor.requires_grad:
                    tensor.accumulate(tg)


def active_tape() -> Tape | None:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def zero_grads(tensors: Iterable[DiffTensor]) -> None:
    for t in tensors:
        t.zero_grad()


def as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _check_finite(name: str, out: np.ndarray, inputs: Sequence[DiffTensor]) -> None:
    if np.isfinite(out).all():
        return
    if all(np.isfinite(t.values).all() for t in inputs):
        raise NonFiniteError(f"Operation '{name}' produced non-finite values from finite inputs")


def _emit(name: str, values: np.ndarray, inputs: tuple, backward: Callable) -> DiffTensor:
    _check_finite(name, values, inputs)
    needs_grad = any(t.requires_grad for t in inputs)
    out = DiffTensor(values, requires_grad=needs_grad)
    tape = active_tape()
    if tape is not None and needs_grad:
        tape.records.append(_Record(name, inputs, out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------
# Elementwise primitives
# ----------------------------------------


def add(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        "add",
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        "sub",
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        "mul",
        a.values * b.values,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def div(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values / b.values
    return _emit(
        "div",
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.values, a.shape), _unbroadcast(-g * out / b.values, b.shape)),
    )


def sqrt(x: DiffTensor) -> DiffTensor:
    out = np.sqrt(x.values)
    return _emit("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def square(x: DiffTensor) -> DiffTensor:
    return _emit("square", x.values * x.values, (x,), lambda g: (2.0 * g * x.values,))


_GELU_K = np.sqrt(2.0 / np.pi)


def gelu(x: DiffTensor) -> DiffTensor:
    """tanh-approximated GELU."""
    v = x.values
    inner = _GELU_K * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        d_inner = _GELU_K * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)

    return _emit("gelu", out, (x,), backward)


def dropout(x: DiffTensor, rate: float, rng: Rng | None, training: bool) -> DiffTensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = (rng.generator.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return _emit("dropout", x.values * keep, (x,), lambda g: (g * keep,))


# ----------------------------------------
# Reductions, shape and indexing
# ----------------------------------------


def sum_(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", np.asarray(out), (x,), backward)


def mean(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    count = x.values.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def mean_std(x: DiffTensor, axis: int, eps_var: float = EPS_VAR) -> tuple[DiffTensor, DiffTensor]:
    """Population mean and std over ``axis`` (kept as size 1), std = sqrt(var + eps_var)."""
    if x.shape[axis] < 1:
        raise ValueError("mean_std needs at least one element along the reduced axis")
    mu = mean(x, axis=axis, keepdims=True)
    centered = sub(x, mu)
    var = mean(square(centered), axis=axis, keepdims=True)
    return mu, sqrt(add(var, eps_var))


def reshape(x: DiffTensor, shape: tuple) -> DiffTensor:
    return _emit("reshape", x.values.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: DiffTensor, axes: tuple) -> DiffTensor:
    inverse = tuple(np.argsort(axes))
    return _emit(
        "transpose",
        np.transpose(x.values, axes),
        (x,),
        lambda g: (np.transpose(g, inverse),),
    )


def pad(x: DiffTensor, axis: int, before: int, after: int = 0) -> DiffTensor:
    """Zero-pad ``axis`` with ``before`` leading and ``after`` trailing entries."""
    if before == 0 and after == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    length = x.shape[axis]

    def backward(g):
        return (np.take(g, np.arange(before, before + length), axis=axis),)

    return _emit("pad", np.pad(x.values, widths), (x,), backward)


def take_slice(x: DiffTensor, axis: int, start: int, stop: int) -> DiffTensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.values)
        full[index] = g
        return (full,)

    return _emit("slice", x.values[index].copy(), (x,), backward)


def gather_rows(table: DiffTensor, index: np.ndarray) -> DiffTensor:
    """``table[index]`` along axis 0; the backward pass scatter-adds into rows."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.values)
        np.add.at(full, index, g)
        return (full,)

    return _emit("gather", table.values[index], (table,), backward)


# ----------------------------------------
# Linear algebra
# ----------------------------------------


def matmul(a, b) -> DiffTensor:
    """Batched matrix product (numpy broadcasting over leading axes)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _emit("matmul", np.matmul(a.values, b.values), (a, b), backward)


def softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (x,), backward)


def _linear_map(x: DiffTensor, matrix: np.ndarray, name: str) -> DiffTensor:
    return _emit(name, x.values @ matrix, (x,), lambda g: (g @ matrix.T,))


# ----------------------------------------
# Real-input DFT
# ----------------------------------------


@functools.lru_cache(maxsize=32)
def twiddles(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(cos, -sin) tables of shape (n, n//2 + 1) for the one-sided forward DFT."""
    if n < 1:
        raise ValueError("DFT length must be at least 1")
    k = np.arange(n // 2 + 1)
    t = np.arange(n)
    # reduce k*t mod n in integers so large products keep full angle precision
    angle = 2.0 * np.pi * (np.outer(t, k) % n) / n
    cos_table = np.cos(angle)
    neg_sin_table = -np.sin(angle)
    cos_table.flags.writeable = False
    neg_sin_table.flags.writeable = False
    return cos_table, neg_sin_table


def rdft(x: DiffTensor) -> tuple[DiffTensor, DiffTensor]:
    """One-sided unnormalised DFT along the last axis, returned as (re, im)."""
    cos_table, neg_sin_table = twiddles(x.shape[-1])
    return _linear_map(x, cos_table, "rdft_re"), _linear_map(x, neg_sin_table, "rdft_im")


def rdft_adjoint(u_re: np.ndarray, u_im: np.ndarray, n: int) -> np.ndarray:
    """Transpose of the rdft linear map for length-n signals, applied to bin-space arrays."""
    cos_table, neg_sin_table = twiddles(n)
    if u_re.shape[-1] != cos_table.shape[1]:
        raise ValueError(f"Expected {cos_table.shape[1]} bins for n={n}, got {u_re.shape[-1]}")
    return u_re @ cos_table.T + u_im @ neg_sin_table.T


def complex_modulus(re: DiffTensor, im: DiffTensor, eps: float = 1e-12) -> DiffTensor:
    """sqrt(re^2 + im^2 + eps)."""
    return sqrt(add(add(square(re), square(im)), eps))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation scaled by the largest numeric gradient magnitude."""
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_gradient(fn: Callable[[], float], tensor: DiffTensor, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function w.r.t. ``tensor.values``."""
    grad = np.zeros_like(tensor.values)
    flat = tensor.values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fn()
        flat[i] = orig - h
        f_minus = fn()
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * h)
    logging.debug(f"Numeric gradient over {flat.size} entries computed")
    return grad
