"""Differentiable numpy kernels used by the imputer and the feature learner.

Every layer follows the same contract: ``*_forward`` returns its output and a
cache tuple, ``*_backward`` consumes the upstream gradient plus that cache and
returns gradients for the input and for each parameter.  Arrays are
batch-first; 1D feature maps are laid out as ``(batch, channels, time)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Raised when array shapes disagree with a layer's declared geometry."""


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# Dilated 1D convolution with "same" padding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel_size - 1) // 2


def _conv_columns(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    # (B, C, T) -> (B, C*f, T); tap k reads x[t + k*d - pad], zero outside [0, T)
    B, C, T = x.shape
    f, d, pad = spec.kernel_size, spec.dilation, spec.padding
    cols = np.zeros((B, C, f, T), dtype=x.dtype)
    for k in range(f):
        shift = k * d - pad
        lo, hi = max(0, -shift), min(T, T - shift)
        if lo < hi:
            cols[:, :, k, lo:hi] = x[:, :, lo + shift:hi + shift]
    return cols.reshape(B, C * f, T)


def conv1d_forward(x: np.ndarray, spec: ConvSpec, weight: np.ndarray, bias: np.ndarray):
    """Same-padded dilated convolution. ``weight`` is ``(out, in, f)``."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects (batch, channels, time), got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv1d input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if x.shape[2] < 1:
        raise ShapeError("conv1d input must have at least one time step")
    expected = (spec.out_channels, spec.in_channels, spec.kernel_size)
    if weight.shape != expected:
        raise ShapeError(f"conv1d weight shape {weight.shape}, expected {expected}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv1d bias shape {bias.shape}, expected ({spec.out_channels},)")
    cols = _conv_columns(x, spec)
    w2 = weight.reshape(spec.out_channels, -1)
    out = np.matmul(w2, cols) + bias[None, :, None]
    return out, (cols, x.shape, spec, weight)


def conv1d_backward(grad_out: np.ndarray, cache):
    if cache is None:
        raise RuntimeError("conv1d_backward called without a forward cache")
    cols, x_shape, spec, weight = cache
    B, C, T = x_shape
    f, d, pad = spec.kernel_size, spec.dilation, spec.padding
    w2 = weight.reshape(spec.out_channels, -1)

    grad_w = np.einsum("bot,bkt->ok", grad_out, cols, optimize=True).reshape(weight.shape)
    grad_b = grad_out.sum(axis=(0, 2))
    dcols = np.matmul(w2.T, grad_out).reshape(B, C, f, T)
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    for k in range(f):
        shift = k * d - pad
        lo, hi = max(0, -shift), min(T, T - shift)
        if lo < hi:
            grad_x[:, :, lo + shift:hi + shift] += dcols[:, :, k, lo:hi]
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    # subgradient 0 at exactly 0
    return grad_out * cache


# ---------------------------------------------------------------------------
# Batch normalisation over (batch, time) per channel
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm1d_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, state: BatchNormState, train: bool):
    """Normalise ``(B, C, T)`` per channel.

    In train mode the batch statistics are used and the running statistics
    are updated in place (unbiased variance, as torch does).  In eval mode
    the running statistics are used and nothing is mutated.
    """
    if x.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm input {x.shape} does not match {gamma.shape[0]} channels")
    eps = state.eps
    if train:
        count = x.shape[0] * x.shape[2]
        if count < 2:
            raise ValueError("batchnorm in train mode needs at least 2 elements per channel")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean[None, :, None]) * inv_std[None, :, None]
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * var * count / (count - 1)
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        x_hat = (x - state.running_mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * x_hat + beta[None, :, None]
    return out, (x_hat, inv_std, gamma, train)


def batchnorm1d_backward(grad_out: np.ndarray, cache):
    x_hat, inv_std, gamma, train = cache
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2))
    grad_beta = grad_out.sum(axis=(0, 2))
    g = grad_out * gamma[None, :, None]
    if not train:
        return g * inv_std[None, :, None], grad_gamma, grad_beta
    mean_g = g.mean(axis=(0, 2), keepdims=True)
    mean_gx = (g * x_hat).mean(axis=(0, 2), keepdims=True)
    grad_x = inv_std[None, :, None] * (g - mean_g - x_hat * mean_gx)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Linear map, batch-first: y = x W^T + b
# ---------------------------------------------------------------------------

def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    return x @ weight.T + bias, (x, weight)


def linear_backward(grad_out: np.ndarray, cache):
    x, weight = cache
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    return grad_out @ weight, g2.T @ x2, g2.sum(axis=0)


# ---------------------------------------------------------------------------
# Softmax and cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch.

    Returns ``(loss, grad_logits, probabilities)``; the gradient already
    carries the ``1/Q`` batch-mean factor.
    """
    labels = np.asarray(labels)
    Q, C = logits.shape
    if C < 2:
        raise ValueError("softmax cross-entropy needs at least two classes")
    if labels.shape != (Q,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise ValueError(f"labels must be {Q} integers in [0, {C})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    probs = np.exp(log_p)
    rows = np.arange(Q)
    loss = -log_p[rows, labels].mean()
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return float(loss), grad / Q, probs


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.learning_rate / bc1) * m / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    failing_coordinate: tuple | None
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def grad_check(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    names: Iterable[str] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must re-run the forward pass reading ``params`` (mutated in
    place here). The error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``.
    """
    worst, where = 0.0, None
    for name in names if names is not None else params:
        p = params[name]
        if p.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        a = analytic[name]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            up = loss_fn()
            p[idx] = orig - step
            down = loss_fn()
            p[idx] = orig
            num = (up - down) / (2 * step)
            err = abs(a[idx] - num) / max(1.0, abs(a[idx]), abs(num))
            if err > worst:
                worst, where = err, (name, idx)
    return GradCheckReport(worst, where if worst > tolerance else None, tolerance)
