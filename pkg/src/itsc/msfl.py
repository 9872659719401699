"""Multi-scale feature learner and softmax head.

Each layer runs several dilated convolutions with different kernel sizes in
parallel over the same input, passes each through ReLU then batch norm, and
concatenates the branches along the channel axis.  Hidden layers use the
large kernels ``7, 11, ..., 4K+3``; the last layer always uses ``1, 3, 5``.
The head averages the final feature map over time and applies a linear
softmax classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import BatchNormState, ConvSpec, ShapeError


def kernel_set(layer_index: int, scales: int, num_layers: int) -> list[int]:
    """Kernel sizes of layer ``layer_index`` (1-based) in an ``num_layers`` stack."""
    if not 1 <= layer_index <= num_layers:
        raise ValueError(f"layer index {layer_index} outside 1..{num_layers}")
    if scales < 1:
        raise ValueError("scales must be >= 1")
    if layer_index == num_layers:
        return [1, 3, 5]
    return [4 * k + 3 for k in range(1, scales + 1)]


@dataclass(frozen=True)
class MsflSpec:
    input_channels: int
    num_classes: int
    num_layers: int = 2
    scales: int = 6
    branch_channels: int = 32
    dilation: int = 2
    final_dilation: int = 1

    def __post_init__(self):
        if self.num_layers < 1 or self.scales < 1:
            raise ValueError("num_layers and scales must be >= 1")
        if self.branch_channels < 1 or self.input_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    def layer_kernels(self, i: int) -> list[int]:
        return kernel_set(i, self.scales, self.num_layers)

    def layer_dilation(self, i: int) -> int:
        return self.final_dilation if i == self.num_layers else self.dilation

    def layer_in_channels(self, i: int) -> int:
        if i == 1:
            return self.input_channels
        return len(self.layer_kernels(i - 1)) * self.branch_channels

    def conv_specs(self, i: int) -> list[ConvSpec]:
        cin, d = self.layer_in_channels(i), self.layer_dilation(i)
        return [ConvSpec(cin, self.branch_channels, f, d) for f in self.layer_kernels(i)]

    @property
    def feature_dim(self) -> int:
        return len(self.layer_kernels(self.num_layers)) * self.branch_channels


def _pname(i: int, k: int, what: str) -> str:
    return f"L{i}.B{k}.{what}"


class Msfl:
    """Parameters and buffers of the feature learner plus its head.

    ``params`` maps names to arrays (mutated in place by the optimiser);
    ``bn`` holds running statistics per branch.
    """

    def __init__(self, spec: MsflSpec, rng: np.random.Generator | None = None, dtype=np.float64):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.bn: dict[str, BatchNormState] = {}
        rng = rng if rng is not None else np.random.default_rng(0)
        for i in range(1, spec.num_layers + 1):
            for k, cs in enumerate(spec.conv_specs(i)):
                fan_in = cs.in_channels * cs.kernel_size
                self.params[_pname(i, k, "weight")] = nn.uniform_init(
                    rng, (cs.out_channels, cs.in_channels, cs.kernel_size), fan_in, dtype)
                self.params[_pname(i, k, "bias")] = np.zeros(cs.out_channels, dtype=dtype)
                self.params[_pname(i, k, "gamma")] = np.ones(cs.out_channels, dtype=dtype)
                self.params[_pname(i, k, "beta")] = np.zeros(cs.out_channels, dtype=dtype)
                self.bn[f"L{i}.B{k}"] = BatchNormState.fresh(cs.out_channels, dtype)
        self.params["head.weight"] = nn.uniform_init(
            rng, (spec.num_classes, spec.feature_dim), spec.feature_dim, dtype)
        self.params["head.bias"] = np.zeros(spec.num_classes, dtype=dtype)

    # -- single layer -------------------------------------------------------

    def layer_forward(self, x: np.ndarray, i: int, train: bool):
        specs = self.spec.conv_specs(i)
        if x.shape[1] != specs[0].in_channels:
            raise ShapeError(f"layer {i} expects {specs[0].in_channels} channels, got {x.shape[1]}")
        outs, caches = [], []
        for k, cs in enumerate(specs):
            p = lambda w: self.params[_pname(i, k, w)]
            y, c_conv = nn.conv1d_forward(x, cs, p("weight"), p("bias"))
            y, c_relu = nn.relu_forward(y)
            y, c_bn = nn.batchnorm1d_forward(y, p("gamma"), p("beta"), self.bn[f"L{i}.B{k}"], train)
            outs.append(y)
            caches.append((c_conv, c_relu, c_bn))
        return np.concatenate(outs, axis=1), caches

    def layer_backward(self, grad: np.ndarray, i: int, caches, grads: dict[str, np.ndarray]) -> np.ndarray:
        bc = self.spec.branch_channels
        grad_x = None
        for k, (c_conv, c_relu, c_bn) in enumerate(caches):
            g = grad[:, k * bc:(k + 1) * bc]
            g, grads[_pname(i, k, "gamma")], grads[_pname(i, k, "beta")] = nn.batchnorm1d_backward(g, c_bn)
            g = nn.relu_backward(g, c_relu)
            gx, grads[_pname(i, k, "weight")], grads[_pname(i, k, "bias")] = nn.conv1d_backward(g, c_conv)
            grad_x = gx if grad_x is None else grad_x + gx
        return grad_x

    # -- head ---------------------------------------------------------------

    def pooled_features(self, feature_map: np.ndarray) -> np.ndarray:
        return feature_map.mean(axis=2)

    def head_logits(self, pooled: np.ndarray) -> np.ndarray:
        return pooled @ self.params["head.weight"].T + self.params["head.bias"]

    def classify(self, feature_map: np.ndarray) -> np.ndarray:
        return nn.softmax(self.head_logits(self.pooled_features(feature_map)))

    # -- full network -------------------------------------------------------

    def features(self, U: np.ndarray, train: bool = False):
        """Run all layers on ``U`` of shape ``(B, T, n)``; returns the final
        ``(B, channels, T)`` map and the per-layer caches."""
        if U.ndim != 3 or U.shape[2] != self.spec.input_channels:
            raise ShapeError(f"expected (B, T, {self.spec.input_channels}) input, got {U.shape}")
        x = np.ascontiguousarray(U.transpose(0, 2, 1))
        caches = []
        for i in range(1, self.spec.num_layers + 1):
            x, c = self.layer_forward(x, i, train)
            caches.append(c)
        return x, caches

    def forward(self, U: np.ndarray, train: bool = False):
        """Return ``(logits, cache)``; probabilities are ``softmax(logits)``."""
        fmap, caches = self.features(U, train)
        pooled = self.pooled_features(fmap)
        logits = self.head_logits(pooled)
        return logits, (caches, pooled, fmap.shape)

    def backward(self, grad_logits: np.ndarray, cache) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients for all parameters and for the input ``U`` (``(B, T, n)``)."""
        caches, pooled, fshape = cache
        grads: dict[str, np.ndarray] = {}
        grads["head.weight"] = grad_logits.T @ pooled
        grads["head.bias"] = grad_logits.sum(axis=0)
        g_pooled = grad_logits @ self.params["head.weight"]
        T = fshape[2]
        g = np.broadcast_to(g_pooled[:, :, None] / T, fshape)
        for i in range(self.spec.num_layers, 0, -1):
            g = self.layer_backward(g, i, caches[i - 1], grads)
        return grads, g.transpose(0, 2, 1)
