"""The joint imputation + classification network and its checkpoint format.

Checkpoint layout (little-endian)::

    bytes 0..7    magic  b"ITSCCKP1"
    bytes 8..15   uint64 length L of the JSON header
    next L bytes  UTF-8 JSON header
    remainder     float32 blob, arrays concatenated in header order (C order)

The header carries ``arch`` (constructor arguments), ``config``,
``config_hash``, ``seed`` and ``arrays``: a list of ``{"name", "shape"}``
covering every parameter followed by the batch-norm running statistics
(``bn.<layer>.<branch>.mean`` / ``.var``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .imputation import GruParams, impute_backward, impute_sequence
from .losses import LossWeights, imputation_loss, imputation_loss_grad
from .msfl import Msfl, MsflSpec

MAGIC = b"ITSCCKP1"


class CheckpointError(ValueError):
    pass


@dataclass
class Arch:
    input_size: int
    num_classes: int
    hidden_size: int = 128
    num_layers: int = 2
    scales: int = 6
    branch_channels: int = 32
    dilation: int = 2
    use_tim: bool = True
    use_msfl: bool = True


@dataclass
class StepResult:
    logits: np.ndarray
    probabilities: np.ndarray
    l_cls: float
    l_imp: float
    l_total: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    grad_X: np.ndarray | None = None


class ItscModel:
    """GRU imputer feeding a multi-scale convolutional classifier.

    Two ablations are switchable: ``use_tim=False`` zero-fills missing values
    instead of imputing, ``use_msfl=False`` classifies the imputer's final
    hidden state with a linear map.
    """

    def __init__(self, arch: Arch, seed: int = 0, dtype=np.float32):
        if not arch.use_tim and not arch.use_msfl:
            raise ValueError("at least one of the imputer and the feature learner is required")
        self.arch = arch
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.gru = GruParams.init(arch.input_size, arch.hidden_size, rng, self.dtype) if arch.use_tim else None
        self.msfl = None
        if arch.use_msfl:
            spec = MsflSpec(arch.input_size, arch.num_classes, arch.num_layers, arch.scales,
                            arch.branch_channels, arch.dilation)
            self.msfl = Msfl(spec, rng, self.dtype)
        self.linear = None
        if not arch.use_msfl:
            m = arch.hidden_size
            self.linear = {"weight": nn.uniform_init(rng, (arch.num_classes, m), m, self.dtype),
                           "bias": np.zeros(arch.num_classes, dtype=self.dtype)}

    # -- parameter bookkeeping ----------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        if self.gru is not None:
            out.update({f"tim.{k}": v for k, v in self.gru.as_dict().items()})
        if self.msfl is not None:
            out.update({f"msfl.{k}": v for k, v in self.msfl.params.items()})
        if self.linear is not None:
            out.update({f"linear.{k}": v for k, v in self.linear.items()})
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        if self.msfl is not None:
            for key, st in self.msfl.bn.items():
                out[f"bn.{key}.mean"] = st.running_mean
                out[f"bn.{key}.var"] = st.running_var
        return out

    @property
    def feature_dim(self) -> int:
        return self.msfl.spec.feature_dim if self.msfl is not None else self.arch.hidden_size

    # -- forward / backward --------------------------------------------------

    def _merge(self, X, M, train):
        if self.gru is None:
            U = np.where(M != 0, X, 0).astype(self.dtype)
            return U, None
        trace = impute_sequence(X.astype(self.dtype, copy=False), M, self.gru, keep_cache=train)
        return trace.U, trace

    def features(self, X: np.ndarray, M: np.ndarray) -> np.ndarray:
        """Pooled pre-logit vectors ``(B, feature_dim)`` in eval mode."""
        U, trace = self._merge(X, M, False)
        if self.msfl is None:
            return trace.H[:, -1]
        fmap, _ = self.msfl.features(U, train=False)
        return self.msfl.pooled_features(fmap)

    def predict_proba(self, X: np.ndarray, M: np.ndarray, chunk: int = 256) -> np.ndarray:
        outs = []
        for s in range(0, len(X), chunk):
            f = self.features(X[s:s + chunk], M[s:s + chunk])
            outs.append(nn.softmax(self._head(f)))
        return np.concatenate(outs, axis=0)

    def _head(self, f):
        if self.msfl is not None:
            return self.msfl.head_logits(f)
        return f @ self.linear["weight"].T + self.linear["bias"]

    def loss_and_grads(self, X, M, labels, weights: LossWeights, train: bool = True,
                       need_grads: bool = True) -> StepResult:
        """Forward the batch, compute both losses and (optionally) the
        gradients of ``alpha * l_cls + beta * l_imp`` for every parameter."""
        X = np.asarray(X)
        M = np.asarray(M)
        U, trace = self._merge(X, M, train and need_grads)
        if self.msfl is not None:
            logits, mcache = self.msfl.forward(U, train=train)
        else:
            logits = trace.H[:, -1] @ self.linear["weight"].T + self.linear["bias"]
        l_cls, g_logits, probs = nn.softmax_cross_entropy(logits, labels)
        if trace is not None:
            Xd = np.where(M != 0, X, 0).astype(self.dtype)
            l_imp = imputation_loss(Xd, trace.X_hat, M)
        else:
            l_imp = 0.0
        l_total = weights.alpha * l_cls + weights.beta * l_imp
        res = StepResult(logits, probs, l_cls, l_imp, l_total)
        if not need_grads:
            return res

        g_logits = (weights.alpha * g_logits).astype(self.dtype)
        grads = {}
        g_U = None
        g_H = None
        if self.msfl is not None:
            mg, g_U = self.msfl.backward(g_logits, mcache)
            grads.update({f"msfl.{k}": v for k, v in mg.items()})
        else:
            grads["linear.weight"] = g_logits.T @ trace.H[:, -1]
            grads["linear.bias"] = g_logits.sum(axis=0)
            g_H = np.zeros_like(trace.H)
            g_H[:, -1] = g_logits @ self.linear["weight"]
        if trace is not None:
            g_Xh = weights.beta * imputation_loss_grad(Xd, trace.X_hat, M)
            tg, res.grad_X = impute_backward(trace, self.gru, g_U, g_Xh, g_H)
            grads.update({f"tim.{k}": v for k, v in tg.items()})
        elif g_U is not None:
            res.grad_X = g_U * (M != 0)
        res.grads = grads
        return res

    # -- checkpoints ---------------------------------------------------------

    def save(self, path, config: dict | None = None, config_hash: str = "", seed: int = 0,
             extra: dict | None = None) -> None:
        arrays = {**self.parameters(), **self.buffers()}
        header = {
            "format": "itsc-checkpoint",
            "version": 1,
            "arch": self.arch.__dict__,
            "config": config or {},
            "config_hash": config_hash,
            "seed": seed,
            "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        }
        if extra:
            header.update(extra)
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        blob = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in arrays.values())
        Path(path).write_bytes(MAGIC + struct.pack("<Q", len(hb)) + hb + blob)

    @classmethod
    def load(cls, path, dtype=np.float32) -> tuple["ItscModel", dict]:
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        try:
            (hlen,) = struct.unpack("<Q", raw[8:16])
            header = json.loads(raw[16:16 + hlen].decode("utf-8"))
            arch = Arch(**header["arch"])
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise CheckpointError(f"{path}: corrupted header ({e})") from None
        model = cls(arch, seed=0, dtype=dtype)
        arrays = {**model.parameters(), **model.buffers()}
        listed = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
        if listed != [(k, v.shape) for k, v in arrays.items()]:
            raise CheckpointError(f"{path}: array list does not match the declared architecture")
        blob = raw[16 + hlen:]
        need = sum(v.size for v in arrays.values()) * 4
        if len(blob) != need:
            raise CheckpointError(f"{path}: expected {need} bytes of parameters, found {len(blob)}")
        off = 0
        for name, arr in arrays.items():
            k = arr.size
            arr[...] = np.frombuffer(blob, dtype="<f4", count=k, offset=off).reshape(arr.shape)
            off += 4 * k
        return model, header
