"""GRU-based temporal imputation.

The GRU scans the series one step at a time. Before consuming step ``t`` it
predicts that step from the previous hidden state; wherever the mask says the
value is missing the prediction is substituted, otherwise the observation
passes through unchanged.  The merged sequence ``U`` is what the downstream
feature learner sees, and the predictions ``X_hat`` feed the imputation loss.

All functions are batch-first: series are ``(B, T, n)``, hidden states
``(B, T, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .nn import ShapeError, uniform_init

GATE_NAMES = ("W_xz", "W_hz", "b_z", "W_xr", "W_hr", "b_r", "W_xh", "W_hh", "b_h", "W_imp", "b_imp")


def sigmoid(x):
    # branch-free stable form
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GruParams:
    W_xz: np.ndarray  # (m, n)
    W_hz: np.ndarray  # (m, m)
    b_z: np.ndarray  # (m,)
    W_xr: np.ndarray
    W_hr: np.ndarray
    b_r: np.ndarray
    W_xh: np.ndarray
    W_hh: np.ndarray
    b_h: np.ndarray
    W_imp: np.ndarray  # (n, m)
    b_imp: np.ndarray  # (n,)

    @property
    def hidden_size(self) -> int:
        return self.W_hz.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_xz.shape[1]

    def __post_init__(self):
        m, n = self.W_xz.shape
        if m < 1 or n < 1:
            raise ShapeError("GRU hidden and input sizes must be positive")
        expected = {
            "W_xz": (m, n), "W_xr": (m, n), "W_xh": (m, n),
            "W_hz": (m, m), "W_hr": (m, m), "W_hh": (m, m),
            "b_z": (m,), "b_r": (m,), "b_h": (m,),
            "W_imp": (n, m), "b_imp": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"GruParams.{name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator, dtype=np.float64) -> "GruParams":
        m, n = hidden_size, input_size
        u = lambda shape, fan: uniform_init(rng, shape, fan, dtype)
        z = lambda shape: np.zeros(shape, dtype=dtype)
        return cls(
            W_xz=u((m, n), n), W_hz=u((m, m), m), b_z=z(m),
            W_xr=u((m, n), n), W_hr=u((m, m), m), b_r=z(m),
            W_xh=u((m, n), n), W_hh=u((m, m), m), b_h=z(m),
            W_imp=u((n, m), m), b_imp=z(n),
        )

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, dtype=np.float64) -> "GruParams":
        m, n = hidden_size, input_size
        z = lambda shape: np.zeros(shape, dtype=dtype)
        return cls(z((m, n)), z((m, m)), z(m), z((m, n)), z((m, m)), z(m),
                   z((m, n)), z((m, m)), z(m), z((n, m)), z(n))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# Single-step pieces
# ---------------------------------------------------------------------------

def gru_cell(u: np.ndarray, h_prev: np.ndarray, p: GruParams, return_cache: bool = False):
    """One GRU step; ``u`` is ``(..., n)`` and ``h_prev`` is ``(..., m)``.

    ``h_t = z * h_tilde + (1 - z) * h_prev`` (the update gate weights the
    candidate, not the carry).
    """
    if u.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeError(f"gru_cell: input {u.shape} / hidden {h_prev.shape} do not match params "
                         f"(n={p.input_size}, m={p.hidden_size})")
    z = sigmoid(u @ p.W_xz.T + h_prev @ p.W_hz.T + p.b_z)
    r = sigmoid(u @ p.W_xr.T + h_prev @ p.W_hr.T + p.b_r)
    rh = r * h_prev
    h_tilde = np.tanh(u @ p.W_xh.T + rh @ p.W_hh.T + p.b_h)
    h = z * h_tilde + (1.0 - z) * h_prev
    if return_cache:
        return h, (u, h_prev, z, r, rh, h_tilde)
    return h


def gru_cell_backward(grad_h: np.ndarray, cache, p: GruParams, grads: dict[str, np.ndarray]):
    """Backprop one step; accumulates parameter grads into ``grads`` and
    returns ``(grad_u, grad_h_prev)``."""
    u, h_prev, z, r, rh, h_tilde = cache
    d_ht = grad_h * z
    d_z = grad_h * (h_tilde - h_prev)
    d_hprev = grad_h * (1.0 - z)

    d_a_h = d_ht * (1.0 - h_tilde * h_tilde)
    d_a_z = d_z * z * (1.0 - z)
    d_rh = d_a_h @ p.W_hh
    d_r = d_rh * h_prev
    d_hprev += d_rh * r
    d_a_r = d_r * r * (1.0 - r)

    grads["W_xh"] += d_a_h.T @ u
    grads["W_hh"] += d_a_h.T @ rh
    grads["b_h"] += d_a_h.sum(axis=0)
    grads["W_xz"] += d_a_z.T @ u
    grads["W_hz"] += d_a_z.T @ h_prev
    grads["b_z"] += d_a_z.sum(axis=0)
    grads["W_xr"] += d_a_r.T @ u
    grads["W_hr"] += d_a_r.T @ h_prev
    grads["b_r"] += d_a_r.sum(axis=0)

    d_u = d_a_h @ p.W_xh + d_a_z @ p.W_xz + d_a_r @ p.W_xr
    d_hprev += d_a_z @ p.W_hz + d_a_r @ p.W_hr
    return d_u, d_hprev


def estimate_next(h_prev: np.ndarray, p: GruParams) -> np.ndarray:
    """Regress the next observation from the current hidden state."""
    if h_prev.shape[-1] != p.hidden_size:
        raise ShapeError(f"estimate_next: hidden {h_prev.shape} vs m={p.hidden_size}")
    return h_prev @ p.W_imp.T + p.b_imp


# ---------------------------------------------------------------------------
# Full sequence
# ---------------------------------------------------------------------------

@dataclass
class ImputationTrace:
    U: np.ndarray  # (B, T, n) merged series
    X_hat: np.ndarray  # (B, T, n) one-step-ahead estimates, X_hat[:, 0] == 0
    H: np.ndarray  # (B, T, m)
    M: np.ndarray  # (B, T, n)
    all_missing: np.ndarray  # (B,) True where a series had no observation at all
    cache: list | None = None


def impute_sequence(X: np.ndarray, M: np.ndarray, p: GruParams, keep_cache: bool = False) -> ImputationTrace:
    """Run the imputer over a batch of series.

    ``X`` and ``M`` are ``(B, T, n)`` (a single ``(T, n)`` series is also
    accepted). Values at ``M == 0`` are never read: storage there may hold
    anything, including NaN.
    """
    single = X.ndim == 2
    if single:
        X, M = X[None], M[None]
    if X.shape != M.shape:
        raise ShapeError(f"values {X.shape} and mask {M.shape} differ")
    B, T, n = X.shape
    if n != p.input_size:
        raise ShapeError(f"series has {n} dimensions, imputer expects {p.input_size}")
    if T < 2:
        raise ShapeError("imputation needs at least two time steps")
    M = M.astype(X.dtype, copy=False)
    observed = M != 0
    Xc = np.where(observed, X, 0).astype(p.W_xz.dtype, copy=False)
    M = M.astype(p.W_xz.dtype, copy=False)

    m = p.hidden_size
    dt = p.W_xz.dtype
    U = np.empty((B, T, n), dtype=dt)
    X_hat = np.zeros((B, T, n), dtype=dt)
    H = np.empty((B, T, m), dtype=dt)
    h = np.zeros((B, m), dtype=dt)
    caches = [] if keep_cache else None
    x_hat = X_hat[:, 0]
    for t in range(T):
        u = np.where(observed[:, t], Xc[:, t], x_hat)
        U[:, t] = u
        if keep_cache:
            h, c = gru_cell(u, h, p, return_cache=True)
            caches.append(c)
        else:
            h = gru_cell(u, h, p)
        H[:, t] = h
        if t + 1 < T:
            x_hat = estimate_next(h, p)
            X_hat[:, t + 1] = x_hat
    all_missing = ~observed.reshape(B, -1).any(axis=1)
    trace = ImputationTrace(U, X_hat, H, M, all_missing, caches)
    if single:
        trace = ImputationTrace(U[0], X_hat[0], H[0], M[0], all_missing[0], caches)
    return trace


def impute_backward(
    trace: ImputationTrace,
    p: GruParams,
    grad_U: np.ndarray | None = None,
    grad_X_hat: np.ndarray | None = None,
    grad_H: np.ndarray | None = None,
):
    """Backpropagation through time for a batched trace.

    Any of the upstream gradients may be omitted. Returns
    ``(param_grads, grad_X)``, where ``grad_X`` is the gradient with respect
    to the observed input values (zero at missing positions).
    """
    if trace.cache is None:
        raise RuntimeError("impute_backward needs a trace produced with keep_cache=True")
    B, T, n = trace.U.shape
    dt = trace.U.dtype
    zeros = np.zeros((B, T, n), dtype=dt)
    gU = zeros if grad_U is None else grad_U
    gXh = zeros if grad_X_hat is None else grad_X_hat
    grads = {k: np.zeros_like(v) for k, v in p.as_dict().items()}
    grad_X = np.zeros((B, T, n), dtype=dt)
    Mf = trace.M
    d_h = np.zeros((B, p.hidden_size), dtype=dt)
    for t in range(T - 1, -1, -1):
        if grad_H is not None:
            d_h = d_h + grad_H[:, t]
        d_u_cell, d_h = gru_cell_backward(d_h, trace.cache[t], p, grads)
        d_u = gU[:, t] + d_u_cell
        grad_X[:, t] = Mf[:, t] * d_u
        if t == 0:
            break  # first estimate is the constant 0
        d_xhat = gXh[:, t] + (1.0 - Mf[:, t]) * d_u
        h_prev = trace.H[:, t - 1]
        grads["W_imp"] += d_xhat.T @ h_prev
        grads["b_imp"] += d_xhat.sum(axis=0)
        d_h = d_h + d_xhat @ p.W_imp
    return grads, grad_X
