"""Multi-head self-attention with label-embedding cross-attention (LESA).

Per head ``h`` with head width ``d``::

    A_h      = Q_h K_h^T / sqrt(d)                 token-token logits
    S_h      = softmax(A_h)                        row-wise
    Al_h     = Ql_h K_h^T / sqrt(d)                label-token affinities, n x T
    CoSim_h  = norm(Al_h)^T norm(Al_h)             norm = row-wise L2
    New_h    = S_h + CoSim_h                       no renormalisation
    O_h      = New_h V_h

and ``O`` concatenates the ``O_h`` along columns in head order.  Row 0 of the
input is the sentinel aggregator; it takes part in attention like any other
row.  All math is float64.

Arrays carry a leading batch axis internally.  ``lesa_forward`` accepts a
single ``(T, D)`` sequence or a padded ``(B, T, D)`` batch with a boolean
``mask`` of real positions; masked keys get ``-1e9`` logits and are zeroed
out of the label affinities so padding never changes real outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalError, ShapeError

MASK_LOGIT = -1e9


@dataclass
class LesaParams:
    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray
    heads: int

    def __post_init__(self):
        D = self.W_Q.shape[0]
        for name in ("W_K", "W_Q", "W_V"):
            w = getattr(self, name)
            if w.shape != (D, D):
                raise ShapeError(f"{name} has shape {w.shape}, expected ({D}, {D})")
        if self.heads < 1 or D % self.heads:
            raise ShapeError(f"model width {D} is not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.W_Q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @classmethod
    def random(cls, dim: int, heads: int, rng: np.random.Generator, std: float = 0.02) -> "LesaParams":
        return cls(*(rng.normal(0.0, std, (dim, dim)) for _ in range(3)), heads=heads)


@dataclass
class LesaGrads:
    X: np.ndarray
    X_l: np.ndarray
    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray


@dataclass
class LesaActivations:
    """Every intermediate of one forward call.

    Per-head arrays are shaped ``(B, H, ...)``; label projections are
    ``(H, n, d)`` because the label matrix is shared across the batch.
    """

    X: np.ndarray
    X_l: np.ndarray
    mask: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    K_l: np.ndarray
    Q_l: np.ndarray
    V_l: np.ndarray
    A: np.ndarray
    self_attn: np.ndarray
    A_l: np.ndarray
    A_l_norm: np.ndarray
    row_norms: np.ndarray
    cosim: np.ndarray
    new_attn: np.ndarray
    O: np.ndarray
    params: LesaParams
    use_cosim: bool
    batched: bool

    def head(self, name: str, h: int, b: int = 0) -> np.ndarray:
        """One head's matrix, e.g. ``acts.head("cosim", 0)``."""
        arr = getattr(self, name)
        if name in ("K_l", "Q_l", "V_l"):
            return arr[h]
        return arr[b, h]


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(..., T, D) -> (..., H, T, d) using contiguous column windows."""
    *lead, T, D = x.shape
    d = D // heads
    return np.moveaxis(x.reshape(*lead, T, heads, d), -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(..., H, T, d) -> (..., T, H*d)."""
    *lead, H, T, d = x.shape
    return np.moveaxis(x, -3, -2).reshape(*lead, T, H * d)


def softmax(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def row_normalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalise the last axis; an all-zero row stays zero."""
    norms = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, a / safe, 0.0), norms


def lesa_forward(
    X: np.ndarray,
    X_l: np.ndarray,
    params: LesaParams,
    mask: Optional[np.ndarray] = None,
    use_cosim: bool = True,
) -> tuple[np.ndarray, LesaActivations]:
    X = np.asarray(X, dtype=np.float64)
    X_l = np.asarray(X_l, dtype=np.float64)
    batched = X.ndim == 3
    if X.ndim not in (2, 3):
        raise ShapeError(f"X must be (T, D) or (B, T, D), got {X.shape}")
    Xb = X if batched else X[None]
    B, T, D = Xb.shape
    if D != params.dim:
        raise ShapeError(f"X width {D} does not match parameter width {params.dim}")
    if X_l.ndim != 2 or X_l.shape[1] != D or X_l.shape[0] < 1:
        raise ShapeError(f"X_l must be (n, {D}) with n >= 1, got {X_l.shape}")
    if T < 1:
        raise ShapeError("sequence must contain at least the sentinel row")
    if mask is None:
        mask = np.ones((B, T), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(B, T)
    if not (np.all(np.isfinite(Xb)) and np.all(np.isfinite(X_l))):
        raise NumericalError("non-finite attention input")

    H, d = params.heads, params.head_dim
    scale = 1.0 / np.sqrt(d)

    K = split_heads(Xb @ params.W_K, H)
    Q = split_heads(Xb @ params.W_Q, H)
    V = split_heads(Xb @ params.W_V, H)
    K_l = split_heads(X_l @ params.W_K, H)
    Q_l = split_heads(X_l @ params.W_Q, H)
    V_l = split_heads(X_l @ params.W_V, H)

    key_mask = mask[:, None, None, :]
    A = (Q @ np.swapaxes(K, -1, -2)) * scale
    logits = np.where(key_mask, A, MASK_LOGIT)
    S = softmax(logits)

    A_l = (Q_l[None] @ np.swapaxes(K, -1, -2)) * scale
    A_l = np.where(key_mask, A_l, 0.0)
    M, norms = row_normalize(A_l)
    C = np.swapaxes(M, -1, -2) @ M
    new = S + C if use_cosim else S.copy()

    O = merge_heads(new @ V)
    acts = LesaActivations(
        X=Xb, X_l=X_l, mask=mask, K=K, Q=Q, V=V, K_l=K_l, Q_l=Q_l, V_l=V_l,
        A=A, self_attn=S, A_l=A_l, A_l_norm=M, row_norms=norms, cosim=C,
        new_attn=new, O=O, params=params, use_cosim=use_cosim, batched=batched,
    )
    return (O if batched else O[0]), acts


def lesa_backward(acts: LesaActivations, upstream: np.ndarray) -> LesaGrads:
    """Gradients of a scalar loss given ``dLoss/dO``."""
    p = acts.params
    dO = np.asarray(upstream, dtype=np.float64)
    if not acts.batched:
        dO = dO[None]
    if dO.shape != acts.O.shape:
        raise ShapeError(f"upstream gradient {dO.shape} does not match output {acts.O.shape}")
    H, d = p.heads, p.head_dim
    scale = 1.0 / np.sqrt(d)
    Xb, X_l = acts.X, acts.X_l
    D = p.dim

    dOh = split_heads(dO, H)
    d_new = dOh @ np.swapaxes(acts.V, -1, -2)
    dV = np.swapaxes(acts.new_attn, -1, -2) @ dOh

    S = acts.self_attn
    dA = S * (d_new - np.sum(d_new * S, axis=-1, keepdims=True))
    dQ = (dA @ acts.K) * scale
    dK = (np.swapaxes(dA, -1, -2) @ acts.Q) * scale

    dQ_l = np.zeros_like(acts.Q_l)
    if acts.use_cosim:
        M, norms = acts.A_l_norm, acts.row_norms
        dM = M @ (d_new + np.swapaxes(d_new, -1, -2))
        radial = np.sum(dM * M, axis=-1, keepdims=True)
        safe = np.where(norms > 0.0, norms, 1.0)
        dA_l = np.where(norms > 0.0, (dM - M * radial) / safe, 0.0)
        dA_l = np.where(acts.mask[:, None, None, :], dA_l, 0.0)
        dQ_l = ((dA_l @ acts.K) * scale).sum(axis=0)
        dK = dK + (np.swapaxes(dA_l, -1, -2) @ acts.Q_l[None]) * scale

    dQm, dKm, dVm = merge_heads(dQ), merge_heads(dK), merge_heads(dV)
    dQ_lm = merge_heads(dQ_l)
    flatX = Xb.reshape(-1, D)
    dW_Q = flatX.T @ dQm.reshape(-1, D) + X_l.T @ dQ_lm
    dW_K = flatX.T @ dKm.reshape(-1, D)
    dW_V = flatX.T @ dVm.reshape(-1, D)
    dX = dQm @ p.W_Q.T + dKm @ p.W_K.T + dVm @ p.W_V.T
    dX_l = dQ_lm @ p.W_Q.T
    return LesaGrads(
        X=dX if acts.batched else dX[0], X_l=dX_l, W_K=dW_K, W_Q=dW_Q, W_V=dW_V,
    )
