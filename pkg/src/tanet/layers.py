"""Forward and backward passes for the layers TAnet is built from.

Every ``*_fwd`` accepts arbitrary leading batch axes (``x[..., T, d]`` or
``x[..., d]``) and returns ``(output, cache)``; the matching ``*_bwd`` consumes
that cache exactly once.  Parameter gradients are summed over all leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, ShapeError
from .tensor import Tensor


@dataclass
class LinearParams:
    weight: Tensor  # [in, out]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"linear weight {self.weight.shape} incompatible with bias {self.bias.shape}"
            )


@dataclass
class MhaParams:
    """Per-head projections ``wq, wk, wv`` of shape [h, d_model, d_head]; ``wo`` is [h*d_head, d_model]."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    def __post_init__(self):
        h, d, dh = self.wq.shape
        if self.wk.shape != (h, d, dh) or self.wv.shape != (h, d, dh):
            raise ShapeError("query/key/value projections must share one shape")
        if h < 1 or h * dh != d:
            raise ShapeError(f"heads*d_head must equal d_model, got {h}*{dh} != {d}")
        if self.wo.shape != (h * dh, d):
            raise ShapeError(f"output projection must be {(h * dh, d)}, got {self.wo.shape}")

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def d_model(self) -> int:
        return self.wq.shape[1]

    @property
    def d_head(self) -> int:
        return self.wq.shape[2]


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    def __post_init__(self):
        if self.gamma.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ShapeError(f"gamma {self.gamma.shape} and beta {self.beta.shape} must be equal 1-d")
        if not self.eps > 0:
            raise ValueError("layernorm epsilon must be positive")


@dataclass
class LayerCache:
    kind: str
    out_shape: tuple
    saved: dict = field(default_factory=dict)


def _check(cache: LayerCache, kind: str, dy: Tensor) -> None:
    if cache.kind != kind:
        raise CacheError(f"{kind} backward given a {cache.kind!r} cache")
    if dy.shape != cache.out_shape:
        raise CacheError(f"{kind} backward: dy shape {dy.shape} != forward output {cache.out_shape}")


def _flat(a: Tensor) -> Tensor:
    return a.reshape(-1, a.shape[-1])


# --------------------------------------------------------------------- linear


def linear_fwd(x: Tensor, p: LinearParams) -> tuple[Tensor, LayerCache]:
    if x.shape[-1] != p.weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {p.weight.shape}")
    y = (_flat(x) @ p.weight).reshape(*x.shape[:-1], p.weight.shape[1])
    y += p.bias
    return y, LayerCache("linear", y.shape, {"x": x})


def linear_bwd(dy: Tensor, cache: LayerCache, p: LinearParams) -> tuple[Tensor, Tensor, Tensor]:
    _check(cache, "linear", dy)
    x = cache.saved["x"]
    dyf = _flat(dy)
    dx = (dyf @ p.weight.T).reshape(x.shape)
    dW = _flat(x).T @ dyf
    db = dyf.sum(axis=0)
    return dx, dW, db


# ----------------------------------------------------------------- attention


def softmax(s: Tensor, axis: int = -1) -> Tensor:
    z = s - s.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def mha_fwd(x: Tensor, p: MhaParams) -> tuple[Tensor, LayerCache]:
    """Unmasked multi-head self-attention over the time axis of ``x[..., T, d_model]``."""
    if x.ndim < 2 or x.shape[-1] != p.d_model:
        raise ShapeError(f"mha: input {x.shape} vs d_model {p.d_model}")
    h, dh = p.heads, p.d_head
    lead, T = x.shape[:-2], x.shape[-2]
    # one GEMM for every head's q, k and v: [N, d] @ [d, 3*h*dh]
    w_all = np.concatenate([_heads_to_cols(w) for w in (p.wq, p.wk, p.wv)], axis=1)
    qkv = (_flat(x) @ w_all).reshape(*lead, T, 3, h, dh)
    qkv = np.moveaxis(qkv, -4, -2)  # [..., 3, h, T, dh]
    q, k, v = qkv[..., 0, :, :, :], qkv[..., 1, :, :, :], qkv[..., 2, :, :, :]
    scale = 1.0 / np.sqrt(dh)
    attn = softmax((q @ k.swapaxes(-1, -2)) * scale)  # [..., h, T, T]
    heads = attn @ v  # [..., h, T, dh]
    concat = np.moveaxis(heads, -3, -2).reshape(*x.shape[:-1], h * dh)
    y = (_flat(concat) @ p.wo).reshape(x.shape)
    saved = {"x": x, "q": q, "k": k, "v": v, "attn": attn, "concat": concat}
    return y, LayerCache("mha", y.shape, saved)


def mha_bwd(dy: Tensor, cache: LayerCache, p: MhaParams) -> tuple[Tensor, MhaParams]:
    _check(cache, "mha", dy)
    s = cache.saved
    x, q, k, v, attn = s["x"], s["q"], s["k"], s["v"], s["attn"]
    h, dh = p.heads, p.d_head
    scale = 1.0 / np.sqrt(dh)

    dwo = _flat(s["concat"]).T @ _flat(dy)
    dconcat = (_flat(dy) @ p.wo.T).reshape(s["concat"].shape)
    dheads = np.moveaxis(dconcat.reshape(*dy.shape[:-1], h, dh), -2, -3)

    dattn = dheads @ v.swapaxes(-1, -2)
    dv = attn.swapaxes(-1, -2) @ dheads
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dscores *= scale
    dq = dscores @ k
    dk = dscores.swapaxes(-1, -2) @ q

    # back to the fused [N, 3*h*dh] layout of the forward projection
    dqkv = np.moveaxis(np.stack([dq, dk, dv], axis=-4), -2, -4)  # [..., T, 3, h, dh]
    dqkv = dqkv.reshape(-1, 3 * h * dh)
    xf = _flat(x)
    dw_all = xf.T @ dqkv  # [d, 3*h*dh]
    w_all = np.concatenate([_heads_to_cols(w) for w in (p.wq, p.wk, p.wv)], axis=1)
    dx = (dqkv @ w_all.T).reshape(x.shape)
    dwq, dwk, dwv = (_cols_to_heads(c, h) for c in np.split(dw_all, 3, axis=1))
    return dx, MhaParams(dwq, dwk, dwv, dwo)


def _heads_to_cols(w: Tensor) -> Tensor:
    """[h, d, dh] -> [d, h*dh] with head i occupying columns i*dh:(i+1)*dh."""
    return np.moveaxis(w, 0, 1).reshape(w.shape[1], -1)


def _cols_to_heads(c: Tensor, h: int) -> Tensor:
    d = c.shape[0]
    return np.ascontiguousarray(np.moveaxis(c.reshape(d, h, -1), 1, 0))


# ----------------------------------------------------------------- layernorm


def layernorm_fwd(x: Tensor, p: LayerNormParams) -> tuple[Tensor, LayerCache]:
    if x.shape[-1] != p.gamma.shape[0]:
        raise ShapeError(f"layernorm: input {x.shape} vs width {p.gamma.shape[0]}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = xc * inv_std
    y = xhat * p.gamma + p.beta
    return y, LayerCache("layernorm", y.shape, {"xhat": xhat, "inv_std": inv_std})


def layernorm_bwd(dy: Tensor, cache: LayerCache, p: LayerNormParams) -> tuple[Tensor, Tensor, Tensor]:
    _check(cache, "layernorm", dy)
    xhat, inv_std = cache.saved["xhat"], cache.saved["inv_std"]
    dgamma = _flat(dy * xhat).sum(axis=0)
    dbeta = _flat(dy).sum(axis=0)
    dxhat = dy * p.gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------- relu


def relu_fwd(x: Tensor) -> tuple[Tensor, LayerCache]:
    y = np.maximum(x, 0.0)
    return y, LayerCache("relu", y.shape, {"mask": x > 0})


def relu_bwd(dy: Tensor, cache: LayerCache) -> Tensor:
    _check(cache, "relu", dy)
    return dy * cache.saved["mask"]


# ------------------------------------------------------------------- pooling


def global_avg_pool_fwd(x: Tensor) -> tuple[Tensor, LayerCache]:
    """Average ``x[..., T, d]`` over its time axis."""
    if x.ndim < 2 or x.size == 0:
        raise ShapeError(f"pooling needs a non-empty [..., T, d] input, got {x.shape}")
    y = x.mean(axis=-2)
    return y, LayerCache("pool", y.shape, {"T": x.shape[-2]})


def global_avg_pool_bwd(dy: Tensor, cache: LayerCache) -> Tensor:
    _check(cache, "pool", dy)
    T = cache.saved["T"]
    return np.repeat((dy / T)[..., None, :], T, axis=-2)


# ------------------------------------------------------------------ the loss


def softmax_xent(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Mean cross-entropy of ``logits[n, k]`` against integer ``labels`` and its gradient."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    return float(loss), d / n
