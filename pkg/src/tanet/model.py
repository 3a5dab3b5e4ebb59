"""TAnet assembly: temporal attention block, average pooling and a small classifier.

The attention block maps a window ``E[T, C]`` to ``E'[T, C]``::

    E' = LN2(FFN2(ReLU(FFN1(LN1(MHA(E) + E)))))

and the classifier maps ``E'`` to two logits (0 = attend left, 1 = attend right)::

    logits = FC2(ReLU(FC1(mean_t E')))

There is no positional encoding, so the logits are invariant to reordering the
time steps of a window.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import layers as L
from .errors import ConfigError, ConfigMismatchError, FormatError, LengthError, ShapeError, VersionError
from .layers import LayerNormParams, LinearParams, MhaParams
from .tensor import Tensor

CHECKPOINT_MAGIC = b"TANT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sI5IQdQ")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    """splitmix64 stream; ``uniform(n)`` yields the next ``n`` doubles in [0, 1)."""

    def __init__(self, seed: int):
        self.state = np.uint64(seed % (1 << 64))

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = self.state + steps * _GOLDEN
            self.state = z[-1] if n else self.state
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 2
    ffn_hidden: int | None = None  # None -> 4 * d_model
    fc_hidden: int = 32
    classes: int = 2
    layernorm_eps: float = 1e-5
    init_seed: int = 0

    def __post_init__(self):
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", 4 * self.d_model)
        for name in ("d_model", "heads", "ffn_hidden", "fc_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.classes != 2:
            raise ConfigError(f"TAnet is a binary classifier; classes must be 2, got {self.classes}")
        if not self.layernorm_eps > 0:
            raise ConfigError("layernorm_eps must be positive")
        if not 0 <= self.init_seed < 1 << 64:
            raise ConfigError("init_seed must fit in an unsigned 64-bit integer")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


@dataclass
class TanetParams:
    mha: MhaParams
    ln1: LayerNormParams
    ffn1: LinearParams
    ffn2: LinearParams
    ln2: LayerNormParams
    fc1: LinearParams
    fc2: LinearParams

    def named(self) -> list[tuple[str, Tensor]]:
        """Every learnable array in fixed enumeration order."""
        m = self.mha
        out = [("mha.wq", m.wq), ("mha.wk", m.wk), ("mha.wv", m.wv), ("mha.wo", m.wo)]
        out += [("ln1.gamma", self.ln1.gamma), ("ln1.beta", self.ln1.beta)]
        for name in ("ffn1", "ffn2"):
            lin = getattr(self, name)
            out += [(f"{name}.weight", lin.weight), (f"{name}.bias", lin.bias)]
        out += [("ln2.gamma", self.ln2.gamma), ("ln2.beta", self.ln2.beta)]
        for name in ("fc1", "fc2"):
            lin = getattr(self, name)
            out += [(f"{name}.weight", lin.weight), (f"{name}.bias", lin.bias)]
        return out

    def arrays(self) -> list[Tensor]:
        return [a for _, a in self.named()]

    @property
    def eps(self) -> float:
        return self.ln1.eps

    @classmethod
    def from_arrays(cls, arrays, eps: float) -> "TanetParams":
        a = list(arrays)
        if len(a) != 16:
            raise ShapeError(f"expected 16 parameter arrays, got {len(a)}")
        return cls(
            mha=MhaParams(a[0], a[1], a[2], a[3]),
            ln1=LayerNormParams(a[4], a[5], eps),
            ffn1=LinearParams(a[6], a[7]),
            ffn2=LinearParams(a[8], a[9]),
            ln2=LayerNormParams(a[10], a[11], eps),
            fc1=LinearParams(a[12], a[13]),
            fc2=LinearParams(a[14], a[15]),
        )

    def map(self, fn) -> "TanetParams":
        return TanetParams.from_arrays([fn(a) for a in self.arrays()], self.eps)

    def copy(self) -> "TanetParams":
        return self.map(np.copy)

    def zeros_like(self) -> "TanetParams":
        return self.map(np.zeros_like)

    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def _glorot(rng: SplitMix64, fan_in: int, fan_out: int, shape) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    return ((2.0 * rng.uniform(n) - 1.0) * bound).reshape(shape)


def init_params(cfg: ModelConfig) -> TanetParams:
    """Glorot-uniform weights, zero biases, unit gains; bit-identical for equal seeds."""
    rng = SplitMix64(cfg.init_seed)
    d, h, dh, f, c = cfg.d_model, cfg.heads, cfg.d_head, cfg.ffn_hidden, cfg.fc_hidden
    mha = MhaParams(
        _glorot(rng, d, dh, (h, d, dh)),
        _glorot(rng, d, dh, (h, d, dh)),
        _glorot(rng, d, dh, (h, d, dh)),
        _glorot(rng, h * dh, d, (h * dh, d)),
    )

    def lin(i, o):
        return LinearParams(_glorot(rng, i, o, (i, o)), np.zeros(o))

    def ln():
        return LayerNormParams(np.ones(d), np.zeros(d), cfg.layernorm_eps)

    ln1 = ln()
    ffn1, ffn2 = lin(d, f), lin(f, d)
    ln2 = ln()
    fc1, fc2 = lin(d, c), lin(c, cfg.classes)
    return TanetParams(mha, ln1, ffn1, ffn2, ln2, fc1, fc2)


def mhtam_fwd(e: Tensor, p: TanetParams) -> tuple[Tensor, dict]:
    if e.ndim < 2 or e.shape[-1] != p.mha.d_model:
        raise ShapeError(f"expected windows [..., T, {p.mha.d_model}], got {e.shape}")
    a, c_mha = L.mha_fwd(e, p.mha)
    n1, c_ln1 = L.layernorm_fwd(a + e, p.ln1)
    f1, c_f1 = L.linear_fwd(n1, p.ffn1)
    r, c_relu = L.relu_fwd(f1)
    f2, c_f2 = L.linear_fwd(r, p.ffn2)
    out, c_ln2 = L.layernorm_fwd(f2, p.ln2)
    return out, {"mha": c_mha, "ln1": c_ln1, "ffn1": c_f1, "relu": c_relu, "ffn2": c_f2, "ln2": c_ln2}


def mhtam_bwd(d_out: Tensor, cache: dict, p: TanetParams, grads: TanetParams) -> Tensor:
    """Accumulate block parameter gradients into ``grads``; return d/dE."""
    d, grads.ln2.gamma[...], grads.ln2.beta[...] = L.layernorm_bwd(d_out, cache["ln2"], p.ln2)
    d, grads.ffn2.weight[...], grads.ffn2.bias[...] = L.linear_bwd(d, cache["ffn2"], p.ffn2)
    d = L.relu_bwd(d, cache["relu"])
    d, grads.ffn1.weight[...], grads.ffn1.bias[...] = L.linear_bwd(d, cache["ffn1"], p.ffn1)
    d_res, grads.ln1.gamma[...], grads.ln1.beta[...] = L.layernorm_bwd(d, cache["ln1"], p.ln1)
    d_e, g = L.mha_bwd(d_res, cache["mha"], p.mha)
    grads.mha.wq[...], grads.mha.wk[...], grads.mha.wv[...], grads.mha.wo[...] = g.wq, g.wk, g.wv, g.wo
    return d_e + d_res


def forward(e: Tensor, p: TanetParams) -> tuple[Tensor, dict]:
    """Logits for one window ``[T, C]`` (shape [2]) or a batch ``[B, T, C]`` (shape [B, 2])."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim < 2 or e.shape[-2] < 1:
        raise ShapeError(f"expected windows [..., T, C] with T >= 1, got {e.shape}")
    ep, c_block = mhtam_fwd(e, p)
    pooled, c_pool = L.global_avg_pool_fwd(ep)
    h1, c_fc1 = L.linear_fwd(pooled, p.fc1)
    r, c_relu = L.relu_fwd(h1)
    logits, c_fc2 = L.linear_fwd(r, p.fc2)
    cache = {"block": c_block, "pool": c_pool, "fc1": c_fc1, "relu": c_relu, "fc2": c_fc2,
             "logits_shape": logits.shape}
    return logits, cache


def backward(dlogits: Tensor, cache: dict, p: TanetParams, return_input_grad: bool = False):
    """Gradients of every parameter (a ``TanetParams`` in the same order) for upstream ``dlogits``."""
    if dlogits.shape != cache["logits_shape"]:
        raise ShapeError(f"dlogits {dlogits.shape} != logits {cache['logits_shape']}")
    grads = p.zeros_like()
    d, grads.fc2.weight[...], grads.fc2.bias[...] = L.linear_bwd(dlogits, cache["fc2"], p.fc2)
    d = L.relu_bwd(d, cache["relu"])
    d, grads.fc1.weight[...], grads.fc1.bias[...] = L.linear_bwd(d, cache["fc1"], p.fc1)
    d = L.global_avg_pool_bwd(d, cache["pool"])
    d_e = mhtam_bwd(d, cache["block"], p, grads)
    return (grads, d_e) if return_input_grad else grads


def predict(windows: Tensor, p: TanetParams, batch: int = 256) -> np.ndarray:
    """Logits for a stack of windows ``[N, T, C]``, evaluated in chunks."""
    out = [forward(windows[i:i + batch], p)[0] for i in range(0, len(windows), batch)]
    return np.concatenate(out) if out else np.zeros((0, 2))


# --------------------------------------------------------------- checkpoints


def save_params(path, params: TanetParams, cfg: ModelConfig) -> None:
    arrays = params.arrays()
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.d_model, cfg.heads, cfg.ffn_hidden,
        cfg.fc_hidden, cfg.classes, cfg.init_seed, cfg.layernorm_eps, sum(a.size for a in arrays),
    )
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    Path(path).write_bytes(header + blob)


def load_params(path, expect: ModelConfig | None = None) -> tuple[TanetParams, ModelConfig]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        if raw[:4] and not CHECKPOINT_MAGIC.startswith(raw[:4]):
            raise FormatError(f"{path}: not a TAnet checkpoint")
        raise LengthError(f"{path}: truncated checkpoint header ({len(raw)} bytes)")
    magic, version, d, h, f, c, k, seed, eps, count = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        cfg = ModelConfig(d, h, f, c, k, eps, seed)
    except ConfigError as exc:
        raise FormatError(f"{path}: invalid stored config: {exc}") from exc
    if expect is not None:
        for fld in fields(ModelConfig):
            if fld.name == "init_seed":
                continue
            got, want = getattr(cfg, fld.name), getattr(expect, fld.name)
            if got != want:
                raise ConfigMismatchError(f"{path}: checkpoint {fld.name}={got} but expected {fld.name}={want}")
    template = init_params(cfg)
    if count != template.size() or len(raw) != _HEADER.size + 8 * count:
        raise LengthError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, header implies {8 * template.size()}"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    arrays, off = [], 0
    for a in template.arrays():
        arrays.append(flat[off:off + a.size].reshape(a.shape).copy())
        off += a.size
    return TanetParams.from_arrays(arrays, cfg.layernorm_eps), cfg


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
