"""Window attention, Swin Transformer Layers and interval-dense blocks.

All feature maps are channels-last, ``[H, W, C]`` or batched
``[N, H, W, C]``. Windows never shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, is_dataclass
from functools import lru_cache
from typing import Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ConvParams:
    kernel: Tensor  # [k, k, Cin, Cout]
    bias: Tensor  # [Cout]


@dataclass
class LinearParams:
    weight: Tensor  # [Cin, Cout]
    bias: Tensor  # [Cout]


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class AttentionParams:
    query: Tensor  # [C, C]
    key: Tensor
    value: Tensor
    proj: Tensor
    bias_table: Tensor  # [(2M-1)^2, heads]
    heads: int

    def __post_init__(self):
        c = self.query.shape[0]
        if c % self.heads:
            raise ShapeError(f"channels {c} not divisible by {self.heads} heads")
        side = math.isqrt(self.bias_table.shape[0])
        if side * side != self.bias_table.shape[0] or side % 2 == 0 or self.bias_table.shape[1] != self.heads:
            raise ShapeError(f"bias table shape {self.bias_table.shape} is not [(2M-1)^2, heads]")

    @property
    def channels(self) -> int:
        return self.query.shape[0]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def window_size(self) -> int:
        return (math.isqrt(self.bias_table.shape[0]) + 1) // 2


@dataclass
class StlParams:
    norm1: NormParams
    attn: AttentionParams
    norm2: NormParams
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class IdstbParams:
    layers: list[StlParams]
    conv: ConvParams
    fusion: Optional[ConvParams] = None  # 1x1, |sources|*C -> C; absent for single-source blocks

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an IDSTB needs at least one STL")


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every tensor reachable from ``obj``."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))


# ---------------------------------------------------------------------------
# initialisation


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float64) -> Tensor:
    """Normal(0, std) resampled until every draw lies within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return Tensor(out * std, requires_grad=True, dtype=dtype)


def _param(array, dtype) -> Tensor:
    return Tensor(np.asarray(array, dtype=dtype), requires_grad=True, dtype=dtype)


def init_conv(rng: np.random.Generator, k: int, cin: int, cout: int, dtype=np.float64) -> ConvParams:
    bound = 1.0 / math.sqrt(k * k * cin)
    return ConvParams(
        _param(rng.uniform(-bound, bound, (k, k, cin, cout)), dtype),
        _param(np.zeros(cout), dtype),
    )


def init_fusion(rng: np.random.Generator, inputs: int, channels: int, dtype=np.float64) -> ConvParams:
    """1x1 projection that starts as the average of its inputs plus small noise."""
    avg = np.tile(np.eye(channels), (inputs, 1)) / inputs
    noise = trunc_normal(rng, avg.shape).data
    return ConvParams(
        _param((avg + noise).reshape(1, 1, inputs * channels, channels), dtype),
        _param(np.zeros(channels), dtype),
    )


def init_norm(channels: int, dtype=np.float64) -> NormParams:
    return NormParams(_param(np.ones(channels), dtype), _param(np.zeros(channels), dtype))


def init_linear(rng: np.random.Generator, cin: int, cout: int, dtype=np.float64) -> LinearParams:
    return LinearParams(trunc_normal(rng, (cin, cout), dtype=dtype), _param(np.zeros(cout), dtype))


def init_attention(rng: np.random.Generator, channels: int, heads: int, window: int, dtype=np.float64) -> AttentionParams:
    c = channels
    return AttentionParams(
        query=trunc_normal(rng, (c, c), dtype=dtype),
        key=trunc_normal(rng, (c, c), dtype=dtype),
        value=trunc_normal(rng, (c, c), dtype=dtype),
        proj=trunc_normal(rng, (c, c), dtype=dtype),
        bias_table=trunc_normal(rng, ((2 * window - 1) ** 2, heads), dtype=dtype),
        heads=heads,
    )


def init_stl(
    rng: np.random.Generator, channels: int, heads: int, window: int, mlp_ratio: float = 2.0, dtype=np.float64
) -> StlParams:
    if mlp_ratio <= 0:
        raise ValueError("mlp_ratio must be positive")
    hidden = max(1, int(round(channels * mlp_ratio)))
    return StlParams(
        norm1=init_norm(channels, dtype),
        attn=init_attention(rng, channels, heads, window, dtype),
        norm2=init_norm(channels, dtype),
        fc1=init_linear(rng, channels, hidden, dtype),
        fc2=init_linear(rng, hidden, channels, dtype),
    )


def init_idstb(
    rng: np.random.Generator,
    channels: int,
    heads: int,
    window: int,
    depth: int,
    fan_in: int = 1,
    mlp_ratio: float = 2.0,
    dtype=np.float64,
) -> IdstbParams:
    layers = [init_stl(rng, channels, heads, window, mlp_ratio, dtype) for _ in range(depth)]
    conv = init_conv(rng, 3, channels, channels, dtype)
    fusion = init_fusion(rng, fan_in, channels, dtype) if fan_in > 1 else None
    return IdstbParams(layers, conv, fusion)


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class WindowSpec:
    window_size: int
    height: int
    width: int

    def __post_init__(self):
        m = self.window_size
        if m < 1:
            raise ShapeError(f"window size must be positive, got {m}")
        if self.height % m or self.width % m:
            raise ShapeError(f"image {self.height}x{self.width} is not divisible by window size {m}; pad first")

    @classmethod
    def for_input(cls, x: Tensor, window_size: int) -> "WindowSpec":
        return cls(window_size, x.shape[-3], x.shape[-2])

    @property
    def num_windows(self) -> int:
        return (self.height // self.window_size) * (self.width // self.window_size)


def _check_spatial(x: Tensor, spec: WindowSpec) -> None:
    if x.ndim not in (3, 4) or x.shape[-3:-1] != (spec.height, spec.width):
        raise ShapeError(f"feature map {x.shape} does not match window spec {spec}")


def window_partition(x: Tensor, spec: WindowSpec) -> Tensor:
    """``[..., H, W, C]`` -> ``[..., H*W/M^2, M^2, C]``.

    Windows are ordered row-major over the window grid, and the tokens of
    each window row-major within it.
    """
    _check_spatial(x, spec)
    m = spec.window_size
    lead = x.shape[:-3]
    c = x.shape[-1]
    gh, gw = spec.height // m, spec.width // m
    nl = len(lead)
    t = x.reshape(*lead, gh, m, gw, m, c)
    t = t.transpose(tuple(range(nl)) + tuple(nl + i for i in (0, 2, 1, 3, 4)))
    return t.reshape(*lead, gh * gw, m * m, c)


def window_merge(w: Tensor, spec: WindowSpec) -> Tensor:
    m = spec.window_size
    if w.ndim < 3 or w.shape[-3:-1] != (spec.num_windows, m * m):
        raise ShapeError(f"windows {w.shape} do not match window spec {spec}")
    lead = w.shape[:-3]
    c = w.shape[-1]
    gh, gw = spec.height // m, spec.width // m
    nl = len(lead)
    t = w.reshape(*lead, gh, gw, m, m, c)
    t = t.transpose(tuple(range(nl)) + tuple(nl + i for i in (0, 2, 1, 3, 4)))
    return t.reshape(*lead, spec.height, spec.width, c)


@lru_cache(maxsize=None)
def relative_position_index(m: int) -> np.ndarray:
    """``[M^2, M^2]`` row of the bias table used for each (query, key) token pair."""
    ys, xs = np.divmod(np.arange(m * m), m)
    dy = ys[:, None] - ys[None, :] + (m - 1)
    dx = xs[:, None] - xs[None, :] + (m - 1)
    index = dy * (2 * m - 1) + dx
    index.setflags(write=False)
    return index


# ---------------------------------------------------------------------------
# attention and layers


def wmsa(x: Tensor, params: AttentionParams) -> Tensor:
    """Multi-head self-attention inside each window; ``x`` is ``[..., M^2, C]``."""
    m = params.window_size
    tokens, c = x.shape[-2:]
    if c != params.channels:
        raise ShapeError(f"window tokens have {c} channels, attention expects {params.channels}")
    if tokens != m * m:
        raise ShapeError(f"window holds {tokens} tokens, bias table is for M={m}")
    heads, d = params.heads, params.head_dim
    lead = x.shape[:-2]
    nl = len(lead)
    split = tuple(range(nl)) + (nl + 1, nl, nl + 2)

    def heads_first(t: Tensor) -> Tensor:
        return t.reshape(*lead, tokens, heads, d).transpose(split)

    q = heads_first(x @ params.query)
    k = heads_first(x @ params.key)
    v = heads_first(x @ params.value)
    kt = k.transpose(tuple(range(nl + 1)) + (nl + 2, nl + 1))
    bias = ad.take(params.bias_table, relative_position_index(m)).transpose((2, 0, 1))
    scores = (q @ kt) * (1.0 / math.sqrt(d)) + bias
    out = ad.softmax_lastdim(scores) @ v
    out = out.transpose(split).reshape(*lead, tokens, c)
    return out @ params.proj


def linear(x: Tensor, p: LinearParams) -> Tensor:
    return x @ p.weight + p.bias


def mlp(x: Tensor, fc1: LinearParams, fc2: LinearParams) -> Tensor:
    return linear(ad.gelu(linear(x, fc1)), fc2)


def stl_forward(x: Tensor, params: StlParams, spec: WindowSpec) -> Tensor:
    """Pre-norm residual window attention followed by a pre-norm residual MLP."""
    _check_spatial(x, spec)
    h = ad.layer_norm(x, params.norm1.gamma, params.norm1.beta, LN_EPS)
    h = window_merge(wmsa(window_partition(h, spec), params.attn), spec)
    x = x + h
    h = ad.layer_norm(x, params.norm2.gamma, params.norm2.beta, LN_EPS)
    return x + mlp(h, params.fc1, params.fc2)


def conv(x: Tensor, p: ConvParams) -> Tensor:
    return ad.conv2d(x, p.kernel, p.bias)


def fuse_dense_inputs(features: Sequence[Tensor], fusion: ConvParams) -> Tensor:
    """Concatenate feature maps on channels and project back with a 1x1 conv."""
    features = list(features)
    if not features:
        raise ShapeError("nothing to fuse")
    ref = features[0].shape
    for f in features[1:]:
        if f.shape != ref:
            raise ShapeError(f"cannot fuse feature maps of shapes {ref} and {f.shape}")
    expected = len(features) * ref[-1]
    if fusion.kernel.shape[:3] != (1, 1, expected):
        raise ShapeError(f"fusion kernel {fusion.kernel.shape} does not take {expected} input channels")
    stacked = features[0] if len(features) == 1 else ad.concat(features, axis=-1)
    return conv(stacked, fusion)


def idstb_forward(fin: Tensor, params: IdstbParams, spec: WindowSpec) -> Tensor:
    """STL stack, trailing 3x3 conv, and a residual back to the block input."""
    h = fin
    for layer in params.layers:
        h = stl_forward(h, layer, spec)
    return conv(h, params.conv) + fin
