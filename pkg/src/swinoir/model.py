"""End-to-end SwinOIR network, losses, and checkpoint files.

Data flow for an ``[H, W, 3]`` image in ``[0, 1]``::

    F_pre  = conv3x3(image)
    F_n    = IDSTB_n(fuse(F_k for k in sources[n]))     (block 1 reads F_pre)
    F_main = conv3x3(F_m)
    output = conv3x3(pixel_shuffle(conv3x3(F_pre + F_main), s))

Checkpoint format (version 1): an uncompressed ``.npz`` archive holding
one array per parameter under ``param/<dotted.name>`` plus ``__meta__``, a
0-d unicode array with a JSON object
``{"format": "swinoir-checkpoint", "version": 1, "config": {...}}``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import (
    ConvParams,
    IdstbParams,
    WindowSpec,
    conv,
    fuse_dense_inputs,
    idstb_forward,
    init_conv,
    init_idstb,
    named_parameters,
)
from .errors import CheckpointError, ConfigError, ShapeError
from .topology import STRATEGIES, ConnectionTopology, make_topology

CHECKPOINT_FORMAT = "swinoir-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Network hyperparameters. Defaults are the lightweight ~1M-parameter setting."""

    blocks: int = 4
    stls_per_block: int = 4
    channels: int = 60
    window_size: int = 8
    heads: int = 6
    upscale: int = 2
    input_channels: int = 3
    mlp_ratio: float = 2.0
    topology: str = "interval-dense"
    dtype: str = "float64"

    def __post_init__(self):
        if self.blocks < 1 or self.stls_per_block < 1:
            raise ConfigError("blocks and stls_per_block must be >= 1")
        if self.channels < 1 or self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) must be a positive multiple of heads ({self.heads})")
        if self.window_size < 1 or self.upscale < 1 or self.input_channels < 1:
            raise ConfigError("window_size, upscale and input_channels must be >= 1")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")
        if self.topology not in STRATEGIES:
            raise ConfigError(f"topology must be one of {STRATEGIES}, got {self.topology!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class SwinOIR:
    config: ModelConfig
    topology: ConnectionTopology
    pre: ConvParams
    blocks: list[IdstbParams]
    body: ConvParams
    recon_expand: ConvParams
    recon_out: ConvParams
    _names: Optional[list] = field(default=None, repr=False, compare=False)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        if self._names is None:
            self._names = [
                (name, t)
                for part in ("pre", "blocks", "body", "recon_expand", "recon_out")
                for name, t in named_parameters(getattr(self, part), part)
            ]
        return self._names

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        ad.zero_grad(self.parameters())

    def __call__(self, image, clamp: bool = False) -> Tensor:
        return forward(self, image, clamp=clamp)


def init_model(config: ModelConfig, seed: int = 0) -> SwinOIR:
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    c, m = config.channels, config.window_size
    topology = make_topology(config.blocks, config.topology)
    pre = init_conv(rng, 3, config.input_channels, c, dt)
    blocks = [
        init_idstb(rng, c, config.heads, m, config.stls_per_block, topology.fan_in(n), config.mlp_ratio, dt)
        for n in range(1, config.blocks + 1)
    ]
    body = init_conv(rng, 3, c, c, dt)
    s = config.upscale
    expand = init_conv(rng, 3, c, c * s * s, dt)
    out = init_conv(rng, 3, c, config.input_channels, dt)
    return SwinOIR(config, topology, pre, blocks, body, expand, out)


def reconstruct(model: SwinOIR, features: Tensor) -> Tensor:
    """Sub-pixel upsampler: conv to C*s^2, shuffle by s, conv to image channels."""
    h = conv(features, model.recon_expand)
    h = ad.pixel_shuffle(h, model.config.upscale)
    return conv(h, model.recon_out)


def main_features(model: SwinOIR, f_pre: Tensor, spec: WindowSpec) -> Tensor:
    outputs: list[Tensor] = []
    for n, block in enumerate(model.blocks, start=1):
        src = model.topology.sources_of(n)
        if not src:
            fin = f_pre
        elif block.fusion is None:
            fin = outputs[src[0] - 1]
        else:
            fin = fuse_dense_inputs([outputs[k - 1] for k in src], block.fusion)
        outputs.append(idstb_forward(fin, block, spec))
    return conv(outputs[-1], model.body)


def forward(model: SwinOIR, image, clamp: bool = False) -> Tensor:
    """Super-resolve ``[H, W, C]`` or ``[N, H, W, C]`` with H, W divisible by the window size.

    ``clamp`` is for inference only; training must see the raw output.
    """
    x = ad.as_tensor(image, dtype=model.config.np_dtype)
    if x.ndim not in (3, 4) or x.shape[-1] != model.config.input_channels:
        raise ShapeError(f"expected [.., H, W, {model.config.input_channels}] input, got {x.shape}")
    spec = WindowSpec.for_input(x, model.config.window_size)
    f_pre = conv(x, model.pre)
    f_main = main_features(model, f_pre, spec)
    out = reconstruct(model, f_pre + f_main)
    if clamp:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out


def pad_to_window(image: np.ndarray, window: int) -> np.ndarray:
    """Reflect-pad the bottom/right edges up to the next multiple of ``window``."""
    h, w = image.shape[-3:-1]
    ph, pw = -h % window, -w % window
    if not ph and not pw:
        return image
    pad = [(0, 0)] * (image.ndim - 3) + [(0, ph), (0, pw), (0, 0)]
    return np.pad(image, pad, mode="reflect")


def upscale(model: SwinOIR, image: np.ndarray) -> np.ndarray:
    """Inference on an image of any size: pad, forward, crop, clamp to [0, 1]."""
    image = np.asarray(image, dtype=model.config.np_dtype)
    h, w = image.shape[-3:-1]
    s = model.config.upscale
    out = forward(model, pad_to_window(image, model.config.window_size)).data
    return np.clip(out[..., : h * s, : w * s, :], 0.0, 1.0)


# ---------------------------------------------------------------------------
# losses


def _check_same(predicted: Tensor, target) -> Tensor:
    target = ad.as_tensor(target, dtype=predicted.dtype)
    if predicted.shape != target.shape:
        raise ShapeError(f"prediction {predicted.shape} and target {target.shape} differ")
    return target


def loss_l1(predicted: Tensor, target) -> Tensor:
    """Mean absolute error over all elements."""
    target = _check_same(predicted, target)
    return ad.tabs(predicted - target).mean()


def loss_charbonnier(predicted: Tensor, target, epsilon: float = 1e-6) -> Tensor:
    """Mean of ``sqrt((p - t)^2 + epsilon)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    target = _check_same(predicted, target)
    diff = predicted - target
    return ad.sqrt(diff * diff + epsilon).mean()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: SwinOIR, path: Union[str, Path]) -> Path:
    path = Path(path)
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "config": asdict(model.config)}
    arrays = {f"param/{name}": t.data for name, t in model.named_parameters()}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint_meta(path: Union[str, Path]) -> dict:
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has checkpoint version {meta.get('version')}, expected {CHECKPOINT_VERSION}")
    return meta


def load_checkpoint(path: Union[str, Path]) -> SwinOIR:
    meta = read_checkpoint_meta(path)
    try:
        config = ModelConfig(**meta["config"])
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint {path} has an invalid config: {exc}") from exc
    model = init_model(config)
    with np.load(Path(path), allow_pickle=False) as archive:
        stored = {k[len("param/"):] for k in archive.files if k.startswith("param/")}
        expected = {name for name, _ in model.named_parameters()}
        if stored != expected:
            missing = sorted(expected - stored)[:5]
            extra = sorted(stored - expected)[:5]
            raise CheckpointError(f"checkpoint {path} does not match its config (missing {missing}, unexpected {extra})")
        for name, t in model.named_parameters():
            arr = archive[f"param/{name}"]
            if arr.shape != t.shape:
                raise CheckpointError(f"parameter {name}: stored shape {arr.shape}, model expects {t.shape}")
            t.data[...] = arr
    return model
