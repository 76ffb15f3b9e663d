"""AdamW, the step-halving learning-rate schedule, and the training loop."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import ImagePair, sample_patch
from .errors import ConfigError, ContractError
from .metrics import MetricConfig, psnr
from .model import ModelConfig, SwinOIR, forward, loss_charbonnier, loss_l1, save_checkpoint, upscale

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZES = {2: 64, 3: 48, 4: 24}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    steps_per_epoch: int = 100
    base_lr: float = 5e-4
    lr_halving_epochs: tuple[int, ...] = (300, 600, 900)
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: Optional[int] = None  # overrides the per-scale default
    patch_size: int = 64
    seed: int = 0
    loss: str = "l1"
    charbonnier_eps: float = 1e-6
    augmentation: bool = False
    validate_every: int = 1
    checkpoint_every: int = 0
    prefetch: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        halving = tuple(self.lr_halving_epochs)
        if any(b <= a for a, b in zip(halving, halving[1:])):
            raise ConfigError(f"lr_halving_epochs must be strictly increasing, got {halving}")
        object.__setattr__(self, "lr_halving_epochs", halving)
        if self.epochs < 0 or self.steps_per_epoch < 1 or self.patch_size < 1:
            raise ConfigError("epochs >= 0, steps_per_epoch >= 1 and patch_size >= 1 required")
        if self.loss not in ("l1", "charbonnier"):
            raise ConfigError(f"loss must be 'l1' or 'charbonnier', got {self.loss!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def batch_size_for(self, scale: int) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return DEFAULT_BATCH_SIZES.get(scale, 16)


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """``base_lr`` halved once for every halving epoch already reached."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    halvings = sum(1 for e in cfg.lr_halving_epochs if e <= epoch)
    return cfg.base_lr * 2.0**-halvings


@dataclass
class OptimizerState:
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: Sequence[tuple[str, ad.Tensor]], state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place, from each tensor's ``.grad``."""
    for name, p in params:
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params:
        g = p.grad
        m = state.first.get(name)
        v = state.second.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first[name], state.second[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.weight_decay * p.data
        p.data -= lr * update


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    val_psnr: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    seconds: float = 0.0

    def series(self) -> dict[str, list]:
        return {
            "epoch": [r.epoch for r in self.epochs],
            "lr": [r.lr for r in self.epochs],
            "loss": [r.loss for r in self.epochs],
            "val_psnr": [r.val_psnr for r in self.epochs],
            "step_loss": list(self.step_losses),
        }

    def write_metrics_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "loss", "val_psnr"])
            for r in self.epochs:
                writer.writerow([r.epoch, f"{r.lr:.6g}", f"{r.loss:.8f}", f"{r.val_psnr:.4f}"])
        return path

    def write_series(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.series(), indent=1, allow_nan=True))
        return path


def _batches(dataset: Sequence[ImagePair], cfg: TrainConfig, batch: int, rng: np.random.Generator) -> Iterator:
    while True:
        picks = [sample_patch(dataset[int(rng.integers(len(dataset)))], cfg.patch_size, rng, cfg.augmentation)
                 for _ in range(batch)]
        yield np.stack([p.lr for p in picks]), np.stack([p.hr for p in picks])


def _prefetched(source: Iterator, depth: int, total: int) -> Iterator:
    """Run ``source`` in a worker thread behind a bounded queue; order is preserved."""
    q: queue.Queue = queue.Queue(maxsize=depth)

    def work():
        for _ in range(total):
            q.put(next(source))

    threading.Thread(target=work, daemon=True).start()
    for _ in range(total):
        yield q.get()


def validation_psnr(model: SwinOIR, pairs: Sequence[ImagePair]) -> float:
    s = model.config.upscale
    cfg = MetricConfig.for_scale(s, max_value=1.0)
    return float(np.mean([psnr(upscale(model, p.lr), p.hr, cfg) for p in pairs]))


def train(
    model: SwinOIR,
    dataset: Sequence[ImagePair],
    cfg: TrainConfig,
    validation: Optional[Sequence[ImagePair]] = None,
    checkpoint_dir=None,
) -> TrainReport:
    """Patch-based training; validation defaults to the training pairs themselves."""
    if not dataset:
        raise ConfigError("training needs at least one image pair")
    s = model.config.upscale
    bad = {p.scale for p in dataset if p.scale != s}
    if bad:
        raise ConfigError(f"dataset scale(s) {sorted(bad)} do not match model scale {s}")
    validation = list(dataset) if validation is None else list(validation)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    report = TrainReport()
    if cfg.epochs == 0:
        return report

    rng = np.random.default_rng(cfg.seed)
    batch = cfg.batch_size_for(s)
    params = model.named_parameters()
    state = OptimizerState()
    batches = _batches(dataset, cfg, batch, rng)
    if cfg.prefetch > 0:
        batches = _prefetched(batches, cfg.prefetch, cfg.epochs * cfg.steps_per_epoch)
    loss_fn = loss_l1 if cfg.loss == "l1" else lambda p, t: loss_charbonnier(p, t, cfg.charbonnier_eps)
    dtype = model.config.np_dtype
    start = time.perf_counter()

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        epoch_losses = []
        for _ in range(cfg.steps_per_epoch):
            lr_batch, hr_batch = next(batches)
            with ad.Tape() as tape:
                loss = loss_fn(forward(model, lr_batch.astype(dtype)), hr_batch.astype(dtype))
            tape.backward(loss)
            adamw_step(params, state, lr, cfg)
            model.zero_grad()
            epoch_losses.append(loss.item())
        report.step_losses.extend(epoch_losses)

        val = float("nan")
        if cfg.validate_every and (epoch + 1) % cfg.validate_every == 0:
            val = validation_psnr(model, validation)
        report.epochs.append(EpochRecord(epoch, lr, float(np.mean(epoch_losses)), val))
        logger.info("epoch %d lr %.3g loss %.5f val_psnr %.3f", epoch, lr, report.epochs[-1].loss, val)

        if ckpt_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            report.checkpoints.append(save_checkpoint(model, ckpt_dir / f"epoch_{epoch + 1:04d}.npz"))

    if ckpt_dir is not None:
        report.checkpoints.append(save_checkpoint(model, ckpt_dir / "final.npz"))
    report.seconds = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# config files


def _coerce(kind, raw: str):
    text = raw.strip()
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in (bool, "bool"):
        if text.lower() not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return text.lower() in ("true", "yes", "1", "on")
    if kind in (str, "str"):
        return text
    if "tuple" in str(kind):
        return tuple(int(v) for v in text.replace(",", " ").split())
    if "Optional[int]" in str(kind) or "int | None" in str(kind):
        return None if text.lower() in ("", "none", "auto") else int(text)
    raise ConfigError(f"unsupported config type {kind}")


def _section(parser: configparser.ConfigParser, name: str, cls):
    if not parser.has_section(name):
        return cls()
    known = {f.name: f.type for f in fields(cls)}
    values = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        try:
            values[key] = _coerce(known[key], raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    return cls(**values)


def read_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Read an INI file with optional ``[model]`` and ``[train]`` sections.

    Keys are the field names of :class:`ModelConfig` / :class:`TrainConfig`;
    tuples are written as comma-separated integers.
    """
    parser = configparser.ConfigParser()
    if not parser.read(Path(path)):
        raise ConfigError(f"cannot read config file {path}")
    return _section(parser, "model", ModelConfig), _section(parser, "train", TrainConfig)


def config_to_dict(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    return {"model": asdict(model_cfg), "train": asdict(train_cfg)}
