"""SwinOIR: window-attention super-resolution with interval-dense block wiring."""

from .autodiff import Tape, Tensor, backward, gradcheck
from .metrics import MetricConfig, psnr, ssim
from .model import ModelConfig, SwinOIR, forward, init_model, load_checkpoint, save_checkpoint, upscale
from .topology import ConnectionTopology, build_topology, interval_dense_sources, skip_topology

__version__ = "0.1.0"

__all__ = [
    "ConnectionTopology",
    "MetricConfig",
    "ModelConfig",
    "SwinOIR",
    "Tape",
    "Tensor",
    "backward",
    "build_topology",
    "forward",
    "gradcheck",
    "init_model",
    "interval_dense_sources",
    "load_checkpoint",
    "psnr",
    "save_checkpoint",
    "skip_topology",
    "ssim",
    "upscale",
]
