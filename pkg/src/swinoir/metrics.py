"""PSNR and SSIM with the usual super-resolution evaluation conventions.

Images are ``[H, W]`` or ``[H, W, C]`` arrays on the ``[0, max_value]``
scale. Before measuring, three-channel images are reduced to BT.601 luma
(``channel_mode="luminance"``) or kept as RGB and averaged per channel
(``"rgb-mean"``), and ``border_shave`` pixels are cut from every side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

ChannelMode = Literal["luminance", "rgb-mean"]
_BT601 = np.array([65.481, 128.553, 24.966]) / 255.0


@dataclass(frozen=True)
class MetricConfig:
    max_value: float = 255.0
    k1: float = 0.01
    k2: float = 0.03
    window: Literal["uniform", "gaussian"] = "uniform"
    window_size: int = 8
    sigma: float = 1.5
    channel_mode: ChannelMode = "luminance"
    border_shave: int = 0

    def __post_init__(self):
        if self.max_value <= 0 or self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("max_value, k1 and k2 must be positive")
        if self.border_shave < 0:
            raise ValueError("border_shave must be >= 0")
        if self.window not in ("uniform", "gaussian") or self.window_size < 1:
            raise ValueError(f"bad SSIM window {self.window!r}/{self.window_size}")
        if self.channel_mode not in ("luminance", "rgb-mean"):
            raise ValueError(f"unknown channel mode {self.channel_mode!r}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.max_value) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.max_value) ** 2

    @classmethod
    def for_scale(cls, scale: int, **overrides) -> "MetricConfig":
        """Standard SR protocol: luma only, shave ``scale`` pixels per border."""
        return cls(border_shave=scale, **overrides)

    def describe(self) -> str:
        win = f"{self.window} {self.window_size}x{self.window_size}"
        if self.window == "gaussian":
            win += f" sigma={self.sigma}"
        return f"{self.channel_mode}, shave={self.border_shave}, max={self.max_value:g}, ssim window={win}"


def to_luminance(image: np.ndarray, max_value: float = 255.0) -> np.ndarray:
    """BT.601 luma in studio range (16..235 on the 8-bit scale), rescaled to ``max_value``."""
    rgb = np.asarray(image, dtype=np.float64) / max_value
    y = 16.0 + 255.0 * (rgb @ _BT601)
    return y * (max_value / 255.0)


def prepare(image: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """Apply channel conversion and border shave; returns ``[H, W, C]`` float64."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ShapeError(f"expected an [H, W] or [H, W, C] image, got shape {img.shape}")
    if cfg.channel_mode == "luminance" and img.shape[-1] == 3:
        img = to_luminance(img, cfg.max_value)[..., None]
    b = cfg.border_shave
    if b:
        if img.shape[0] <= 2 * b or img.shape[1] <= 2 * b:
            raise ShapeError(f"image {img.shape[:2]} too small to shave {b} pixels per border")
        img = img[b:-b, b:-b]
    return img


def _pair(x, y, cfg):
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    return prepare(x, cfg), prepare(y, cfg)


def psnr(x: np.ndarray, y: np.ndarray, cfg: MetricConfig = MetricConfig()) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    a, b = _pair(x, y, cfg)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(cfg.max_value**2 / mse)


def ssim_window(cfg: MetricConfig) -> np.ndarray:
    n = cfg.window_size
    if cfg.window == "uniform":
        return np.full((n, n), 1.0 / (n * n))
    r = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * cfg.sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a: np.ndarray, b: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """Per-window SSIM of two single-channel images over every fully contained window."""
    w = ssim_window(cfg)
    n = w.shape[0]
    if a.shape[0] < n or a.shape[1] < n:
        raise ShapeError(f"image {a.shape} smaller than the {n}x{n} SSIM window")
    wa = sliding_window_view(a, (n, n))
    wb = sliding_window_view(b, (n, n))
    mu_a = np.einsum("ijkl,kl->ij", wa, w)
    mu_b = np.einsum("ijkl,kl->ij", wb, w)
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = np.einsum("ijkl,kl->ij", da * da, w)
    var_b = np.einsum("ijkl,kl->ij", db * db, w)
    cov = np.einsum("ijkl,kl->ij", da * db, w)
    c1, c2 = cfg.c1, cfg.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(x: np.ndarray, y: np.ndarray, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean structural similarity over sliding windows (and channels, in rgb-mean mode)."""
    a, b = _pair(x, y, cfg)
    return float(np.mean([ssim_map(a[..., c], b[..., c], cfg).mean() for c in range(a.shape[-1])]))
