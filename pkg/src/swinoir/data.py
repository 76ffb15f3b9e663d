"""LR/HR pair synthesis, patch sampling and 8-bit image I/O.

Images are float arrays ``[H, W, C]`` in ``[0, 1]``. Downscaling uses the
MATLAB ``imresize`` bicubic convention (Keys kernel, a = -0.5, antialiased
when shrinking, symmetric boundary), which is how the DIV2K LR images are
made.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ShapeError

IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, scale: float, antialias: bool = True) -> np.ndarray:
    """``[out_len, in_len]`` interpolation weights along one axis; rows sum to 1."""
    width = 4.0
    if scale < 1 and antialias:
        kernel = lambda t: scale * cubic(scale * t)
        width /= scale
    else:
        kernel = cubic
    u = np.arange(1, out_len + 1) / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    # symmetric boundary: 1-based index i outside [1, in_len] mirrors back inside
    period = 2 * in_len
    zero_based = np.mod(idx - 1, period)
    zero_based = np.where(zero_based >= in_len, period - 1 - zero_based, zero_based).astype(int)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, zero_based.ravel()), weights.ravel())
    return mat


def imresize(image: np.ndarray, scale: float, out_shape: Optional[tuple] = None) -> np.ndarray:
    """Bicubic resize of ``[H, W]`` or ``[H, W, C]`` by ``scale``."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    oh, ow = out_shape if out_shape is not None else (int(np.ceil(h * scale)), int(np.ceil(w * scale)))
    rh = resize_matrix(h, oh, scale)
    rw = resize_matrix(w, ow, scale)
    return np.einsum("ij,jk...->ik...", rh, np.einsum("ij,kj...->ki...", rw, img))


def modcrop(image: np.ndarray, s: int) -> np.ndarray:
    h, w = image.shape[:2]
    return image[: h - h % s, : w - w % s]


@dataclass(frozen=True)
class ImagePair:
    lr: np.ndarray
    hr: np.ndarray
    scale: int
    degradation: str = "bicubic"
    source: str = ""

    def __post_init__(self):
        lh, lw = self.lr.shape[:2]
        if self.hr.shape[:2] != (lh * self.scale, lw * self.scale):
            raise ShapeError(f"HR {self.hr.shape[:2]} is not {self.scale}x LR {self.lr.shape[:2]}")


def synthesize_pair(hr: np.ndarray, s: int, source: str = "") -> ImagePair:
    """Crop ``hr`` to a multiple of ``s`` and bicubic-downscale it by ``s``."""
    hr = np.asarray(hr, dtype=np.float64)
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    if hr.shape[0] < s or hr.shape[1] < s:
        raise ShapeError(f"image {hr.shape[:2]} is smaller than scale {s}")
    hr = modcrop(hr, s)
    lr = imresize(hr, 1.0 / s, (hr.shape[0] // s, hr.shape[1] // s))
    return ImagePair(lr, hr, s, "bicubic", source)


def bicubic_upscale(lr: np.ndarray, s: int) -> np.ndarray:
    return np.clip(imresize(lr, float(s), (lr.shape[0] * s, lr.shape[1] * s)), 0.0, 1.0)


def augment(image: np.ndarray, code: int) -> np.ndarray:
    """One of the 8 dihedral transforms: bit 0 hflip, bit 1 vflip, bit 2 transpose."""
    if code & 1:
        image = image[:, ::-1]
    if code & 2:
        image = image[::-1]
    if code & 4:
        image = np.swapaxes(image, 0, 1)
    return np.ascontiguousarray(image)


def sample_patch(pair: ImagePair, patch_size: int, rng: np.random.Generator, augmentation: bool = False) -> ImagePair:
    """Aligned random crop: LR ``p x p`` at (y, x), HR ``ps x ps`` at (y*s, x*s)."""
    h, w = pair.lr.shape[:2]
    if patch_size < 1 or patch_size > h or patch_size > w:
        raise ShapeError(f"patch {patch_size} does not fit LR image {h}x{w}")
    s = pair.scale
    y = int(rng.integers(0, h - patch_size + 1))
    x = int(rng.integers(0, w - patch_size + 1))
    lr = pair.lr[y : y + patch_size, x : x + patch_size]
    hr = pair.hr[y * s : (y + patch_size) * s, x * s : (x + patch_size) * s]
    if augmentation:
        code = int(rng.integers(0, 8))
        lr, hr = augment(lr, code), augment(hr, code)
    return replace(pair, lr=lr, hr=hr, source=f"{pair.source}@{y},{x}")


# ---------------------------------------------------------------------------
# files


def read_image(path) -> np.ndarray:
    """8-bit image file -> float64 ``[H, W, 3]`` in [0, 1]."""
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(image: np.ndarray, path) -> Path:
    path = Path(path)
    Image.fromarray(to_uint8(image)).save(path)
    return path


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_pairs(directory, s: int) -> list[ImagePair]:
    """Synthesize a bicubic pair for every image file in ``directory``."""
    return [synthesize_pair(read_image(p), s, source=p.name) for p in list_images(directory)]


def synthetic_scene(n: int = 64) -> np.ndarray:
    """Deterministic ``n x n`` RGB test image: smooth gradients plus hard-edged shapes and stripes."""
    yy, xx = (np.mgrid[0:n, 0:n] + 0.5) / n
    img = np.stack([0.25 + 0.5 * xx, 0.3 + 0.4 * yy, 0.6 - 0.3 * xx], axis=-1)
    img[(xx - 0.35) ** 2 + (yy - 0.4) ** 2 < 0.05] = [0.9, 0.2, 0.1]
    img[(np.abs(xx - 0.72) < 0.14) & (np.abs(yy - 0.7) < 0.18)] = [0.1, 0.8, 0.3]
    img[(yy > 0.8) & (np.floor(xx * n / 3) % 2 == 0)] = [0.95, 0.95, 0.9]
    return img
