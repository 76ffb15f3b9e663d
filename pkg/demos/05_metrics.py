"""How the evaluation convention moves the numbers.

The same pair of images scores differently depending on whether you
measure luma or RGB and how many border pixels you shave.
"""

import numpy as np

from swinoir.data import bicubic_upscale, synthesize_pair, synthetic_scene
from swinoir.metrics import MetricConfig, psnr, ssim

hr = synthetic_scene(96)
restored = bicubic_upscale(synthesize_pair(hr, 3).lr, 3)
x, y = restored * 255, hr * 255

for cfg in (
    MetricConfig(),
    MetricConfig.for_scale(3),
    MetricConfig(channel_mode="rgb-mean"),
    MetricConfig.for_scale(3, window="gaussian", window_size=11),
):
    print(f"{cfg.describe():<66} PSNR {psnr(x, y, cfg):6.2f}  SSIM {ssim(x, y, cfg):.4f}")

# one gray level off everywhere is the textbook 48.13 dB
flat = np.full((8, 8), 255.0)
print("255 vs 254:", round(psnr(flat, flat - 1, MetricConfig(channel_mode="rgb-mean")), 4), "dB")
