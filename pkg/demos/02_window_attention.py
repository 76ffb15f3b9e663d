"""Window attention on a toy feature map.

A 4x4 map split into 2x2 windows: tokens only attend inside their own
window, and tokens at the same relative offset share a position bias.
"""

import numpy as np

from swinoir.autodiff import Tensor
from swinoir.blocks import WindowSpec, init_attention, relative_position_index, window_merge, window_partition, wmsa

rng = np.random.default_rng(0)
spec = WindowSpec(window_size=2, height=4, width=4)
feature = rng.standard_normal((4, 4, 4))

windows = window_partition(Tensor(feature), spec)
print("partitioned shape (windows, tokens, channels):", windows.shape)

# pixel (0, 0) lives in window 0 as token 0; pixel (1, 3) is window 1, token 3
print("window 1 token 3 equals pixel (1, 3):", np.array_equal(windows.data[1, 3], feature[1, 3]))

print("relative position index for a 2x2 window (rows: query, cols: key):")
print(relative_position_index(2))

params = init_attention(rng, 4, 2, 2)  # channels, heads, window size
out = window_merge(wmsa(windows, params), spec)
print("attention output shape:", out.shape)

# perturb one pixel: only pixels in the same window change
bumped = feature.copy()
bumped[0, 0] += 1.0
out2 = window_merge(wmsa(window_partition(Tensor(bumped), spec), params), spec)
changed = np.argwhere(np.abs(out2.data - out.data).max(axis=-1) > 0)
print("pixels affected by touching (0, 0):", [tuple(map(int, p)) for p in changed])
