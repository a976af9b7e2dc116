import numpy as np

from segaug.image import RasterImage

# channel values with the 3 low bits clear survive default quantization
PALETTE = [
    (248, 248, 248),
    (0, 0, 0),
    (200, 16, 16),
    (16, 16, 200),
    (16, 160, 16),
    (248, 200, 0),
    (120, 0, 120),
    (0, 136, 136),
]


def make_logo(rng, width=64, height=64, n_shapes=5, background=(248, 248, 248)):
    """Random rectangles and ellipses on a solid background."""
    arr = np.empty((height, width, 3), dtype=np.uint8)
    arr[:] = background
    yy, xx = np.mgrid[:height, :width]
    for _ in range(n_shapes):
        color = PALETTE[rng.integers(1, len(PALETTE))]
        cx, cy = rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height
        rx, ry = rng.uniform(0.05, 0.25) * width, rng.uniform(0.05, 0.25) * height
        if rng.random() < 0.5:
            m = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1
        else:
            m = (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)
        arr[m] = color
    return RasterImage(arr)


def make_noise(rng, width, height, n_colors=3):
    idx = rng.integers(0, n_colors, size=(height, width))
    return RasterImage(np.array(PALETTE[:n_colors], dtype=np.uint8)[idx])
