"""Synthetic rectangle images for smoke tests and demos."""
import numpy as np

from rdsnet.train import TrainingSample


def rectangle_dataset(count=8, side=32, seed=0, min_frac=0.25, max_frac=0.6):
    """White axis-aligned rectangles on black; the ground truth is the rectangle mask."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        rh = int(rng.integers(int(side * min_frac), int(side * max_frac) + 1))
        rw = int(rng.integers(int(side * min_frac), int(side * max_frac) + 1))
        y0 = int(rng.integers(0, side - rh + 1))
        x0 = int(rng.integers(0, side - rw + 1))
        mask = np.zeros((side, side))
        mask[y0:y0 + rh, x0:x0 + rw] = 1.0
        image = np.repeat(mask[None], 3, axis=0)
        samples.append(TrainingSample(image, mask.copy(), name=f"rect{i:02d}"))
    return samples
