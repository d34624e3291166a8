"""
Resolution statistics of a segmentation dataset
===============================================

Two numbers summarise how uneven image sizes are: the ratio of the largest to
the smallest area, and the Gini coefficient of the areas.
"""

import numpy as np

from swin_tuna.data import dataset_stats, gini_coefficient, resolution_range_ratio

print(resolution_range_ratio([100, 300]), gini_coefficient([1, 3]))

# A skewed collection: mostly phone photos with a few very large scans.
rng = np.random.default_rng(0)
areas = np.concatenate([
    rng.integers(300, 800, 900) * rng.integers(300, 800, 900),
    rng.integers(2000, 4000, 20) * rng.integers(2000, 4000, 20),
])
print(dataset_stats(areas).format())

# The sorted-prefix formula agrees with the quadratic double sum.
a = areas.astype(float)
slow = np.abs(a[:, None] - a[None, :]).sum() / (2 * a.size**2 * a.mean())
print("fast", gini_coefficient(areas), "double sum", slow)

# Scaling every image leaves both statistics unchanged.
print(dataset_stats(areas * 4).format())
