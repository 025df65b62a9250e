"""Unbiased versus biased MMD^2 between two samples of the same distribution.

Run: python demos/03_mmd.py
"""

import math

import numpy as np

from fairbound.mmd import KernelSpec, mmd2_biased, mmd2_unbiased

kernel = KernelSpec("rq", lengthscale=2 * math.sqrt(2))
rng = np.random.default_rng(1)
u, v = [], []
for _ in range(500):
    X, Y = rng.normal(size=50), rng.normal(size=50)
    u.append(mmd2_unbiased(X, Y, kernel))
    v.append(mmd2_biased(X, Y, kernel))
u, v = np.array(u), np.array(v)
print("same distribution, m=n=50, 500 draws")
print(f"  unbiased: mean {u.mean():+.5f}  (standard error {u.std(ddof=1) / math.sqrt(len(u)):.5f})")
print(f"  biased:   mean {v.mean():+.5f}  (always >= 0)")

X, Y = rng.normal(size=500), rng.normal(0.5, 1.0, size=500)
print(f"shifted by .5: unbiased {mmd2_unbiased(X, Y, kernel):.4f}, biased {mmd2_biased(X, Y, kernel):.4f}")
