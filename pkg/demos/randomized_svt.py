"""
Randomized singular value thresholding on tensors
=================================================

Compare the sketched t-SVT with the exact one and see what sketch size
and power iterations buy.
"""

import time

import numpy as np

from letc import tensor as tc
from letc.graphs import build_temporal_adjacency, tgft_transform

rng = np.random.default_rng(1)

# a 200 x 150 x 14 tensor whose transformed slices have rank 5, plus noise
t = tgft_transform(build_temporal_adjacency(14, 7))
low = np.einsum("irk,jrk->ijk", rng.standard_normal((200, 5, 14)), rng.standard_normal((150, 5, 14)))
m = tc.mode3_inverse_transform(low, t) + 0.01 * rng.standard_normal((200, 150, 14))

t0 = time.perf_counter()
exact = tc.t_svt(m, t, 1.0)
print(f"exact t-SVT   {time.perf_counter() - t0:.3f} s")

for k, p in [(5, 0), (5, 1), (10, 1), (20, 2)]:
    t0 = time.perf_counter()
    approx = tc.randomized_t_svt(m, t, 1.0, rank_k=k, power_p=p, oversample_s=10, rng=rng)
    dt = time.perf_counter() - t0
    err = np.linalg.norm(approx - exact) / np.linalg.norm(exact)
    print(f"k={k:2d} p={p}     {dt:.3f} s   relative error {err:.2e}")

# the t-SVD itself: factors, sorted singular values, exact reconstruction
f = tc.t_svd(m[:20, :10], t)
print("leading singular values of the first slice:", f.singular_values()[0, :6].round(2))
print("reconstruction error:", np.linalg.norm(f.reconstruct() - m[:20, :10]))
