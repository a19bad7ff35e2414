"""
The three graphs behind the model
=================================

Day-to-day periodic graph and its Fourier basis, the directed temporal
kernel operator, and the spatial random-walk operator.
"""

import numpy as np

from letc.graphs import (DiffusionKernel, build_temporal_adjacency, dgr_penalty,
                         diffusion_operator, gaussian_adjacency, gtcr_penalty,
                         temporal_kernel_laplacian, tgft_transform)

np.set_printoptions(precision=3, suppress=True)

# six days with a three-day period: neighbours are the adjacent days and
# the same day of the previous / next period
g = build_temporal_adjacency(6, 3)
print(g.adjacency)

# the transform used along the day axis diagonalises the day Laplacian
t = tgft_transform(g)
print("eigenvalues:", g.eigvals)
print("constant signal in the spectral domain:", t.matrix @ np.ones(6))

# temporal kernel with window 2: each point is compared with the two before it
k = temporal_kernel_laplacian(6, 2)
print(k.operator.toarray())
ramp = np.arange(6.0)
print("penalty of a ramp:", gtcr_penalty(ramp, k), " of a constant:", gtcr_penalty(np.ones(6), k))

# a directed sensor graph from pairwise distances
rng = np.random.default_rng(0)
pts = rng.uniform(0, 5, (5, 2))
dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
sg = gaussian_adjacency(dist, dist < 3.0)
print("row-stochastic transition matrix:\n", sg.normalized_adjacency())

# diffusion variants and the resulting spatial penalty of a random signal
z = rng.standard_normal((4, 5))
for kern in (DiffusionKernel("one_step"), DiffusionKernel("high_order", steps=3),
             DiffusionKernel("ppr", alpha=0.3), DiffusionKernel("heat", time=0.5),
             DiffusionKernel("bidirectional")):
    h = diffusion_operator(sg, kern)
    print(f"{kern.variant:14s} row sums {h.sum(axis=1).round(6)}  penalty {dgr_penalty(z, sg, kern):.3f}")
