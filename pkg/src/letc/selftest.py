"""Embedded oracle checks, run by ``letc selftest``.

Each check compares a fast code path against an independent dense
computation and reports the observed error next to its tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import tensor as tc
from .graphs import (SpatialGraph, build_temporal_adjacency, graph_smooth_closed_form,
                     temporal_kernel_laplacian)
from .solver import Problem, SolverConfig, SolverState, z_update_cg


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def _rel(a, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (nb if nb > 0 else 1.0))


def random_orthonormal(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def low_rank_tensor(shape, rank, rng):
    """Random tensor whose frontal slices all have rank <= ``rank``."""
    n1, n2, n3 = shape
    return np.einsum("irk,jrk->ijk", rng.standard_normal((n1, rank, n3)),
                     rng.standard_normal((n2, rank, n3)))


def random_directed_graph(n, rng, p=0.4):
    A = (rng.random((n, n)) < p) * rng.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(A, 0.0)
    # a directed ring keeps every node reachable
    ring = np.roll(np.eye(n), 1, axis=1) * rng.uniform(0.1, 1.0, n)[:, None]
    return SpatialGraph(np.maximum(A, ring))


def dense_sylvester_solve(b, mu, lambda1, lambda2, spatial_gram, temporal_gram):
    """Solve the vectorised Z-system through its explicit Kronecker matrix."""
    rows, J = b.shape
    Gs = spatial_gram.toarray() if sp.issparse(spatial_gram) else np.asarray(spatial_gram)
    Gt = temporal_gram.toarray() if sp.issparse(temporal_gram) else np.asarray(temporal_gram)
    M = (lambda1 * np.kron(Gs, np.eye(rows)) + lambda2 * np.kron(np.eye(J), Gt)
         + mu * np.eye(rows * J))
    z = np.linalg.solve(M, b.reshape(-1, order="F"))
    return z.reshape(rows, J, order="F")


def check_svt(fault=False, seed=0):
    """Randomized t-SVT against the exact t-SVT on low-rank tensors."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        m = low_rank_tensor((8, 12, 5), 4, rng)
        t = tc.LinearTransform(random_orthonormal(5, rng))
        exact = tc.t_svt(m, t, 0.5)
        approx = tc.randomized_t_svt(m, t, 0.5, rank_k=4, power_p=2, oversample_s=6, rng=rng)
        if fault:
            approx = approx + 1e-3 * rng.standard_normal(approx.shape)
        worst = max(worst, _rel(approx, exact))
    return CheckResult("svt", worst, 1e-6)


def check_cg(fault=False, seed=0):
    """Conjugate gradient Z-update against a dense Kronecker solve."""
    rng = np.random.default_rng(seed)
    I, J, K = 6, 8, 4
    cfg = SolverConfig(lambda1=0.1, lambda2=0.1, cg_iters=50)
    problem = Problem.build((I * K, J), I, random_directed_graph(J, rng), cfg,
                            transform=tc.LinearTransform.identity(K))
    X = rng.standard_normal((I, J, K))
    Y = rng.standard_normal((I, J, K))
    state = SolverState(X=X, Z=rng.standard_normal((I * K, J)), Y=Y, mu=1.0, k=1)
    z = z_update_cg(state, cfg, problem, tol=0.0)
    if fault:
        z = z + 1e-4
    ref = dense_sylvester_solve(tc.matricize(X + Y), 1.0, 0.1, 0.1,
                                problem.spatial_gram, problem.temporal_gram)
    return CheckResult("cg", _rel(z, ref), 1e-8)


def check_closed_form(fault=False, seed=0):
    """Graph smoothing closed form against a dense solve of (I + L) X_bar = X."""
    rng = np.random.default_rng(seed)
    g = random_directed_graph(10, rng)
    x = rng.standard_normal((10, 3))
    out = graph_smooth_closed_form(x, g)
    if fault:
        out = out * (1 + 1e-6)
    L = np.eye(10) - g.normalized_adjacency()
    ref = np.linalg.solve(np.eye(10) + L, x)
    return CheckResult("closed_form", float(np.abs(out - ref).max()), 1e-10)


def check_adjacency(fault=False, seed=0):
    """Periodic day adjacency (D=6, T=3) has nonzeros exactly at |i - j| in {0, 1, 3}."""
    A = build_temporal_adjacency(6, 3, 1.0, 1.0).adjacency
    idx = np.arange(6)
    gap = np.abs(idx[:, None] - idx[None, :])
    expected = np.isin(gap, (0, 1, 3)).astype(float)
    if fault:
        expected[0, 5] = 1.0
    return CheckResult("adjacency", float(np.abs(A - expected).max()), 0.0)


def check_kernel_laplacian(fault=False, seed=0):
    """Truncated circulant kernel operator for T=3, tau=1 is the first difference."""
    op = temporal_kernel_laplacian(3, 1).operator.toarray()
    expected = np.array([[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]])
    if fault:
        expected = -expected
    return CheckResult("kernel_laplacian", float(np.abs(op - expected).max()), 0.0)


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "svt": check_svt,
    "cg": check_cg,
    "closed_form": check_closed_form,
    "adjacency": check_adjacency,
    "kernel_laplacian": check_kernel_laplacian,
}


def run_checks(names=None, fault=None):
    names = list(CHECKS) if not names else list(names)
    unknown = set(names) - set(CHECKS)
    if fault is not None:
        unknown |= {fault} - set(CHECKS)
    if unknown:
        raise KeyError(f"unknown checks: {sorted(unknown)}")
    return [CHECKS[n](fault=(n == fault)) for n in names]
