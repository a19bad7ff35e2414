"""Graph Laplacians used by the kriging model.

Three graphs are involved:

* a symmetric day-to-day / day-of-week graph whose Laplacian eigenvectors give
  the temporal graph Fourier transform (TGFT) applied along the day mode;
* a directed circulant time-of-day graph (kernel size ``tau``) whose truncated
  Laplacian penalises non-smooth time series;
* a directed, weighted sensor graph whose random-walk Laplacian (optionally
  replaced by a diffusion kernel) penalises differences between a sensor and
  the aggregate of its neighbours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.stats

from .tensor import LinearTransform

__all__ = [
    "graph_laplacian", "TemporalPeriodicGraph", "build_temporal_adjacency",
    "tgft_transform", "TemporalKernelLaplacian", "temporal_kernel_laplacian",
    "gtcr_penalty", "SpatialGraph", "gaussian_adjacency", "DiffusionKernel",
    "diffusion_operator", "dgr_laplacian", "dgr_penalty",
    "graph_smooth_closed_form",
]

_TAIL_TOL = 1e-8
_MAX_TRUNCATION = 64


def graph_laplacian(w) -> np.ndarray:
    """Combinatorial Laplacian ``D - W`` with ``D`` the diagonal of row sums."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weight matrix must be square, got {w.shape}")
    if (w < 0).any():
        raise ValueError("weight matrix has negative entries")
    return np.diag(w.sum(axis=1)) - w


def _sign_fix_columns(u):
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs


# --------------------------------------------------------------------------- #
# temporal periodic graph -> TGFT
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TemporalPeriodicGraph:
    days: int
    period: int
    omega1: float
    omegaT: float
    adjacency: np.ndarray
    laplacian: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    decay: Optional[float] = None
    weekend: Optional[tuple] = None


def build_temporal_adjacency(days, period, omega1=1.0, omegaT=1.0, decay=None,
                             weekend=None) -> TemporalPeriodicGraph:
    """Build the day-mode adjacency, its Laplacian and eigen-decomposition.

    ``A = I + P1 + P1^T + sum_n (P_T(n) + P_T(n)^T)`` where ``P1`` holds
    ``omega1`` on the first subdiagonal and ``P_T(n)`` holds the period-``n``
    weight on the ``n * period``-th subdiagonal, for ``n = 1 .. (days-1)//period``.

    Parameters
    ----------
    days, period : int
        Number of days ``D`` and period length ``T`` (``1 <= T <= D``).
    omega1, omegaT : float
        Day-to-day and day-of-week weights.
    decay : float, optional
        ``beta`` in (0, 1); period ``n`` then gets ``beta * (1 - beta)**n * omegaT``.
    weekend : tuple, optional
        ``(omega2, n_weekend)``. Consecutive-day links touching the weekend
        days of every period get ``omega2`` instead of ``omega1``.
    """
    D, T = int(days), int(period)
    if D < 1:
        raise ValueError("days must be >= 1")
    if not 1 <= T <= D:
        raise ValueError(f"period must satisfy 1 <= period <= days, got period={T}, days={D}")
    if omega1 < 0 or omegaT < 0:
        raise ValueError("weights must be nonnegative")
    if decay is not None and not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")

    link = np.full(D - 1, float(omega1))
    if weekend is not None:
        omega2, n_weekend = weekend
        n_weekend = int(n_weekend)
        if omega2 < 0:
            raise ValueError("weekend weight must be nonnegative")
        n_weekday = T - 2 * n_weekend + 1
        if n_weekday < 0 or n_weekend < 1:
            raise ValueError(f"period {T} cannot hold {n_weekend} weekend days")
        h = np.array([omega1] * n_weekday + [omega2] * (2 * n_weekend - 1), dtype=float)
        link = np.resize(h, D - 1)

    A = np.eye(D)
    A += np.diag(link, -1) + np.diag(link, 1)
    for n in range(1, (D - 1) // T + 1):
        w = omegaT if decay is None else decay * (1 - decay) ** n * omegaT
        band = np.full(D - n * T, float(w))
        A += np.diag(band, -n * T) + np.diag(band, n * T)

    L = graph_laplacian(A)
    try:
        vals, vecs = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigen-decomposition of temporal Laplacian failed: {exc}") from exc
    vecs = _sign_fix_columns(vecs)
    return TemporalPeriodicGraph(days=D, period=T, omega1=float(omega1), omegaT=float(omegaT),
                                 adjacency=A, laplacian=L, eigvals=vals, eigvecs=vecs,
                                 decay=decay, weekend=weekend)


def tgft_transform(g: TemporalPeriodicGraph) -> LinearTransform:
    """TGFT as a mode-3 transform: forward ``U^T``, inverse ``U``."""
    return LinearTransform(g.eigvecs.T)


# --------------------------------------------------------------------------- #
# directed circulant temporal kernel
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TemporalKernelLaplacian:
    """Circulant directed Laplacian of the kernel ``(tau, -1 x tau, 0, ...)``.

    ``variant`` selects the operator used by the penalty:

    ``"truncated"``  ``Phi @ L`` (first ``tau`` rows removed, no wrap-around)
    ``"full"``       ``L`` itself (``Phi = I``)
    ``"symmetric"``  ``L @ L.T`` (``Phi = I``), an undirected circulant Laplacian
    """

    horizon: int
    tau: int
    variant: str = "truncated"
    operator: sp.csr_matrix = field(repr=False, default=None)

    @property
    def circulant(self) -> np.ndarray:
        return scipy.linalg.circulant(_kernel(self.horizon, self.tau))

    @property
    def truncation(self) -> sp.csr_matrix:
        T, tau = self.horizon, self.tau
        return sp.hstack([sp.csr_matrix((T - tau, tau)), sp.identity(T - tau, format="csr")],
                         format="csr")

    def gram(self) -> sp.csr_matrix:
        """``operator^T @ operator``; banded, ``T x T``."""
        return (self.operator.T @ self.operator).tocsr()


def _kernel(T, tau):
    k = np.zeros(T)
    k[0] = tau
    k[1:tau + 1] = -1.0
    return k


def temporal_kernel_laplacian(horizon, tau, variant="truncated") -> TemporalKernelLaplacian:
    T, tau = int(horizon), int(tau)
    if not 1 <= tau < T:
        raise ValueError(f"kernel size must satisfy 1 <= tau < horizon, got tau={tau}, horizon={T}")
    # circulant with first column k: L[i, (i - d) % T] = k[d]
    offsets = [0] + [-d for d in range(1, tau + 1)] + [T - d for d in range(1, tau + 1)]
    values = [float(tau)] + [-1.0] * tau + [-1.0] * tau
    L = sp.diags(values, offsets, shape=(T, T), format="csr")
    if variant == "truncated":
        op = L[tau:, :]
    elif variant == "full":
        op = L
    elif variant == "symmetric":
        op = (L @ L.T).tocsr()
    else:
        raise ValueError(f"unknown temporal operator variant {variant!r}")
    op = sp.csr_matrix(op)
    op.eliminate_zeros()
    return TemporalKernelLaplacian(horizon=T, tau=tau, variant=variant, operator=op)


def gtcr_penalty(z, k: TemporalKernelLaplacian) -> float:
    """Temporal consistency penalty ``||Op @ Z||_F^2`` along the rows of ``z``."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != k.horizon:
        raise ValueError(f"z has {z.shape[0]} rows, operator horizon is {k.horizon}")
    r = k.operator @ z
    return float(np.sum(r * r))


# --------------------------------------------------------------------------- #
# directed spatial graph and diffusion kernels
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SpatialGraph:
    """Directed weighted sensor graph.

    ``degree_mode="out"`` aggregates node ``i`` from its out-neighbours,
    ``A[i, :] / sum(A[i, :])``. ``"in"`` aggregates node ``j`` from its
    in-neighbours, ``A[:, j] / sum(A[:, j])``. Either way the normalized
    adjacency is row-stochastic. Isolated nodes get a self-loop row so their
    Laplacian row is zero.
    """

    adjacency: np.ndarray
    degree_mode: str = "out"
    sigma: Optional[float] = None
    delta: float = 1.0

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got {A.shape}")
        if (A < 0).any() or not np.isfinite(A).all():
            raise ValueError("adjacency must be finite and nonnegative")
        if self.degree_mode not in ("in", "out"):
            raise ValueError("degree_mode must be 'in' or 'out'")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self, mode=None) -> np.ndarray:
        mode = mode or self.degree_mode
        return self.adjacency.sum(axis=1 if mode == "out" else 0)

    def isolated(self, mode=None) -> np.ndarray:
        return self.degrees(mode) <= 0

    def normalized_adjacency(self, mode=None) -> np.ndarray:
        mode = mode or self.degree_mode
        A = self.adjacency if mode == "out" else self.adjacency.T
        d = A.sum(axis=1)
        out = np.zeros_like(A)
        pos = d > 0
        out[pos] = A[pos] / d[pos, None]
        iso = np.flatnonzero(~pos)
        out[iso, iso] = 1.0
        return out

    def random_walk_laplacian(self, mode=None) -> sp.csr_matrix:
        return sp.csr_matrix(np.eye(self.n_nodes) - self.normalized_adjacency(mode))


def gaussian_adjacency(dist, edges, sigma=None, delta=1.0, degree_mode="out") -> SpatialGraph:
    """Gaussian-kernel weights on a directed edge set.

    ``A[i, j] = exp(-(dist[i, j] / (delta * sigma))**2)`` when ``edges[i, j]``
    is set and ``i != j``; zero otherwise.

    Parameters
    ----------
    dist : array_like, (J, J)
        Nonnegative distances. Non-finite entries mark unknown distances and
        are ignored when estimating ``sigma``.
    edges : array_like
        Boolean ``(J, J)`` mask, or an iterable of ``(src, dst)`` index pairs.
    sigma : float, optional
        Kernel bandwidth; defaults to the standard deviation of the finite
        off-diagonal distance entries.
    delta : float
        Bandwidth scale.
    """
    dist = np.asarray(dist, dtype=float)
    J = dist.shape[0]
    if dist.shape != (J, J):
        raise ValueError(f"distance matrix must be square, got {dist.shape}")
    if (dist[np.isfinite(dist)] < 0).any():
        raise ValueError("distances must be nonnegative")
    mask = np.asarray(edges)
    if mask.dtype != bool:
        pairs = np.asarray(list(edges), dtype=int).reshape(-1, 2)
        mask = np.zeros((J, J), dtype=bool)
        mask[pairs[:, 0], pairs[:, 1]] = True
    if mask.shape != (J, J):
        raise ValueError("edge mask shape does not match distance matrix")
    mask = mask & ~np.eye(J, dtype=bool)
    if (mask & ~np.isfinite(dist)).any():
        raise ValueError("an edge has no finite distance")

    if sigma is None:
        finite = dist[np.isfinite(dist) & ~np.eye(J, dtype=bool)]
        sigma = float(np.std(finite)) if finite.size else 0.0
        if sigma <= 0:
            # degenerate (single or constant distance): fall back to the scale of the data
            sigma = float(np.mean(finite)) if finite.size and np.mean(finite) > 0 else 1.0
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if delta <= 0:
        raise ValueError("delta must be positive")

    A = np.zeros((J, J))
    A[mask] = np.exp(-(dist[mask] / (delta * sigma)) ** 2)
    return SpatialGraph(A, degree_mode=degree_mode, sigma=sigma, delta=delta)


@dataclass(frozen=True)
class DiffusionKernel:
    """Diffusion function ``h`` applied to the normalized adjacency.

    variant : ``"one_step"``, ``"high_order"`` (``steps``), ``"ppr"``
        (``alpha``), ``"heat"`` (``time``) or ``"bidirectional"``.
    truncation_order : int, optional
        Series length for ``ppr`` / ``heat``. By default the smallest order
        whose coefficient tail is at most 1e-8, capped at 64.
    """

    variant: str = "one_step"
    steps: int = 2
    alpha: float = 0.15
    time: float = 1.0
    truncation_order: Optional[int] = None

    def __post_init__(self):
        if self.variant not in ("one_step", "high_order", "ppr", "heat", "bidirectional"):
            raise ValueError(f"unknown diffusion kernel {self.variant!r}")
        if self.variant == "high_order" and self.steps < 1:
            raise ValueError("high_order kernel needs steps >= 1")
        if self.variant == "ppr" and not 0 < self.alpha < 1:
            raise ValueError("ppr alpha must lie in (0, 1)")
        if self.variant == "heat" and not self.time > 0:
            raise ValueError("heat kernel time must be positive")
        if self.truncation_order is not None and self.truncation_order < 0:
            raise ValueError("truncation_order must be nonnegative")

    def coefficients(self) -> np.ndarray:
        """Series coefficients ``c_k`` of ``h(A) = sum_k c_k A^k`` (ppr / heat)."""
        order = self.order()
        k = np.arange(order + 1)
        if self.variant == "ppr":
            return self.alpha * (1 - self.alpha) ** k
        if self.variant == "heat":
            return scipy.stats.poisson.pmf(k, self.time)
        raise ValueError(f"{self.variant} kernel has no series coefficients")

    def tail(self, order) -> float:
        if self.variant == "ppr":
            return (1 - self.alpha) ** (order + 1)
        return float(scipy.stats.poisson.sf(order, self.time))

    def order(self) -> int:
        if self.truncation_order is not None:
            return self.truncation_order
        if self.variant == "ppr":
            n = math.ceil(math.log(_TAIL_TOL) / math.log(1 - self.alpha)) - 1
            return int(min(max(n, 0), _MAX_TRUNCATION))
        for n in range(_MAX_TRUNCATION + 1):
            if self.tail(n) <= _TAIL_TOL:
                return n
        return _MAX_TRUNCATION


def diffusion_operator(g: SpatialGraph, k: DiffusionKernel = DiffusionKernel()) -> np.ndarray:
    """Materialize ``h(A_norm)``.

    For ``"bidirectional"`` the result is the average of the forward
    (out-degree) and backward (in-degree) transition matrices.
    """
    if k.variant == "bidirectional":
        return 0.5 * (g.normalized_adjacency("out") + g.normalized_adjacency("in"))
    A = g.normalized_adjacency()
    if k.variant == "one_step":
        return A
    if k.variant == "high_order":
        return np.linalg.matrix_power(A, k.steps)
    coef = k.coefficients()
    out = coef[0] * np.eye(g.n_nodes)
    power = np.eye(g.n_nodes)
    for c in coef[1:]:
        power = power @ A
        out += c * power
    return out


def dgr_laplacian(g: SpatialGraph, k: DiffusionKernel = DiffusionKernel()) -> sp.csr_matrix:
    """Operator ``L`` of the spatial penalty ``||L Z^T||_F^2``.

    ``I - h(A_norm)`` for the single-direction kernels and ``L_f + L_b`` for
    the bidirectional one.
    """
    h = diffusion_operator(g, k)
    scale = 2.0 if k.variant == "bidirectional" else 1.0
    return sp.csr_matrix(scale * (np.eye(g.n_nodes) - h))


def dgr_penalty(z, g: SpatialGraph, k: DiffusionKernel = DiffusionKernel()) -> float:
    """Diffusion graph penalty ``||L Z^T||_F^2`` for ``z`` of shape (time, J)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != g.n_nodes:
        raise ValueError(f"z must have {g.n_nodes} columns, got shape {z.shape}")
    r = dgr_laplacian(g, k) @ z.T
    return float(np.sum(np.square(r)))


def graph_smooth_closed_form(x, g: SpatialGraph, step: float = 1.0,
                             k: DiffusionKernel = DiffusionKernel()) -> np.ndarray:
    """Solve ``(I + step * L) X_bar = X`` for node signals stacked along rows.

    With ``step = 1`` this is the closed-form minimiser of the degree-weighted
    reconstruction loss plus graph Dirichlet energy; ``I - step * L`` is its
    first-order (explicit Euler) approximation.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != g.n_nodes:
        raise ValueError(f"x must have {g.n_nodes} rows, got {x.shape[0]}")
    M = np.eye(g.n_nodes) + step * dgr_laplacian(g, k).toarray()
    try:
        return np.linalg.solve(M, x)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"smoothing system is singular: {exc}") from exc
