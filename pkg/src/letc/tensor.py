"""Third-order tensor algebra under an orthonormal mode-3 transform.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n1, n2, n3)``. In the
solver the axes are (time of day, location, day). All slice-wise work is done
on stacked ``(n3, n1, n2)`` views so numpy's batched linear algebra handles
the per-slice loop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearTransform:
    """Invertible transform applied along the third tensor mode.

    ``matrix`` must satisfy ``L @ L.T == L.T @ L == scale * I``. The inverse
    is ``L.T / scale``.
    """

    matrix: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        L = np.asarray(self.matrix, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValueError(f"transform matrix must be square, got shape {L.shape}")
        if self.scale <= 0:
            raise ValueError("transform scale must be positive")
        n = L.shape[0]
        gram = L @ L.T
        err = max(np.abs(gram - self.scale * np.eye(n)).max(),
                  np.abs(L.T @ L - self.scale * np.eye(n)).max())
        if err > 1e-10 * max(1.0, self.scale):
            raise ValueError(f"transform is not orthonormal (max deviation {err:.3e})")
        L.setflags(write=False)
        object.__setattr__(self, "matrix", L)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def inverse_matrix(self) -> np.ndarray:
        return self.matrix.T / self.scale

    @classmethod
    def identity(cls, n: int) -> "LinearTransform":
        return cls(np.eye(n))


@dataclass
class TSvdFactors:
    """t-SVD factors ``M = U * S * V^T`` stored in the transformed domain.

    ``U_bar``, ``S_bar`` and ``V_bar`` hold the per-slice factors of the
    transformed tensor; ``U``, ``S`` and ``V`` give the spatial-domain tensors.
    """

    U_bar: np.ndarray  # (n1, r, n3)
    S_bar: np.ndarray  # (r, r, n3), f-diagonal
    V_bar: np.ndarray  # (n2, r, n3)
    transform: LinearTransform

    @property
    def U(self):
        return mode3_inverse_transform(self.U_bar, self.transform)

    @property
    def S(self):
        return mode3_inverse_transform(self.S_bar, self.transform)

    @property
    def V(self):
        return mode3_inverse_transform(self.V_bar, self.transform)

    def singular_values(self) -> np.ndarray:
        """Return an ``(n3, r)`` array of per-slice singular values."""
        return np.stack([np.diag(self.S_bar[:, :, i]) for i in range(self.S_bar.shape[2])])

    def reconstruct(self) -> np.ndarray:
        return t_product(t_product(self.U, self.S, self.transform),
                         transpose(self.V, self.transform), self.transform)


def _check_tensor(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"{name} must be a third-order tensor, got ndim={x.ndim}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {x.shape}")
    return x


def _check_transform(x, t):
    if t.size != x.shape[2]:
        raise ValueError(
            f"transform size {t.size} does not match third dimension {x.shape[2]}")


def mode3_transform(x, t: LinearTransform) -> np.ndarray:
    """Apply ``t`` to every tubal fiber: ``out[i, j, :] = L @ x[i, j, :]``."""
    x = _check_tensor(x)
    _check_transform(x, t)
    return x @ t.matrix.T


def mode3_inverse_transform(x, t: LinearTransform) -> np.ndarray:
    """Inverse of :func:`mode3_transform` (multiplication by ``L^T / l``)."""
    x = _check_tensor(x)
    _check_transform(x, t)
    return x @ t.inverse_matrix.T


def _slices(x_bar):
    # (n1, n2, n3) -> (n3, n1, n2)
    return np.moveaxis(x_bar, 2, 0)


def _unslices(s):
    return np.ascontiguousarray(np.moveaxis(s, 0, 2))


def transpose(x, t: LinearTransform) -> np.ndarray:
    """Tensor transpose: every transformed frontal slice is transposed.

    For a real transform this is the plain transpose of every spatial-domain
    slice, since the transform acts on the third mode only.
    """
    x = _check_tensor(x)
    _check_transform(x, t)
    return np.ascontiguousarray(np.transpose(x, (1, 0, 2)))


def t_product(a, b, t: LinearTransform) -> np.ndarray:
    """Transform-induced t-product: slice-wise matrix products in the transformed domain."""
    a = _check_tensor(a, "a")
    b = _check_tensor(b, "b")
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"t-product shape mismatch: {a.shape} and {b.shape}")
    a_bar = _slices(mode3_transform(a, t))
    b_bar = _slices(mode3_transform(b, t))
    return mode3_inverse_transform(_unslices(a_bar @ b_bar), t)


def _sign_fix(u, vt):
    """Make the largest-magnitude entry of each left singular vector nonnegative.

    ``u`` is ``(..., m, r)`` and ``vt`` is ``(..., r, n)``. First occurrence wins
    on magnitude ties.
    """
    idx = np.argmax(np.abs(u), axis=-2)
    pivot = np.take_along_axis(u, idx[..., None, :], axis=-2)
    signs = np.where(pivot < 0, -1.0, 1.0)
    return u * signs, vt * np.swapaxes(signs, -1, -2)


def t_svd(m, t: LinearTransform) -> TSvdFactors:
    """Compact t-SVD with ``r = min(n1, n2)`` and a deterministic sign convention."""
    m = _check_tensor(m, "m")
    _check_transform(m, t)
    s_bar = _slices(mode3_transform(m, t))
    u, s, vt = np.linalg.svd(s_bar, full_matrices=False)
    u, vt = _sign_fix(u, vt)
    r = s.shape[-1]
    S = np.zeros((s.shape[0], r, r))
    S[:, np.arange(r), np.arange(r)] = s
    return TSvdFactors(U_bar=_unslices(u), S_bar=_unslices(S),
                       V_bar=_unslices(np.swapaxes(vt, -1, -2)), transform=t)


def t_tnn(x, t: LinearTransform) -> float:
    """Transform-induced tensor nuclear norm (sum of slice nuclear norms)."""
    x = _check_tensor(x)
    _check_transform(x, t)
    s = np.linalg.svd(_slices(mode3_transform(x, t)), compute_uv=False)
    return float(s.sum())


def _svt_slices(slices, threshold):
    """Soft-threshold the singular values of a stack of matrices."""
    out = np.zeros_like(slices)
    # all-zero slices are skipped and stay zero
    live = np.any(slices != 0, axis=(-2, -1))
    if not live.any():
        return out
    u, s, vt = np.linalg.svd(slices[live], full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    out[live] = (u * s[..., None, :]) @ vt
    return out


def t_svt(m, t: LinearTransform, threshold: float) -> np.ndarray:
    """Tensor singular value thresholding.

    Returns the minimiser of ``||X||_t* + (1 / (2 * threshold)) ||X - m||_F^2``,
    i.e. the proximal operator of the t-TNN with step ``threshold``.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    m = _check_tensor(m, "m")
    _check_transform(m, t)
    m_bar = _slices(mode3_transform(m, t))
    return mode3_inverse_transform(_unslices(_svt_slices(m_bar, threshold)), t)


def randomized_t_svt(m, t: LinearTransform, threshold: float, rank_k: int,
                     power_p: int = 1, oversample_s: int = 10, rng=None) -> np.ndarray:
    """Approximate :func:`t_svt` through a randomized range finder per slice.

    Each transformed slice ``A`` (n1 x n2) is handled through its transpose:
    ``G = A^T @ Omega`` with one Gaussian ``Omega`` of shape (n1, k + s) shared
    by all slices, ``power_p`` rounds of ``G <- A^T A G``, ``Q = qr(G)``,
    ``B = Q^T A^T``; then ``svt(A^T) ~= Q @ svt(B)``.

    Parameters
    ----------
    m : ndarray, shape (n1, n2, n3)
    t : LinearTransform
    threshold : float
        Singular value shrinkage (``1 / mu`` in the ADMM X-step).
    rank_k : int
        Target rank, ``1 <= rank_k < min(n1, n2)``.
    power_p : int
        Number of power iterations.
    oversample_s : int
        Extra sketch columns.
    rng : numpy Generator, int or None
        Source of the Gaussian test matrix.
    """
    m = _check_tensor(m, "m")
    _check_transform(m, t)
    n1, n2, _ = m.shape
    if not 1 <= rank_k < min(n1, n2):
        raise ValueError(f"rank_k must satisfy 1 <= rank_k < {min(n1, n2)}, got {rank_k}")
    if power_p < 0 or oversample_s < 0:
        raise ValueError("power_p and oversample_s must be nonnegative")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    rng = np.random.default_rng(rng)

    a = _slices(mode3_transform(m, t))          # (n3, n1, n2)
    at = np.swapaxes(a, -1, -2)                 # (n3, n2, n1)
    width = min(rank_k + oversample_s, n2)
    omega = rng.standard_normal((n1, width))
    g = at @ omega                              # (n3, n2, width)
    for _ in range(power_p):
        # re-orthonormalise between passes; same range, better conditioning
        g, _r = np.linalg.qr(g)
        g = at @ (a @ g)
    q, _r = np.linalg.qr(g)                     # (n3, n2, width)
    b = np.swapaxes(q, -1, -2) @ at             # (n3, width, n1)
    at_thr = q @ _svt_slices(b, threshold)      # (n3, n2, n1)
    return mode3_inverse_transform(_unslices(np.swapaxes(at_thr, -1, -2)), t)


def tensorize(z, i_per_day: int) -> np.ndarray:
    """Fold an (I*K) x J matrix into an I x J x K tensor.

    Days are contiguous row blocks: ``X[i, j, k] = Z[k * I + i, j]``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("z must be a matrix")
    rows, cols = z.shape
    if i_per_day < 1 or rows % i_per_day:
        raise ValueError(f"row count {rows} is not divisible by intervals per day {i_per_day}")
    k = rows // i_per_day
    return np.ascontiguousarray(z.reshape(k, i_per_day, cols).transpose(1, 2, 0))


def matricize(x) -> np.ndarray:
    """Inverse of :func:`tensorize`."""
    x = _check_tensor(x)
    i, j, k = x.shape
    return np.ascontiguousarray(x.transpose(2, 0, 1).reshape(k * i, j))
