"""ADMM solver: low-rank tensor completion with graph Laplacian penalties (LETC).

The model estimates a full (I*K) x J speed matrix ``Z`` by minimising

    ||T(Z)||_t*  +  lam1/2 ||L_s Z^T||_F^2  +  lam2/2 ||Phi L_Phi Z||_F^2

subject to ``P * Z = P * T_obs``. The nuclear norm is taken under the TGFT
along the day mode, ``L_s`` is the spatial diffusion Laplacian and
``Phi L_Phi`` the truncated temporal kernel Laplacian over all I*K time points.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import tensor as tc
from .graphs import (DiffusionKernel, SpatialGraph, build_temporal_adjacency, dgr_laplacian,
                     temporal_kernel_laplacian, tgft_transform)

log = logging.getLogger(__name__)


class NumericalDivergenceError(ArithmeticError):
    """Raised when an inner solve produces non-finite values.

    ``state`` holds a snapshot of the arrays involved for post-mortem analysis.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


@dataclass
class ObservationSet:
    """Observed speeds, their mask, and the held-out evaluation entries.

    values : (I*K, J) array; entries where ``mask`` is False are ignored.
    mask : (I*K, J) bool array, True where observed.
    intervals_per_day : I.
    holdout : (I*K, J) bool array of masked-but-known entries, or None.
    """

    values: np.ndarray
    mask: np.ndarray
    intervals_per_day: int
    holdout: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask).astype(bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError("values and mask must be matrices of equal shape")
        if self.values.shape[0] % self.intervals_per_day:
            raise ValueError(f"row count {self.values.shape[0]} is not divisible by "
                             f"intervals per day {self.intervals_per_day}")
        if not np.isfinite(self.values[self.mask]).all():
            raise ValueError("observed entries must be finite")
        if self.holdout is not None:
            self.holdout = np.asarray(self.holdout).astype(bool)
            if self.holdout.shape != self.mask.shape:
                raise ValueError("holdout shape does not match mask")
            if (self.holdout & self.mask).any():
                raise ValueError("holdout entries overlap observed entries")

    @property
    def shape(self):
        return self.values.shape

    @property
    def days(self) -> int:
        return self.values.shape[0] // self.intervals_per_day


@dataclass
class SolverConfig:
    lambda1: float = 0.01
    lambda2: float = 0.1
    tau: int = 1
    mu0: float = 1e-3
    mu_growth: float = 1.5
    mu_max: float = 1e4
    epsilon: float = 1e-3
    max_outer_iters: int = 200
    cg_iters: int = 3
    rank_k0: int = 10
    rank_step: int = 10
    rank_cap: Optional[int] = None
    power_p: int = 1
    oversample_s: int = 10
    exact_svt: bool = False
    kernel: str = "one_step"
    kernel_steps: int = 2
    kernel_alpha: float = 0.15
    kernel_time: float = 1.0
    temporal_variant: str = "truncated"
    period: int = 7
    omega1: float = 1.0
    omegaT: float = 1.0
    decay: Optional[float] = None
    weekend_weight: Optional[float] = None
    weekend_days: int = 2
    init: str = "mean"
    track_objective: bool = True
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.lambda1 >= 0 and self.lambda2 >= 0, "lambda1 and lambda2 must be nonnegative"),
            (self.tau >= 1, "tau must be >= 1"),
            (self.mu0 > 0, "mu0 must be positive"),
            (self.mu_growth > 1, "mu_growth must be > 1"),
            (self.mu_max >= self.mu0, "mu_max must be >= mu0"),
            (self.epsilon > 0, "epsilon must be positive"),
            (self.max_outer_iters >= 1, "max_outer_iters must be >= 1"),
            (self.cg_iters >= 1, "cg_iters must be >= 1"),
            (self.rank_k0 >= 1 and self.rank_step >= 0, "invalid rank schedule"),
            (self.rank_cap is None or self.rank_cap >= 1, "rank_cap must be >= 1"),
            (self.power_p >= 0 and self.oversample_s >= 0, "invalid sketch parameters"),
            (self.period >= 1, "period must be >= 1"),
            (self.init in ("zero", "mean"), "init must be 'zero' or 'mean'"),
            (self.temporal_variant in ("truncated", "full", "symmetric"),
             f"unknown temporal_variant {self.temporal_variant!r}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        self.diffusion_kernel()   # validates the kernel fields

    def diffusion_kernel(self) -> DiffusionKernel:
        return DiffusionKernel(self.kernel, steps=self.kernel_steps, alpha=self.kernel_alpha,
                               time=self.kernel_time)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**d)

    def updated(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class SolverState:
    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    mu: float
    k: int
    iteration: int = 0
    rel_change: float = float("inf")
    objective_trace: list = field(default_factory=list)


@dataclass
class Diagnostics:
    converged: bool
    iterations: int
    rel_change: list
    mu: list
    rank: list
    objective: list
    cg_residuals: list
    timings: dict
    best_iteration: int
    wall_time: float

    def records(self) -> list:
        """One dict per outer iteration."""
        return [
            {"iteration": j + 1, "e": self.rel_change[j], "mu": self.mu[j], "k": self.rank[j],
             "objective": self.objective[j] if self.objective else None}
            for j in range(self.iterations)
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["records"] = self.records()
        return d


@dataclass
class Problem:
    """Operators precomputed once per solve."""

    intervals_per_day: int
    transform: tc.LinearTransform
    spatial_gram: object      # J x J, sparse or dense
    temporal_gram: sp.csr_matrix
    spatial_op: sp.csr_matrix
    temporal_op: sp.csr_matrix

    @classmethod
    def build(cls, shape, intervals_per_day, spatial: SpatialGraph, config: SolverConfig,
              transform: Optional[tc.LinearTransform] = None) -> "Problem":
        rows, J = shape
        if spatial.n_nodes != J:
            raise ValueError(f"graph has {spatial.n_nodes} nodes, data has {J} locations")
        K = rows // intervals_per_day
        if transform is None:
            period = min(config.period, K)
            weekend = None
            if config.weekend_weight is not None:
                weekend = (config.weekend_weight, config.weekend_days)
            g = build_temporal_adjacency(K, period, config.omega1, config.omegaT,
                                         decay=config.decay, weekend=weekend)
            transform = tgft_transform(g)
        Ls = dgr_laplacian(spatial, config.diffusion_kernel())
        Lt = temporal_kernel_laplacian(rows, config.tau, config.temporal_variant)
        return cls(intervals_per_day=intervals_per_day, transform=transform,
                   spatial_gram=_gram(Ls), temporal_gram=Lt.gram(),
                   spatial_op=Ls, temporal_op=Lt.operator)


def _gram(op):
    g = (op.T @ op).tocsr()
    n = g.shape[0]
    # dense BLAS beats sparse products once the gram fills in
    if g.nnz > 0.1 * n * n:
        return g.toarray()
    return g


def rank_cap(shape, config: SolverConfig) -> int:
    """Upper bound of the rank schedule.

    ``min(I, J) - oversample_s - 1`` when positive, else ``min(I, J) - 1``.
    """
    I, J = shape[0], shape[1]
    if config.rank_cap is not None:
        return max(1, min(config.rank_cap, min(I, J) - 1))
    cap = min(I, J) - config.oversample_s - 1
    if cap < 1:
        cap = min(I, J) - 1
    return max(cap, 1)


def x_update(state: SolverState, config: SolverConfig, problem: Problem, rng=None) -> np.ndarray:
    """``X <- D_{1/mu}(T(Z) - Y / mu)`` via (randomized) t-SVT."""
    if state.mu <= 0:
        raise ValueError("mu must be positive")
    M = tc.tensorize(state.Z, problem.intervals_per_day) - state.Y / state.mu
    n1, n2, _ = M.shape
    if config.exact_svt or min(n1, n2) < 2:
        return tc.t_svt(M, problem.transform, 1.0 / state.mu)
    k = max(1, min(state.k, min(n1, n2) - 1))
    return tc.randomized_t_svt(M, problem.transform, 1.0 / state.mu, k,
                               config.power_p, config.oversample_s, rng=rng)


def apply_system(Q, mu, lambda1, lambda2, problem: Problem) -> np.ndarray:
    """``lam1 Q Ls^T Ls + lam2 Lt^T Lt Q + mu Q`` as two matrix products."""
    out = mu * Q
    if lambda1:
        out += lambda1 * np.asarray(problem.spatial_gram.T @ Q.T).T
    if lambda2:
        out += lambda2 * np.asarray(problem.temporal_gram @ Q)
    return out


def z_update_cg(state: SolverState, config: SolverConfig, problem: Problem,
                residuals: Optional[list] = None, iters: Optional[int] = None,
                tol: float = 1e-13) -> np.ndarray:
    """Conjugate gradient on the Z-subproblem, warm-started at ``state.Z``.

    Solves ``lam1 Z Ls^T Ls + lam2 Lt^T Lt Z + mu Z = mu T^{-1}(X + Y / mu)``
    without forming the Kronecker system. Iteration stops early once the
    residual falls below ``tol`` times the right-hand side norm. When
    ``residuals`` is a list, the residual norms are appended to it.
    """
    mu = state.mu
    lam1, lam2 = config.lambda1, config.lambda2
    if lam1 < 0 or lam2 < 0:
        raise ValueError("lambda1 and lambda2 must be nonnegative")
    iters = config.cg_iters if iters is None else iters
    b = mu * tc.matricize(state.X + state.Y / mu)
    z = state.Z.copy()
    r = b - apply_system(z, mu, lam1, lam2, problem)
    q = r.copy()
    rr = float(np.vdot(r, r))
    if not np.isfinite(rr):
        raise NumericalDivergenceError(
            "non-finite right-hand side or iterate in conjugate gradient",
            state={"Z": state.Z.copy(), "X": state.X.copy(), "Y": state.Y.copy(), "mu": mu})
    stop = (tol * np.linalg.norm(b)) ** 2
    if residuals is not None:
        residuals.append(np.sqrt(rr))
    for _ in range(iters):
        if rr <= stop:
            break
        vq = apply_system(q, mu, lam1, lam2, problem)
        alpha = rr / float(np.vdot(q, vq))
        z += alpha * q
        r -= alpha * vq
        rr_new = float(np.vdot(r, r))
        if not np.isfinite(rr_new):
            raise NumericalDivergenceError(
                "non-finite residual in conjugate gradient",
                state={"Z": state.Z.copy(), "X": state.X.copy(), "Y": state.Y.copy(), "mu": mu})
        if residuals is not None:
            residuals.append(np.sqrt(rr_new))
        q = r + (rr_new / rr) * q
        rr = rr_new
    return z


def dual_update(state: SolverState, problem: Problem) -> np.ndarray:
    """``Y <- Y + mu (X - T(Z))``."""
    return state.Y + state.mu * (state.X - tc.tensorize(state.Z, problem.intervals_per_day))


def transmit_observations(z, obs: ObservationSet) -> np.ndarray:
    """Overwrite observed entries of ``z`` with the observations."""
    z = np.asarray(z, dtype=float)
    if z.shape != obs.shape:
        raise ValueError(f"z has shape {z.shape}, observations have {obs.shape}")
    return np.where(obs.mask, obs.values, z)


def augmented_lagrangian(X, Z, Y, mu, config: SolverConfig, problem: Problem) -> float:
    """Augmented Lagrangian of the LETC model at ``(X, Z, Y)``."""
    TZ = tc.tensorize(Z, problem.intervals_per_day)
    diff = X - TZ
    spatial = problem.spatial_op @ Z.T
    temporal = problem.temporal_op @ Z
    return float(tc.t_tnn(X, problem.transform)
                 + 0.5 * config.lambda1 * np.sum(np.square(spatial))
                 + 0.5 * config.lambda2 * np.sum(np.square(temporal))
                 + np.vdot(Y, diff) + 0.5 * mu * np.vdot(diff, diff))


def initial_state(obs: ObservationSet, config: SolverConfig) -> SolverState:
    if config.init == "mean":
        # column means of the observations; fully hidden columns get the global mean
        V = np.where(obs.mask, obs.values, 0.0)
        cnt = obs.mask.sum(axis=0)
        overall = V.sum() / cnt.sum() if cnt.sum() else 0.0
        col = np.divide(V.sum(axis=0), cnt, out=np.full(obs.shape[1], overall), where=cnt > 0)
        Z = np.broadcast_to(col, obs.shape).copy()
    else:
        Z = np.zeros(obs.shape)
    Z = transmit_observations(Z, obs)
    I = obs.intervals_per_day
    X = tc.tensorize(Z, I)
    return SolverState(X=X, Z=Z, Y=np.zeros_like(X), mu=config.mu0, k=config.rank_k0)


def solve(obs: ObservationSet, spatial: SpatialGraph, config: SolverConfig = SolverConfig(),
          transform: Optional[tc.LinearTransform] = None,
          callback: Optional[Callable[[SolverState], None]] = None):
    """Run the LETC ADMM iterations.

    Parameters
    ----------
    obs : ObservationSet
    spatial : SpatialGraph
        Sensor graph with one node per column of ``obs.values``.
    config : SolverConfig
    transform : LinearTransform, optional
        Day-mode transform; the TGFT built from ``config`` by default.
    callback : callable, optional
        Called with the state after each outer iteration (before the ``mu`` /
        rank schedule update), e.g. to snapshot iterates.

    Returns
    -------
    Z_hat : ndarray, (I*K, J)
        Estimate; observed entries equal ``obs.values`` exactly.
    diagnostics : Diagnostics
        ``converged`` is False when ``max_outer_iters`` ran out, in which case
        ``Z_hat`` is the iterate with the smallest relative change.
    """
    t_start = time.perf_counter()
    problem = Problem.build(obs.shape, obs.intervals_per_day, spatial, config, transform)
    tensor_shape = (obs.intervals_per_day, obs.shape[1], obs.days)
    cap = rank_cap(tensor_shape, config)
    rng = np.random.default_rng(config.seed)
    state = initial_state(obs, config)
    state.k = min(state.k, cap)

    timings = {"setup": time.perf_counter() - t_start, "x_update": 0.0, "z_update": 0.0,
               "dual_update": 0.0, "objective": 0.0}
    e_trace, mu_trace, k_trace, obj_trace, cg_trace = [], [], [], [], []
    best_Z, best_e, best_it = state.Z, float("inf"), 0
    converged = False

    for j in range(config.max_outer_iters):
        t0 = time.perf_counter()
        state.X = x_update(state, config, problem, rng)
        t1 = time.perf_counter()
        Z_prev = state.Z
        res = []
        Z_new = z_update_cg(state, config, problem, residuals=res)
        state.Z = transmit_observations(Z_new, obs)
        t2 = time.perf_counter()
        state.Y = dual_update(state, problem)
        t3 = time.perf_counter()
        denom = np.linalg.norm(Z_prev)
        e = np.linalg.norm(state.Z - Z_prev) / denom if denom > 0 else float(np.linalg.norm(state.Z) > 0)
        state.rel_change = float(e)
        state.iteration = j + 1
        if config.track_objective:
            state.objective_trace.append(
                augmented_lagrangian(state.X, state.Z, state.Y, state.mu, config, problem))
            obj_trace.append(state.objective_trace[-1])
        t4 = time.perf_counter()
        timings["x_update"] += t1 - t0
        timings["z_update"] += t2 - t1
        timings["dual_update"] += t3 - t2
        timings["objective"] += t4 - t3
        e_trace.append(state.rel_change)
        mu_trace.append(state.mu)
        k_trace.append(state.k)
        cg_trace.append(res)
        if not np.isfinite(state.Z).all():
            raise NumericalDivergenceError("non-finite iterate", state={"Z": state.Z.copy(), "mu": state.mu})
        if callback is not None:
            callback(state)
        if state.rel_change <= best_e:
            best_Z, best_e, best_it = state.Z, state.rel_change, j + 1
        log.debug("iter %d e=%.3e mu=%.3g k=%d", j + 1, e, state.mu, state.k)

        state.mu = min(config.mu_growth * state.mu, config.mu_max)
        state.k = min(state.k + config.rank_step, cap)
        if state.rel_change < config.epsilon:
            converged = True
            break

    Z_hat = state.Z if converged else best_Z
    diag = Diagnostics(converged=converged, iterations=state.iteration, rel_change=e_trace,
                       mu=mu_trace, rank=k_trace, objective=obj_trace, cg_residuals=cg_trace,
                       timings=timings, best_iteration=state.iteration if converged else best_it,
                       wall_time=time.perf_counter() - t_start)
    return Z_hat.copy(), diag


@dataclass
class Metrics:
    mae: float
    rmse: float
    wmape: Optional[float]
    count: int

    def as_dict(self):
        return asdict(self)


def evaluate(z_hat, ground_truth, holdout) -> Metrics:
    """MAE, RMSE and WMAPE over the held-out entries.

    WMAPE is ``sum|x - x_hat| / sum|x|`` and is None when ``sum|x| == 0``.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    truth = np.asarray(ground_truth, dtype=float)
    holdout = np.asarray(holdout).astype(bool)
    if not holdout.any():
        raise ValueError("holdout set is empty")
    x = truth[holdout]
    if not np.isfinite(x).all():
        raise ValueError("ground truth is not finite on the holdout set")
    err = x - z_hat[holdout]
    abs_err = np.abs(err)
    denom = np.abs(x).sum()
    return Metrics(mae=float(abs_err.mean()), rmse=float(np.sqrt(np.mean(err ** 2))),
                   wmape=float(abs_err.sum() / denom) if denom > 0 else None,
                   count=int(holdout.sum()))
