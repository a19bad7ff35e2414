"""Data ingestion, masking scenarios, synthetic data and parameter sweeps."""
from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import tensor as tc
from .graphs import SpatialGraph, gaussian_adjacency
from .solver import ObservationSet, SolverConfig, evaluate, solve

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("scenario", "seed", "lambda1", "lambda2", "tau", "MAE", "RMSE", "WMAPE",
                  "iters", "seconds")


class DatasetError(ValueError):
    """Malformed input file."""


@dataclass
class SpeedDataset:
    """Speed matrix (time points x locations) with its sensor graph data.

    ``values`` uses NaN for missing readings. ``distances`` is (J, J) with
    NaN where unknown; ``edges`` is a boolean (J, J) mask of directed edges.
    """

    values: np.ndarray
    intervals_per_day: int
    location_ids: list
    distances: np.ndarray
    edges: np.ndarray
    coordinates: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        rows, J = self.values.shape
        if rows % self.intervals_per_day:
            raise DatasetError(f"{rows} rows is not a multiple of intervals per day "
                               f"{self.intervals_per_day}")
        if len(self.location_ids) != J:
            raise DatasetError(f"{len(self.location_ids)} location ids for {J} value columns")
        if self.distances.shape != (J, J) or self.edges.shape != (J, J):
            raise DatasetError("graph arrays do not match the number of locations")
        if (self.distances[np.isfinite(self.distances)] < 0).any():
            raise DatasetError("negative distance")

    @property
    def days(self) -> int:
        return self.values.shape[0] // self.intervals_per_day

    @property
    def observed(self) -> np.ndarray:
        return np.isfinite(self.values)

    def graph(self, sigma=None, delta=1.0, degree_mode="out") -> SpatialGraph:
        return gaussian_adjacency(self.distances, self.edges, sigma=sigma, delta=delta,
                                  degree_mode=degree_mode)


# --------------------------------------------------------------------------- #
# ingestion
# --------------------------------------------------------------------------- #

def _sniff(path):
    with open(path, newline="") as fh:
        sample = fh.read(4096)
    try:
        return csv.Sniffer().sniff(sample, delimiters=",;\t").delimiter
    except csv.Error:
        return ","


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    delim = _sniff(path)
    with open(path, newline="") as fh:
        rows = [(n, [c.strip() for c in row]) for n, row in enumerate(csv.reader(fh, delimiter=delim), 1)]
    return [(n, r) for n, r in rows if r and any(r)]


def _parse_float(cell, path, line):
    try:
        v = float(cell)
    except ValueError:
        raise DatasetError(f"{path}:{line}: not a number: {cell!r}") from None
    if not math.isfinite(v):
        raise DatasetError(f"{path}:{line}: non-finite value {cell!r}; leave the cell empty for missing data")
    return v


def read_values(path):
    """Read a value table: header of location ids, one row per time point.

    Empty cells are missing readings and become NaN.
    """
    rows = _read_rows(path)
    if not rows:
        raise DatasetError(f"{path}: empty value file")
    _, header = rows[0]
    if len(set(header)) != len(header):
        raise DatasetError(f"{path}:1: duplicate location ids in header")
    values = np.full((len(rows) - 1, len(header)), np.nan)
    for r, (line, row) in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{line}: expected {len(header)} cells, found {len(row)}")
        for c, cell in enumerate(row):
            if cell != "":
                values[r, c] = _parse_float(cell, path, line)
    return header, values


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_graph(path, location_ids):
    """Read an edge list ``src,dst,distance`` or a coordinate table ``id,x,y``.

    The format is taken from the header when it names the columns, otherwise
    inferred from the cells. Returns ``(distances, edges, coordinates)``.
    Coordinate tables produce a complete directed graph over distinct sensors.
    """
    rows = _read_rows(path)
    if not rows:
        raise DatasetError(f"{path}: empty graph file")
    index = {lid: i for i, lid in enumerate(location_ids)}
    J = len(location_ids)
    width = {len(r) for _, r in rows}
    if width != {3}:
        raise DatasetError(f"{path}: graph rows must have exactly 3 columns, found {sorted(width)}")

    first = [c.lower() for c in rows[0][1]]
    kind = None
    if first == ["src", "dst", "distance"]:
        kind, rows = "edges", rows[1:]
    elif first == ["id", "x", "y"]:
        kind, rows = "coords", rows[1:]
    elif not _is_number(first[2]):
        # unnamed header row; infer the format from the data
        rows = rows[1:]
    if kind is None:
        as_edges = all(r[0] in index and r[1] in index and _is_number(r[2]) for _, r in rows)
        as_coords = all(r[0] in index and _is_number(r[1]) and _is_number(r[2]) for _, r in rows)
        if as_edges and as_coords:
            raise DatasetError(f"{path}: ambiguous graph file; add a header "
                               "'src,dst,distance' or 'id,x,y'")
        if not (as_edges or as_coords):
            for line, r in rows:
                if r[0] not in index:
                    raise DatasetError(f"{path}:{line}: unknown location id {r[0]!r}")
                if not _is_number(r[1]) and r[1] not in index:
                    raise DatasetError(f"{path}:{line}: unknown location id {r[1]!r}")
            raise DatasetError(f"{path}: cannot determine graph file format")
        kind = "edges" if as_edges else "coords"

    dist = np.full((J, J), np.nan)
    np.fill_diagonal(dist, 0.0)
    edges = np.zeros((J, J), dtype=bool)
    coords = None
    if kind == "edges":
        for line, (src, dst, d) in rows:
            for lid in (src, dst):
                if lid not in index:
                    raise DatasetError(f"{path}:{line}: unknown location id {lid!r}")
            v = _parse_float(d, path, line)
            if v < 0:
                raise DatasetError(f"{path}:{line}: negative distance {v}")
            i, j = index[src], index[dst]
            if i == j:
                continue
            dist[i, j] = v
            edges[i, j] = True
    else:
        coords = np.full((J, 2), np.nan)
        for line, (lid, x, y) in rows:
            if lid not in index:
                raise DatasetError(f"{path}:{line}: unknown location id {lid!r}")
            coords[index[lid]] = (_parse_float(x, path, line), _parse_float(y, path, line))
        missing = [location_ids[i] for i in np.flatnonzero(np.isnan(coords[:, 0]))]
        if missing:
            raise DatasetError(f"{path}: no coordinates for locations {missing[:5]}")
        dist = cdist(coords, coords)
        edges = ~np.eye(J, dtype=bool)
    return dist, edges, coords


def load_dataset(value_path, graph_path, intervals_per_day) -> SpeedDataset:
    ids, values = read_values(value_path)
    if intervals_per_day < 1 or values.shape[0] % intervals_per_day:
        raise DatasetError(f"{value_path}: {values.shape[0]} time points is not a multiple of "
                           f"intervals per day {intervals_per_day}")
    dist, edges, coords = read_graph(graph_path, ids)
    return SpeedDataset(values=values, intervals_per_day=intervals_per_day, location_ids=ids,
                        distances=dist, edges=edges, coordinates=coords)


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and not math.isfinite(v)) else repr(float(v))


def write_values(path, values, location_ids):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(location_ids)
        for row in np.asarray(values, dtype=float):
            w.writerow([_fmt(v) for v in row])


def write_graph(path, ds: SpeedDataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "distance"])
        for i, j in zip(*np.nonzero(ds.edges)):
            w.writerow([ds.location_ids[i], ds.location_ids[j], repr(float(ds.distances[i, j]))])


# --------------------------------------------------------------------------- #
# masking scenarios
# --------------------------------------------------------------------------- #

def round_half_up(x) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class MaskScenario:
    """Structured masking: hidden locations, hidden time points, random elements."""

    sm_rate: float = 0.0
    tm_rate: float = 0.0
    em_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sm_rate", "tm_rate", "em_rate"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")

    @property
    def name(self) -> str:
        return f"SM{self.sm_rate:g}/TM{self.tm_rate:g}/EM{self.em_rate:g}"


def apply_scenario(ds: SpeedDataset, sc: MaskScenario):
    """Hide locations, time points and random elements.

    Returns ``(ObservationSet, ground_truth)``. The holdout set is every
    originally observed entry hidden by the scenario. Elementwise masking is
    applied to the entries left observed after the structured masks.
    """
    rows, J = ds.values.shape
    n_sm = round_half_up(sc.sm_rate * J)
    n_tm = round_half_up(sc.tm_rate * rows)
    if n_sm >= J or n_tm >= rows:
        raise ValueError(f"scenario {sc.name} hides every location or every time point")
    rng = np.random.default_rng(sc.seed)
    hidden = np.zeros((rows, J), dtype=bool)
    hidden[:, rng.choice(J, n_sm, replace=False)] = True
    hidden[rng.choice(rows, n_tm, replace=False), :] = True
    observed = ds.observed
    remaining = np.flatnonzero((observed & ~hidden).ravel())
    n_em = round_half_up(sc.em_rate * remaining.size)
    if n_em:
        hidden.ravel()[rng.choice(remaining, n_em, replace=False)] = True
    mask = observed & ~hidden
    if not mask.any():
        raise ValueError(f"scenario {sc.name} leaves no observations")
    holdout = observed & hidden
    values = np.where(mask, ds.values, 0.0)
    obs = ObservationSet(values=values, mask=mask, intervals_per_day=ds.intervals_per_day,
                         holdout=holdout)
    return obs, ds.values.copy()


# --------------------------------------------------------------------------- #
# synthetic data
# --------------------------------------------------------------------------- #

def _daily_profiles(I):
    """Smooth time-of-day basis: free flow, morning and evening congestion."""
    h = np.arange(I) * 24.0 / I

    def bump(center, width):
        # wrapped Gaussian so the curve is periodic over the day
        d = np.minimum(np.abs(h - center), 24 - np.abs(h - center))
        return np.exp(-0.5 * (d / width) ** 2)

    return np.stack([np.ones(I), bump(8.0, 1.5), bump(17.5, 2.0)], axis=1)


def generate_synthetic(J, I, K, period=7, noise_sd=1.0, seed=0, basis_count=3,
                       radius_percentile=20.0):
    """Low-rank synthetic speed data on a random geometric directed graph.

    Speeds are ``sum_r f_r(time of day) * w_r(location) * c_r(day)`` where the
    location loadings are smoothed by one step of the normalized adjacency and
    the day factors repeat with ``period``. Each daily slice has rank at most
    ``basis_count`` (3).

    Returns
    -------
    dataset : SpeedDataset
        Noisy observations (fully observed).
    truth : ndarray, (I*K, J)
        Noiseless speeds.
    """
    if min(J, I, K) < 2:
        raise ValueError("J, I and K must all be >= 2")
    if period < 1:
        raise ValueError("period must be >= 1")
    if basis_count != 3:
        raise ValueError("the synthetic generator uses exactly 3 basis curves")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 10.0, size=(J, 2))
    dist = cdist(coords, coords)
    off = ~np.eye(J, dtype=bool)
    radius = np.percentile(dist[off], radius_percentile)
    close = np.triu((dist <= radius) & off)
    both = rng.random((J, J)) < 0.5
    flip = rng.random((J, J)) < 0.5
    edges = (close & (both | ~flip)) | (close & (both | flip)).T
    graph = gaussian_adjacency(dist, edges)

    F = _daily_profiles(I)                                   # (I, 3)
    W = np.column_stack([rng.uniform(55.0, 70.0, J),
                         -rng.uniform(5.0, 30.0, J),
                         -rng.uniform(5.0, 30.0, J)])
    W = graph.normalized_adjacency() @ W                     # (J, 3)
    dow = np.arange(K) % period
    phase = rng.uniform(0, 2 * np.pi, 2)
    C = np.column_stack([np.ones(K),
                         0.6 + 0.4 * np.cos(2 * np.pi * dow / period + phase[0]),
                         0.6 + 0.4 * np.cos(2 * np.pi * dow / period + phase[1])])
    X = np.einsum("ir,jr,kr->ijk", F, W, C)
    truth = tc.matricize(X)
    noisy = truth + noise_sd * rng.standard_normal(truth.shape) if noise_sd > 0 else truth.copy()
    ids = [f"s{j:04d}" for j in range(J)]
    dist_known = np.where(edges | np.eye(J, dtype=bool), dist, np.nan)
    ds = SpeedDataset(values=noisy, intervals_per_day=I, location_ids=ids,
                      distances=dist_known, edges=edges, coordinates=coords)
    return ds, truth


# --------------------------------------------------------------------------- #
# baselines
# --------------------------------------------------------------------------- #

def neighbor_mean_baseline(obs: ObservationSet, graph: SpatialGraph) -> np.ndarray:
    """Fill each missing entry from the sensor's graph neighbours.

    At a given time, the estimate is the transition-weighted mean of the
    neighbours observed at that time; when none are, it is the weighted mean
    of the neighbours' column means, and finally the global mean.
    """
    A = graph.normalized_adjacency()
    np.fill_diagonal(A, 0.0)
    M = obs.mask.astype(float)
    V = np.where(obs.mask, obs.values, 0.0)
    num, den = V @ A.T, M @ A.T
    col_cnt = M.sum(axis=0)
    col_mean = np.divide(V.sum(axis=0), col_cnt, out=np.zeros_like(col_cnt), where=col_cnt > 0)
    has = (col_cnt > 0).astype(float)
    nb_num, nb_den = A @ (col_mean * has), A @ has
    global_mean = V.sum() / max(M.sum(), 1.0)
    fallback = np.where(nb_den > 0, nb_num / np.where(nb_den > 0, nb_den, 1.0), global_mean)
    est = np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback[None, :])
    return np.where(obs.mask, obs.values, est)


# --------------------------------------------------------------------------- #
# sweeps
# --------------------------------------------------------------------------- #

@dataclass
class SweepResult:
    rows: list
    failures: list = field(default_factory=list)

    def summary(self) -> list:
        """Mean and std of the metrics per (scenario, lambda1, lambda2, tau)."""
        groups = {}
        for r in self.rows:
            key = (r["scenario"], r["lambda1"], r["lambda2"], r["tau"])
            groups.setdefault(key, []).append(r)
        out = []
        for (scenario, l1, l2, tau), rs in groups.items():
            entry = {"scenario": scenario, "lambda1": l1, "lambda2": l2, "tau": tau, "n": len(rs)}
            for m in ("MAE", "RMSE", "WMAPE"):
                vals = np.array([r[m] for r in rs if r[m] is not None], dtype=float)
                entry[f"{m}_mean"] = float(vals.mean()) if vals.size else None
                entry[f"{m}_std"] = float(vals.std()) if vals.size else None
            out.append(entry)
        return out

    def write(self, path):
        write_results(path, self.rows)


def write_results(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r["scenario"], r["seed"], repr(r["lambda1"]), repr(r["lambda2"]),
                        r["tau"], _fmt(r["MAE"]), _fmt(r["RMSE"]), _fmt(r["WMAPE"]), r["iters"],
                        f"{r['seconds']:.6f}"])


def read_results(path):
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = dict(rec)
            for k in ("lambda1", "lambda2", "MAE", "RMSE", "WMAPE", "seconds"):
                row[k] = float(row[k]) if row[k] != "" else None
            for k in ("seed", "tau", "iters"):
                row[k] = int(row[k])
            out.append(row)
    return out


def run_cell(ds: SpeedDataset, scenario: MaskScenario, config: SolverConfig, graph=None) -> dict:
    graph = graph if graph is not None else ds.graph()
    t0 = time.perf_counter()
    obs, truth = apply_scenario(ds, scenario)
    z_hat, diag = solve(obs, graph, config)
    metrics = evaluate(z_hat, truth, obs.holdout) if obs.holdout.any() else None
    return {"scenario": scenario.name, "seed": scenario.seed, "lambda1": config.lambda1,
            "lambda2": config.lambda2, "tau": config.tau,
            "MAE": metrics.mae if metrics else None, "RMSE": metrics.rmse if metrics else None,
            "WMAPE": metrics.wmape if metrics else None, "iters": diag.iterations,
            "seconds": time.perf_counter() - t0, "converged": diag.converged}


def run_sweep(ds: SpeedDataset, scenarios: Sequence[MaskScenario],
              configs: Sequence[SolverConfig], seeds: Optional[Sequence[int]] = None,
              threads: int = 1, graph=None) -> SweepResult:
    """Evaluate every scenario x config (x seed) cell.

    ``seeds`` replaces each scenario's seed in turn (repeated masking draws);
    the solver seed of each cell is derived from the config seed and the cell
    index. A failing cell is logged in ``failures`` and the sweep continues.
    """
    if not scenarios or not configs:
        raise ValueError("scenarios and configs must be nonempty")
    graph = graph if graph is not None else ds.graph()
    cells = []
    for sc, cfg in itertools.product(scenarios, configs):
        for s in (seeds if seeds is not None else [sc.seed]):
            cells.append((MaskScenario(sc.sm_rate, sc.tm_rate, sc.em_rate, s), cfg))

    def work(idx_cell):
        idx, (sc, cfg) = idx_cell
        child = int(np.random.SeedSequence([cfg.seed, idx]).generate_state(1)[0])
        try:
            return run_cell(ds, sc, cfg.updated(seed=child), graph), None
        except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the sweep
            log.warning("sweep cell %s failed: %s", sc.name, exc)
            return None, {"scenario": sc.name, "seed": sc.seed, "lambda1": cfg.lambda1,
                          "lambda2": cfg.lambda2, "tau": cfg.tau, "error": repr(exc)}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, enumerate(cells)))
    else:
        results = [work(c) for c in enumerate(cells)]
    rows = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    return SweepResult(rows=rows, failures=failures)
