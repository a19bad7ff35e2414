"""Acceptance criteria. Each test carries ``@pytest.mark.criterion(n)``;
conftest prints one PASS/FAIL line per criterion at the end of the run."""
import os
import re
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg

from letc import tensor as tc
from letc.cli import main
from letc.graphs import (SpatialGraph, build_temporal_adjacency, gaussian_adjacency,
                         graph_smooth_closed_form, temporal_kernel_laplacian)
from letc.harness import (MaskScenario, apply_scenario, generate_synthetic,
                          neighbor_mean_baseline, write_graph, write_values)
from letc.selftest import (dense_sylvester_solve, low_rank_tensor, random_directed_graph,
                           random_orthonormal)
from letc.solver import (ObservationSet, Problem, SolverConfig, SolverState, evaluate, solve,
                         z_update_cg)

# Values recorded from the first oracle run of criterion 5 (generate_synthetic
# I=48, J=100, K=14, T=7, noise_sd=1.0, seed=1; scenario SM0.3/TM0.2/EM0.2, mask seed 1).
RECORDED_RMSE = {"letc": 2.1085774338978402, "neighbor_mean": 3.327221500474342,
                 "low_rank": 8.288511651433167}


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.criterion(1)
def test_randomized_svt_oracle():
    worst = 0.0
    start = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = low_rank_tensor((8, 12, 5), int(rng.integers(1, 5)), rng)
        t = tc.LinearTransform(random_orthonormal(5, rng))
        thr = float(rng.uniform(0.05, 1.0))
        exact = tc.t_svt(m, t, thr)
        approx = tc.randomized_t_svt(m, t, thr, rank_k=4, power_p=2, oversample_s=6, rng=rng)
        worst = max(worst, rel(approx, exact))
    elapsed = time.perf_counter() - start
    print(f"worst relative error {worst:.2e}, {elapsed:.3f} s")
    assert worst <= 1e-6
    assert elapsed < 1.0


@pytest.mark.criterion(2)
def test_cg_sylvester_oracle():
    worst, elapsed = 0.0, 0.0
    I, J, K = 6, 8, 4
    for seed in range(10):
        rng = np.random.default_rng(seed)
        config = SolverConfig(lambda1=0.1, lambda2=0.1)
        problem = Problem.build((I * K, J), I, random_directed_graph(J, rng), config,
                                transform=tc.LinearTransform(random_orthonormal(K, rng)))
        state = SolverState(X=rng.standard_normal((I, J, K)), Z=rng.standard_normal((I * K, J)),
                            Y=rng.standard_normal((I, J, K)), mu=1.0, k=1)
        t0 = time.perf_counter()
        z = z_update_cg(state, config, problem, iters=50, tol=0.0)
        elapsed += time.perf_counter() - t0
        ref = dense_sylvester_solve(tc.matricize(state.X + state.Y), 1.0, 0.1, 0.1,
                                    problem.spatial_gram, problem.temporal_gram)
        worst = max(worst, rel(z, ref))
    print(f"worst relative error {worst:.2e}, {elapsed:.3f} s")
    assert worst <= 1e-8
    assert elapsed < 1.0


@pytest.mark.criterion(3)
def test_closed_form_oracle():
    rng = np.random.default_rng(2024)
    g = random_directed_graph(10, rng)
    x = rng.standard_normal((10, 4))
    # random-walk Laplacian assembled by hand from the raw weights
    W = g.adjacency
    L = np.eye(10) - W / W.sum(axis=1, keepdims=True)
    ref = scipy.linalg.lu_solve(scipy.linalg.lu_factor(np.eye(10) + L), x)
    err = np.abs(graph_smooth_closed_form(x, g) - ref).max()
    print(f"max abs error {err:.2e}")
    assert err <= 1e-10


@pytest.mark.criterion(4)
def test_temporal_adjacency_pattern():
    A = build_temporal_adjacency(6, 3, 1, 1).adjacency
    expected = np.array([
        [1, 1, 0, 1, 0, 0],
        [1, 1, 1, 0, 1, 0],
        [0, 1, 1, 1, 0, 1],
        [1, 0, 1, 1, 1, 0],
        [0, 1, 0, 1, 1, 1],
        [0, 0, 1, 0, 1, 1],
    ], dtype=float)
    np.testing.assert_array_equal(A, expected)


@pytest.mark.criterion(4)
def test_kernel_laplacian_structure():
    k = temporal_kernel_laplacian(3, 1)
    np.testing.assert_array_equal(k.circulant, [[1, 0, -1], [-1, 1, 0], [0, -1, 1]])
    np.testing.assert_array_equal(k.operator.toarray(), [[-1, 1, 0], [0, -1, 1]])


@pytest.mark.criterion(4)
@pytest.mark.parametrize("T", [3, 6, 10])
def test_gtcr_degenerate_operators(T):
    eye = np.eye(T)
    # tau = 1 without truncation: I minus the cyclic one-step shift
    np.testing.assert_array_equal(temporal_kernel_laplacian(T, 1, "full").operator.toarray(),
                                  eye - np.roll(eye, 1, axis=0))
    # L L^T without truncation: symmetric circulant Laplacian
    first = np.zeros(T)
    first[[0, 1, -1]] = [2, -1, -1]
    np.testing.assert_array_equal(temporal_kernel_laplacian(T, 1, "symmetric").operator.toarray(),
                                  scipy.linalg.circulant(first))
    # tau = 1 with the first row removed: first differences (quadratic variation)
    np.testing.assert_array_equal(temporal_kernel_laplacian(T, 1).operator.toarray(),
                                  np.diff(eye, axis=0))


@pytest.fixture(scope="module")
def kriging_fixture():
    ds, _ = generate_synthetic(100, 48, 14, period=7, noise_sd=1.0, seed=1)
    obs, truth = apply_scenario(ds, MaskScenario(0.3, 0.2, 0.2, seed=1))
    return ds, obs, truth


@pytest.mark.criterion(5)
def test_end_to_end_kriging(kriging_fixture):
    ds, obs, truth = kriging_fixture
    graph = ds.graph()
    start = time.perf_counter()
    z, diag = solve(obs, graph, SolverConfig(tau=1))
    z_low, _ = solve(obs, graph, SolverConfig(tau=1, lambda1=0.0, lambda2=0.0))
    elapsed = time.perf_counter() - start
    letc = evaluate(z, truth, obs.holdout).rmse
    low = evaluate(z_low, truth, obs.holdout).rmse
    nb = evaluate(neighbor_mean_baseline(obs, graph), truth, obs.holdout).rmse
    print(f"RMSE letc {letc:.4f}, neighbour mean {nb:.4f}, low rank {low:.4f}; {elapsed:.1f} s")
    assert letc < nb
    assert letc < low
    # the frozen thresholds from the recorded run
    assert letc < RECORDED_RMSE["neighbor_mean"]
    assert letc < RECORDED_RMSE["low_rank"]
    assert letc == pytest.approx(RECORDED_RMSE["letc"], rel=0.05)
    assert elapsed < 60.0


@pytest.mark.criterion(6)
def test_invariant_suite(kriging_fixture):
    start = time.perf_counter()
    rng = np.random.default_rng(6)

    # mask preservation, bit-exact
    ds, obs, _ = kriging_fixture
    small = ObservationSet(obs.values[:48 * 3, :30], obs.mask[:48 * 3, :30], 48)
    sub = ds.distances[:30, :30], ds.edges[:30, :30]
    z, _ = solve(small, gaussian_adjacency(*sub), SolverConfig(period=1))
    assert np.array_equal(z[small.mask], small.values[small.mask])

    # Laplacians annihilate constants exactly
    g = build_temporal_adjacency(14, 7)
    assert not (g.laplacian @ np.ones(14)).any()
    for tau in (1, 2, 3):
        assert not (temporal_kernel_laplacian(40, tau).operator @ np.ones(40)).any()
    A = np.array([[0, 0.5, 0.5, 0], [0.25, 0, 0.25, 0.5], [0, 2, 0, 0], [1, 0, 0, 0]])
    assert not (SpatialGraph(A).random_walk_laplacian() @ np.ones(4)).any()

    # transform round trip
    for n3 in (1, 5, 14):
        t = tc.LinearTransform(random_orthonormal(n3, rng))
        x = rng.standard_normal((6, 7, n3))
        back = tc.mode3_inverse_transform(tc.mode3_transform(x, t), t)
        assert np.linalg.norm(back - x) <= 1e-12 * np.linalg.norm(x)

    # CG residual monotone
    for seed in range(5):
        r = np.random.default_rng(seed)
        cfg = SolverConfig(lambda1=0.1, lambda2=0.3)
        prob = Problem.build((24, 8), 6, random_directed_graph(8, r), cfg,
                             transform=tc.LinearTransform.identity(4))
        st = SolverState(X=r.standard_normal((6, 8, 4)), Z=r.standard_normal((24, 8)),
                         Y=r.standard_normal((6, 8, 4)), mu=0.5, k=1)
        res = []
        z_update_cg(st, cfg, prob, residuals=res, iters=12)
        assert np.all(np.diff(res) <= 1e-12 * res[0])

    # TGFT eigenbasis diagonalises the temporal Laplacian
    for D, T in ((6, 3), (14, 7), (28, 7)):
        g = build_temporal_adjacency(D, T)
        M = g.eigvecs.T @ g.laplacian @ g.eigvecs
        assert np.abs(M - np.diag(np.diag(M))).max() <= 1e-9

    elapsed = time.perf_counter() - start
    print(f"{elapsed:.2f} s")
    assert elapsed < 30.0


def _z_update_time(J, repeats=25):
    ds, _ = generate_synthetic(J, 48, 14, period=7, seed=1)
    config = SolverConfig()
    problem = Problem.build((48 * 14, J), 48, ds.graph(), config)
    rng = np.random.default_rng(0)
    state = SolverState(X=rng.standard_normal((48, J, 14)), Z=rng.standard_normal((48 * 14, J)),
                        Y=rng.standard_normal((48, J, 14)), mu=1.0, k=10)
    z_update_cg(state, config, problem)   # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        z_update_cg(state, config, problem)
        times.append(time.perf_counter() - t0)
    return min(times)


@pytest.mark.criterion(7)
def test_z_update_scaling():
    t200, t400 = _z_update_time(200), _z_update_time(400)
    ratio = t400 / t200
    print(f"z-update J=200 {t200 * 1e3:.1f} ms, J=400 {t400 * 1e3:.1f} ms, ratio {ratio:.2f}")
    assert ratio <= 4.5


SUMMARY = re.compile(r"MAE/RMSE = \d+\.\d\d±\d+\.\d\d/\d+\.\d\d±\d+\.\d\d")


@pytest.mark.criterion(8)
def test_evaluate_report_format(tmp_path, capsys):
    ds, _ = generate_synthetic(20, 12, 4, period=2, seed=8)
    write_values(tmp_path / "v.csv", ds.values, ds.location_ids)
    write_graph(tmp_path / "g.csv", ds)
    assert main(["evaluate", "--values", str(tmp_path / "v.csv"), "--graph", str(tmp_path / "g.csv"),
                 "--intervals-per-day", "12", "--sm", "0.3", "--tm", "0.2", "--em", "0.2",
                 "--repeats", "2", "--seed", "0", "--tau", "1"]) == 0
    assert SUMMARY.search(capsys.readouterr().out)


@pytest.mark.criterion(8)
@pytest.mark.skipif(not os.environ.get("LETC_FULL_VALUES"),
                    reason="set LETC_FULL_VALUES, LETC_FULL_GRAPH and LETC_FULL_INTERVALS "
                           "to run on a full-size dataset")
def test_full_dataset(capsys):
    values = Path(os.environ["LETC_FULL_VALUES"])
    graph = Path(os.environ["LETC_FULL_GRAPH"])
    intervals = os.environ.get("LETC_FULL_INTERVALS", "288")
    assert main(["evaluate", "--values", str(values), "--graph", str(graph),
                 "--intervals-per-day", intervals, "--sm", "0.3", "--tm", "0.2", "--em", "0.2",
                 "--tau", "1", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    print(out)
    assert SUMMARY.search(out)
