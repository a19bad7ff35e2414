import json

import numpy as np
import pytest

from letc.cli import main, resolve_settings, build_parser
from letc.harness import read_values


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["generate", "--locations", "20", "--intervals-per-day", "6", "--days", "4",
                 "--period", "2", "--seed", "1", "--unobserved", "0.25", "--out-dir", str(root)]) == 0
    return root


def data_flags(d):
    return ["--values", str(d / "values.csv"), "--graph", str(d / "graph.csv"),
            "--intervals-per-day", "6"]


def test_generate_writes_files(data):
    ids, values = read_values(data / "values.csv")
    assert values.shape == (24, 20)
    assert (np.isnan(values).all(axis=0)).sum() == 5
    _, truth = read_values(data / "truth.csv")
    assert np.isfinite(truth).all()


def test_krige_success_and_outputs(data, tmp_path, capsys):
    out = tmp_path / "z.csv"
    assert main(["krige", *data_flags(data), "--out", str(out)]) == 0
    ids, z = read_values(out)
    _, v = read_values(data / "values.csv")
    assert z.shape == v.shape and np.isfinite(z).all()
    obs = np.isfinite(v)
    np.testing.assert_array_equal(z[obs], v[obs])
    diag = json.loads((tmp_path / "z.csv.diagnostics.json").read_text())
    assert diag["converged"] and diag["records"]
    manifest = json.loads((tmp_path / "z.csv.manifest.json").read_text())
    assert manifest["config"]["lambda1"] == 0.01 and manifest["inputs"]["intervals_per_day"] == 6
    stdout = capsys.readouterr().out
    assert "seconds" not in stdout and "time" not in stdout.lower().replace("time points", "")


def test_krige_manifest_reproduces_output(data, tmp_path):
    first = tmp_path / "a.csv"
    assert main(["krige", *data_flags(data), "--out", str(first), "--seed", "5",
                 "--lambda1", "0.05"]) == 0
    again = tmp_path / "b.csv"
    assert main(["krige", *data_flags(data), "--out", str(again),
                 "--config", str(tmp_path / "a.csv.manifest.json")]) == 0
    assert first.read_bytes() == again.read_bytes()


def test_krige_missing_file(tmp_path, capsys):
    rc = main(["krige", "--values", str(tmp_path / "nope.csv"), "--graph", "g.csv",
               "--intervals-per-day", "2", "--out", str(tmp_path / "o.csv")])
    assert rc == 1
    assert "nope.csv" in capsys.readouterr().err


def test_krige_non_convergence(data, tmp_path):
    out = tmp_path / "z.csv"
    assert main(["krige", *data_flags(data), "--out", str(out), "--max-iters", "1"]) == 2
    assert out.exists()
    assert not json.loads((tmp_path / "z.csv.diagnostics.json").read_text())["converged"]


def test_evaluate_repeats(data, capsys):
    args = ["evaluate", *data_flags(data), "--sm", "0.2", "--tm", "0.1", "--em", "0.2",
            "--seed", "3", "--repeats", "5"]
    assert main(args) == 0
    first = capsys.readouterr().out
    lines = first.strip().splitlines()
    assert len(lines) == 1 + 5 + 1
    assert "MAE/RMSE" in lines[-1] and "±" in lines[-1]
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_evaluate_empty_holdout(data, capsys):
    assert main(["evaluate", *data_flags(data), "--sm", "0", "--tm", "0", "--em", "0"]) == 0
    assert "metrics absent" in capsys.readouterr().out


@pytest.mark.parametrize("flag", ["--sm", "--tm", "--em"])
def test_evaluate_invalid_rate(data, flag, capsys):
    assert main(["evaluate", *data_flags(data), flag, "1.2"]) == 1
    assert "must lie in" in capsys.readouterr().err


def test_evaluate_report_file(data, tmp_path):
    out = tmp_path / "rep.json"
    assert main(["evaluate", *data_flags(data), "--repeats", "2", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["repeats"]) == 2 and rep["manifest"]["scenario"]["repeats"] == 2


def test_sweep(data, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LETC_THREADS", "2")
    out = tmp_path / "res.csv"
    assert main(["sweep", *data_flags(data), "--sm", "0.2", "0.4", "--lambda1-grid", "0.01", "0.1",
                 "--repeats", "2", "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "scenario,seed,lambda1,lambda2,tau,MAE,RMSE,WMAPE,iters,seconds"
    assert len(rows) == 1 + 2 * 2 * 2
    summary = json.loads((tmp_path / "res.csv.summary.json").read_text())
    assert len(summary["summary"]) == 4 and summary["failures"] == []


def test_sweep_delta_grid_labels(data, tmp_path):
    out = tmp_path / "res.csv"
    assert main(["sweep", *data_flags(data), "--delta-grid", "0.5", "2", "--out", str(out)]) == 0
    text = out.read_text()
    assert "@delta=0.5" in text and "@delta=2" in text


def test_selftest_clean(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "tol=" in out


def test_selftest_fault(capsys):
    assert main(["selftest", "--fault", "svt"]) == 3
    captured = capsys.readouterr()
    assert "svt" in captured.err
    assert "FAIL\tsvt" in captured.out


def test_selftest_list(capsys):
    assert main(["selftest", "--list"]) == 0
    out = capsys.readouterr().out
    assert {line.split("\t")[0] for line in out.splitlines()} == \
        {"svt", "cg", "closed_form", "adjacency", "kernel_laplacian"}


def test_selftest_unknown_check():
    assert main(["selftest", "nope"]) == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lambda1": 0.5, "lambda2": 0.7, "delta": 2.0}))
    parser = build_parser()
    args = parser.parse_args(["krige", "--values", "v", "--graph", "g", "--intervals-per-day", "1",
                              "--out", "o", "--config", str(cfg), "--lambda2", "0.9"])
    config, graph = resolve_settings(args)
    assert config.lambda1 == 0.5          # file beats default
    assert config.lambda2 == 0.9          # flag beats file
    assert config.tau == 1                # default
    assert graph["delta"] == 2.0


def test_config_unknown_key(data, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lamda1": 0.5}))
    assert main(["krige", *data_flags(data), "--out", str(tmp_path / "o.csv"),
                 "--config", str(cfg)]) == 1
    assert "lamda1" in capsys.readouterr().err
