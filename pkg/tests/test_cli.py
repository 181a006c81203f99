import csv
import json

import numpy as np
import pytest

from conftest import GOLDEN
from gabp import centralized, cli, model as M


def _gen(tmp_path, name="m.json", *extra):
    out = tmp_path / name
    code = cli.main(["generate", *extra, "--out", str(out)])
    return code, out


@pytest.fixture
def cycle_file(tmp_path):
    path = tmp_path / "cycle.json"
    M.save(M.unit_model([(0, 1), (1, 2), (0, 2)]), path)
    return path


@pytest.fixture
def divergent_file(tmp_path):
    code, path = _gen(tmp_path, "div.json", "--topology", "random", "--nodes", "5", "--edge-prob", "1",
                      "--dim", "2", "--coef", "random", "--prior-scale", "100", "--noise-anisotropy", "1e4",
                      "--seed", "1")
    assert code == 0
    return path


class TestGenerate:
    def test_cycle(self, tmp_path):
        code, out = _gen(tmp_path, "m.json", "--topology", "cycle", "--nodes", "3", "--seed", "1")
        assert code == 0
        m = M.load(out)
        assert m.num_agents == 3 and len(m.edges) == 3 and M.validate(m) == []

    def test_repeat_is_identical(self, tmp_path):
        args = ("--topology", "random", "--nodes", "6", "--coef", "random", "--dim", "2", "--seed", "4")
        _, a = _gen(tmp_path, "a.json", *args)
        _, b = _gen(tmp_path, "b.json", *args)
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("extra", [("--topology", "cycle", "--nodes", "1", "--seed", "1"),
                                       ("--topology", "cycle", "--seed", "1"),
                                       ("--topology", "moebius", "--nodes", "3", "--seed", "1"),
                                       ("--topology", "chain", "--nodes", "3", "--seed", "1", "--noise-scale", "0"),
                                       ("--topology", "dcflow", "--nodes", "3", "--edges", "0-x", "--seed", "1")])
    def test_invalid_args(self, tmp_path, extra):
        code, out = _gen(tmp_path, "m.json", *extra)
        assert code == cli.EXIT_USAGE and not out.exists()

    def test_generation_failure(self, tmp_path):
        code, _ = _gen(tmp_path, "m.json", "--topology", "random", "--nodes", "30", "--edge-prob", "0.01",
                       "--seed", "0")
        assert code == cli.EXIT_GENERATION
        code, _ = _gen(tmp_path, "m.json", "--topology", "dcflow", "--nodes", "3", "--edges", "0-1,1-0",
                       "--seed", "0")
        assert code == cli.EXIT_GENERATION

    def test_dcflow(self, tmp_path):
        code, out = _gen(tmp_path, "dc.json", "--topology", "dcflow", "--nodes", "3", "--edges", "0-1,1-2,2-0",
                         "--susceptances", "1,2,3", "--coef", "difference", "--seed", "0")
        assert code == 0
        assert sorted(abs(e.coef_i[0, 0]) for e in M.load(out).edges) == [1.0, 2.0, 3.0]


class TestRun:
    def test_cycle_converges(self, tmp_path, cycle_file):
        out, trace = tmp_path / "b.json", tmp_path / "t.csv"
        code = cli.main(["run", "--model", str(cycle_file), "--max-iters", "200", "--tol", "1e-12",
                         "--out", str(out), "--trace", str(trace)])
        assert code == 0
        data = json.loads(out.read_text())
        assert data["format_version"] == 1 and data["status"] == "Converged"
        _, est = centralized.estimate(M.load(cycle_file))
        means = np.concatenate([a["mean"] for a in data["agents"]])
        np.testing.assert_allclose(means, est.mean, rtol=1e-6)
        rows = list(csv.reader(trace.open()))
        assert rows[0] == ["round", "max_mean_delta", "max_info_delta", "messages", "scalars"]
        assert len(rows) == data["rounds"] + 1

    def test_zero_iterations(self, tmp_path, cycle_file):
        code = cli.main(["run", "--model", str(cycle_file), "--max-iters", "0", "--out", str(tmp_path / "b.json")])
        assert code == cli.EXIT_MAX_ITERS

    def test_divergent(self, tmp_path, divergent_file):
        code = cli.main(["run", "--model", str(divergent_file), "--max-iters", "20000",
                         "--out", str(tmp_path / "b.json")])
        assert code == cli.EXIT_DIVERGED
        assert json.loads((tmp_path / "b.json").read_text())["status"] == "Diverged"

    @pytest.mark.parametrize("content", ["{", '{"agents": [], "edges": 5}'])
    def test_malformed_model(self, tmp_path, content):
        bad = tmp_path / "bad.json"
        bad.write_text(content)
        assert cli.main(["run", "--model", str(bad), "--out", str(tmp_path / "b.json")]) == cli.EXIT_USAGE

    def test_invalid_model_content(self, tmp_path):
        bad = tmp_path / "bad.json"
        M.save(M.unit_model([(0, 1)], noise=0.0), bad)
        assert cli.main(["run", "--model", str(bad), "--out", str(tmp_path / "b.json")]) == cli.EXIT_USAGE

    def test_missing_file_and_bad_tol(self, tmp_path, cycle_file):
        assert cli.main(["run", "--model", str(tmp_path / "nope.json"), "--out", "x"]) == cli.EXIT_USAGE
        assert cli.main(["run", "--model", str(cycle_file), "--tol", "0", "--out", "x"]) == cli.EXIT_USAGE

    def test_figure(self, tmp_path, cycle_file):
        fig = tmp_path / "trace.png"
        cli.main(["run", "--model", str(cycle_file), "--out", str(tmp_path / "b.json"), "--figure", str(fig)])
        assert fig.read_bytes()[:4] == b"\x89PNG"


class TestAnalyze:
    def test_cycle(self, tmp_path, cycle_file):
        out = tmp_path / "r.json"
        assert cli.main(["analyze", "--model", str(cycle_file), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["rho"] == pytest.approx(GOLDEN ** 2, abs=1e-6)
        assert rep["converges"] and not rep["indeterminate"] and rep["bounds_ok"]
        assert rep["residuals"] and rep["format_version"] == 1

    def test_tree(self, tmp_path):
        _, model = _gen(tmp_path, "t.json", "--topology", "tree", "--nodes", "9", "--dim", "2",
                        "--coef", "random", "--seed", "3")
        out = tmp_path / "r.json"
        assert cli.main(["analyze", "--model", str(model), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["rho"] == 0.0

    def test_divergent(self, tmp_path, divergent_file):
        out = tmp_path / "r.json"
        assert cli.main(["analyze", "--model", str(divergent_file), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["rho"] > 1 and not rep["converges"]

    def test_fixed_point_cap(self, tmp_path, cycle_file):
        code = cli.main(["analyze", "--model", str(cycle_file), "--fp-max-iters", "2", "--out", str(tmp_path / "r")])
        assert code == cli.EXIT_NO_FIXED_POINT

    def test_figure(self, tmp_path, cycle_file):
        fig = tmp_path / "a.png"
        cli.main(["analyze", "--model", str(cycle_file), "--out", str(tmp_path / "r.json"), "--figure", str(fig)])
        assert fig.read_bytes()[:4] == b"\x89PNG"


class TestCompare:
    def test_chain_is_exact(self, tmp_path):
        _, model = _gen(tmp_path, "c.json", "--topology", "chain", "--nodes", "5", "--seed", "2")
        out = tmp_path / "cmp.json"
        assert cli.main(["compare", "--model", str(model), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert all(a["mean_error"] < 1e-9 for a in rep["agents"])
        assert rep["rho"] == 0.0 and rep["consistent"] is True

    def test_cycle(self, tmp_path, cycle_file):
        out = tmp_path / "cmp.json"
        assert cli.main(["compare", "--model", str(cycle_file), "--tol", "1e-12", "--max-iters", "200",
                         "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["max_rel_mean_error"] < 1e-6
        assert all(a["cov_error"] >= 0 for a in rep["agents"])

    def test_divergent(self, tmp_path, divergent_file):
        out = tmp_path / "cmp.json"
        code = cli.main(["compare", "--model", str(divergent_file), "--max-iters", "20000", "--out", str(out)])
        rep = json.loads(out.read_text())
        assert code == cli.EXIT_DIVERGED
        assert rep["status"] == "Diverged" and rep["rho"] > 1 and rep["consistent"] is True


class TestEnvironment:
    def test_thread_cap(self, tmp_path, cycle_file, monkeypatch):
        monkeypatch.setenv("GABP_THREADS", "1")
        assert cli.main(["analyze", "--model", str(cycle_file), "--out", str(tmp_path / "r.json")]) == 0

    def test_bad_thread_cap(self, tmp_path, cycle_file, monkeypatch):
        monkeypatch.setenv("GABP_THREADS", "many")
        assert cli.main(["analyze", "--model", str(cycle_file), "--out", str(tmp_path / "r.json")]) == cli.EXIT_USAGE

    def test_no_subcommand(self):
        assert cli.main([]) == cli.EXIT_USAGE
