"""Acceptance criteria.

Each test prints one ``PASS``/``FAIL`` line for its criterion (visible under
plain ``pytest -v``) and then asserts. Run the file directly to get just the
seven lines: ``python3 tests/test_acceptance.py``.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from gabp import centralized, convergence, engine, generators, numerics
from gabp.engine import CONVERGED, DIVERGED, RunConfig
from gabp.generators import GenSpec
from gabp.model import directed_messages, unit_model

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

TREE_RTOL = 1e-9
FP_AGREE_TOL = 1e-10
PROPERTY_TRIALS = 1000
PROPERTY_SLACK = 1e-9
MEAN_RTOL = 1e-6
RHO_BAND = 1e-6
DIVERGENT_MODELS = 3
DIVERGENT_STARTS = 5
GOLDEN_TOL = 1e-9
RHO_TOL = 1e-8
RECURSION_TOL = 1e-10
DCFLOW_SECONDS = 5.0


def _line(n, name, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {name} ({detail})"


def _rel_mean_error(means, est_mean):
    scale = float(np.max(np.abs(est_mean)))
    err = float(np.max(np.abs(np.concatenate(means) - est_mean)))
    return err / scale if scale > 0 else err


def fixed_point_models():
    """50 loopy and tree models with moderate priors and noise."""
    rng = np.random.default_rng(2024)
    models = []
    for s in range(50):
        kind = ("cycle", "grid", "random", "tree", "chain")[s % 5]
        dims = [int(d) for d in rng.integers(1, 4, size=12)]
        n = int(rng.integers(3, 9))
        rows, cols = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        count = rows * cols if kind == "grid" else n
        models.append(generators.generate(GenSpec(
            kind, n=n, rows=rows, cols=cols, edge_prob=0.5, dims=dims[:count], coef_mode="random",
            prior_scale=float(rng.uniform(0.5, 5.0)), noise_scale=float(rng.uniform(0.1, 2.0)), seed=s)))
    return models


def divergent_sweep(limit=60):
    """Dense topology, two-dimensional agents, sharp-in-some-directions noise, vague priors."""
    found = []
    for seed in range(limit):
        m = generators.generate(GenSpec("random", n=5, edge_prob=1.0, dims=2, coef_mode="random",
                                        prior_scale=100.0, noise_anisotropy=1e4, seed=seed))
        verdict = convergence.decide(m)
        if verdict.rho > 1 + RHO_BAND:
            found.append((seed, m, verdict.rho))
        if len(found) == DIVERGENT_MODELS:
            break
    return found


# -- criteria ----------------------------------------------------------------------

def criterion_1():
    worst_mu = worst_cov = 0.0
    rng = np.random.default_rng(1)
    for s in range(50):
        M = int(rng.integers(2, 51))
        dims = [int(d) for d in rng.integers(1, 5, size=M)]
        m = generators.generate(GenSpec("tree", n=M, dims=dims, coef_mode="random", seed=100 + s,
                                        prior_scale=float(rng.uniform(0.2, 5.0)),
                                        noise_scale=float(rng.uniform(0.05, 2.0))))
        state = engine.init_messages(m)
        for _ in range(generators.tree_diameter(m) + 1):
            state = engine.sync_round(m, state)
        b = engine.beliefs(m, state)
        sys_, est = centralized.estimate(m)
        scale = float(np.max(np.abs(est.mean)))
        for i in range(M):
            mu, cov = centralized.marginal(est, sys_, i)
            worst_mu = max(worst_mu, float(np.max(np.abs(b.means[i] - mu))) / scale)
            worst_cov = max(worst_cov, np.linalg.norm(b.covs[i] - cov) / np.linalg.norm(cov))
    ok = worst_mu <= TREE_RTOL and worst_cov <= TREE_RTOL
    return ok, f"worst rel mean err {worst_mu:.2e}, worst rel cov err {worst_cov:.2e}, tol {TREE_RTOL:g}"


def criterion_2():
    worst_gap, all_pd, ratios_ok = 0.0, True, True
    for m in fixed_point_models():
        a = convergence.fixed_point(m, init="zero")
        b = convergence.fixed_point(m, init="upper")
        for k in a.c_star:
            worst_gap = max(worst_gap, float(np.max(np.abs(a.c_star[k] - b.c_star[k]))))
            all_pd &= numerics.is_pd(a.c_star[k]) and numerics.is_pd(b.c_star[k])
        for rep in (a, b):
            r = rep.contraction_ratios()
            ratios_ok &= all(x < 1 for x in r[-5:])
    ok = worst_gap <= FP_AGREE_TOL and all_pd and ratios_ok
    return ok, f"max zero/upper gap {worst_gap:.2e}, all PD {all_pd}, last-5 ratios < 1 {ratios_ok}"


PROPERTY_FAMILIES = {
    "chain": GenSpec("chain", n=4, dims=[1, 2, 3, 2], coef_mode="random", seed=1),
    "cycle": GenSpec("cycle", n=4, dims=2, coef_mode="random", noise_anisotropy=100.0, seed=2),
    "grid": GenSpec("grid", rows=2, cols=3, dims=1, coef_mode="random", seed=3),
    "random": GenSpec("random", n=5, edge_prob=0.6, dims=[1, 2, 1, 2, 3], coef_mode="random", seed=4),
    "dcflow": GenSpec("dcflow", n=4, edges=[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)],
                      susceptances=[1.0, 2.0, 0.5, 1.5, 3.0], coef_mode="difference", dims=2,
                      prior_scale=10.0, noise_scale=0.01, seed=5),
}


def criterion_3():
    violations, checks = 0, 0
    for fam, spec in PROPERTY_FAMILIES.items():
        rep = convergence.check_properties(generators.generate(spec), PROPERTY_TRIALS, seed=7,
                                           slack=PROPERTY_SLACK)
        violations += len(rep.violations)
        checks += sum(rep.checks.values())
    ok = violations == 0
    return ok, (f"{len(PROPERTY_FAMILIES)} families x {PROPERTY_TRIALS} trials, {checks} comparisons, "
                f"{violations} violations at slack {PROPERTY_SLACK:g}")


def criterion_4():
    tested, worst = 0, 0.0
    converge_ok = True
    candidates = fixed_point_models() + [unit_model([(0, 1), (1, 2), (0, 2)])]
    for m in candidates:
        verdict = convergence.decide(m)
        if not verdict.rho < 1 - RHO_BAND:
            continue
        tested += 1
        res = engine.run(m, RunConfig(max_iters=20000, eta=1e-13))
        _, est = centralized.estimate(m)
        converge_ok &= res.status == CONVERGED
        worst = max(worst, _rel_mean_error(res.beliefs.means, est.mean))
    found = divergent_sweep()
    diverged = 0
    for seed, m, _ in found:
        for k in range(DIVERGENT_STARTS):
            v0 = engine.random_means(m, np.random.default_rng(k))
            res = engine.run(m, RunConfig(max_iters=20000, eta=1e-12, init="upper", initial_means=v0))
            diverged += res.status == DIVERGED
    ok = (converge_ok and worst < MEAN_RTOL and len(found) >= DIVERGENT_MODELS
          and diverged == DIVERGENT_MODELS * DIVERGENT_STARTS)
    rhos = ", ".join(f"{r:.4f}" for _, _, r in found)
    return ok, (f"{tested} models with rho<1 all converged={converge_ok}, worst rel err {worst:.2e}; "
                f"rho>1 models rho=[{rhos}], {diverged}/{DIVERGENT_MODELS * DIVERGENT_STARTS} runs diverged")


def criterion_5():
    m = unit_model([(0, 1), (1, 2), (0, 2)])
    verdict = convergence.decide(m)
    fp_err = max(abs(b[0, 0] - GOLDEN) for b in verdict.report.c_star.values())
    dense = float(np.max(np.abs(np.linalg.eigvals(verdict.qsys.Q))))
    rho_err = abs(verdict.rho - GOLDEN ** 2)
    ok = fp_err <= GOLDEN_TOL and rho_err <= RHO_TOL and abs(dense - GOLDEN ** 2) <= RHO_TOL
    return ok, f"fixed-point err {fp_err:.1e}, rho {verdict.rho:.12f} (err {rho_err:.1e}), dense eig {dense:.12f}"


def criterion_6(models=20, steps=40):
    worst = 0.0
    used = 0
    seed = 0
    while used < models:
        m = generators.generate(GenSpec(("cycle", "grid", "random")[seed % 3], n=5, rows=2, cols=3,
                                        dims=[1, 2, 2, 1, 3, 2][:6 if seed % 3 == 1 else 5],
                                        coef_mode="random", seed=300 + seed))
        seed += 1
        report = convergence.fixed_point(m)
        qsys = convergence.assemble_q(m, report)
        means = engine.random_means(m, np.random.default_rng(seed))
        state = engine.init_messages(m, report.c_star, means)
        state = engine.sync_round(m, state)
        v = [engine.stacked_v2f_means(m, state)]
        for _ in range(steps):
            state = engine.sync_round(m, state)
            v.append(engine.stacked_v2f_means(m, state))
        traj = convergence.mean_recursion(qsys, v[0], steps)
        for a, b in zip(v, traj):
            worst = max(worst, float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(a)))))
        used += 1
    ok = worst <= RECURSION_TOL
    return ok, f"{used} models x {steps} steps, worst per-step scaled gap {worst:.2e}, tol {RECURSION_TOL:g}"


def criterion_7(tmp_dir):
    model = tmp_dir / "dc.json"
    report, cmp = tmp_dir / "report.json", tmp_dir / "compare.json"
    cmd = [sys.executable, "-m", "gabp.cli"]
    t0 = time.perf_counter()
    codes = [
        subprocess.run(cmd + ["generate", "--topology", "dcflow", "--nodes", "3", "--edges", "0-1,1-2,2-0",
                              "--susceptances", "1,1,1", "--coef", "difference", "--noise-scale", "0.01",
                              "--prior-scale", "10", "--seed", "0", "--out", str(model)]).returncode,
        subprocess.run(cmd + ["analyze", "--model", str(model), "--out", str(report)]).returncode,
        subprocess.run(cmd + ["compare", "--model", str(model), "--max-iters", "5000", "--tol", "1e-12",
                              "--out", str(cmp)]).returncode,
    ]
    elapsed = time.perf_counter() - t0
    rho = json.loads(report.read_text())["rho"]
    rel = json.loads(cmp.read_text())["max_rel_mean_error"]
    ok = codes == [0, 0, 0] and rho < 1 and rel is not None and rel < MEAN_RTOL and elapsed < DCFLOW_SECONDS
    return ok, f"exit codes {codes}, rho {rho:.6f}, max rel mean err {rel:.2e}, {elapsed:.2f} s"


# -- pytest wrappers ---------------------------------------------------------------

def _check(capsys, n, name, result):
    ok, detail = result
    with capsys.disabled():
        print("\n" + _line(n, name, ok, detail))
    assert ok, detail


class TestAcceptance:
    def test_1_tree_exactness(self, capsys):
        _check(capsys, 1, "tree exactness", criterion_1())

    def test_2_fixed_point(self, capsys):
        _check(capsys, 2, "unique PD information fixed point", criterion_2())

    def test_3_operator_properties(self, capsys):
        _check(capsys, 3, "monotonicity, scaling and bounds", criterion_3())

    def test_4_rho_decides_mean_convergence(self, capsys):
        _check(capsys, 4, "spectral radius decides mean convergence", criterion_4())

    def test_5_three_cycle_closed_form(self, capsys):
        _check(capsys, 5, "unit 3-cycle closed form", criterion_5())

    def test_6_mean_recursion_equivalence(self, capsys):
        _check(capsys, 6, "mean recursion matches engine", criterion_6())

    def test_7_dcflow_smoke(self, capsys, tmp_path):
        _check(capsys, 7, "DC-flow triangle", criterion_7(tmp_path))


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    names = ["tree exactness", "unique PD information fixed point", "monotonicity, scaling and bounds",
             "spectral radius decides mean convergence", "unit 3-cycle closed form",
             "mean recursion matches engine", "DC-flow triangle"]
    fns = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6]
    failed = 0
    for n, (name, fn) in enumerate(zip(names, fns), start=1):
        ok, detail = fn()
        failed += not ok
        print(_line(n, name, ok, detail), flush=True)
    with tempfile.TemporaryDirectory() as d:
        ok, detail = criterion_7(Path(d))
        failed += not ok
        print(_line(7, names[6], ok, detail), flush=True)
    sys.exit(1 if failed else 0)
