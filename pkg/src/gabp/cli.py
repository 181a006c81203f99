"""Command-line entry point: ``gabp {generate,run,analyze,compare}``.

Exit codes are the only out-of-band signal; every number goes to a file.

    0  success / Converged
    1  compare found BP and the convergence verdict inconsistent
    2  invalid arguments or malformed model
    3  model generation failed
    4  MaxItersReached
    5  Diverged
    6  information fixed point did not converge
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Any

import numpy as np

from gabp import centralized, convergence, engine, generators
from gabp import model as gm
from gabp.numerics import NonConvergence

FORMAT_VERSION = 1
EXIT_OK = 0
EXIT_INCONSISTENT = 1
EXIT_USAGE = 2
EXIT_GENERATION = 3
EXIT_MAX_ITERS = 4
EXIT_DIVERGED = 5
EXIT_NO_FIXED_POINT = 6
REL_TOL = 1e-6

STATUS_EXIT = {engine.CONVERGED: EXIT_OK, engine.MAX_ITERS: EXIT_MAX_ITERS, engine.DIVERGED: EXIT_DIVERGED}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _num(x: float) -> float | None:
    return float(x) if np.isfinite(x) else None


def _array(a: np.ndarray) -> Any:
    return [_num(v) for v in a] if a.ndim == 1 else [_array(row) for row in a]


def _write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _load_model(path: str) -> gm.PairwiseModel:
    try:
        model = gm.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except gm.ModelError as exc:
        raise UsageError(f"{path}: {exc}") from None
    problems = gm.validate(model)
    if problems:
        raise UsageError(f"{path}: " + "; ".join(problems))
    return model


def _edge_list(text: str) -> list[tuple[int, int]]:
    try:
        return [tuple(int(v) for v in item.split("-", 1)) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"edges must look like 0-1,1-2 (got {text!r})") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers (got {text!r})") from None


def _run_config(args) -> engine.RunConfig:
    if args.max_iters is not None and args.max_iters < 0:
        raise UsageError("--max-iters must be >= 0")
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    return engine.RunConfig(max_iters=args.max_iters, eta=args.tol, init=getattr(args, "init", "zero"))


def _beliefs_payload(model: gm.PairwiseModel, result: engine.RunResult) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "status": result.status,
        "rounds": result.rounds,
        "agents": [{"id": a.id, "mean": _array(mu), "cov": _array(P)}
                   for a, mu, P in zip(model.agents, result.beliefs.means, result.beliefs.covs)],
    }


# -- commands ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    nodes = args.nodes
    if nodes is None:
        if args.topology != "grid":
            raise UsageError("--nodes is required for this topology")
        nodes = 0
    spec = generators.GenSpec(
        topology=args.topology, n=nodes, rows=args.rows, cols=args.cols, edge_prob=args.edge_prob,
        edges=args.edges, susceptances=args.susceptances, dims=args.dim, prior_scale=args.prior_scale,
        noise_scale=args.noise_scale, noise_anisotropy=args.noise_anisotropy, coef_mode=args.coef,
        seed=args.seed)
    try:
        spec.check()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        model = generators.generate(spec)
    except (generators.CannotConnect, generators.GenerationError, gm.ModelError, ValueError) as exc:
        print(f"gabp generate: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    gm.save(model, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    model = _load_model(args.model)
    result = engine.run(model, _run_config(args))
    _write_json(args.out, _beliefs_payload(model, result))
    if args.trace:
        result.trace.write_csv(args.trace)
    if args.figure:
        from gabp import plotting
        plotting.trace_figure(result.trace, args.figure, title=result.status)
    return STATUS_EXIT[result.status]


def cmd_analyze(args) -> int:
    model = _load_model(args.model)
    try:
        verdict = convergence.decide(model, tol=args.tol, max_iters=args.fp_max_iters)
    except NonConvergence as exc:
        print(f"gabp analyze: {exc}", file=sys.stderr)
        return EXIT_NO_FIXED_POINT
    ok = convergence.fixed_point_within_bounds(model, verdict.report)
    _write_json(args.out, convergence.report_dict(verdict, ok))
    if args.figure:
        from gabp import plotting
        plotting.analysis_figure(verdict.report.residual_history, verdict.qsys.Q, verdict.rho, args.figure)
    return EXIT_OK


def compare(model: gm.PairwiseModel, config: engine.RunConfig) -> tuple[dict, engine.RunResult]:
    """Run BP and the centralized solver; build the comparison record."""
    result = engine.run(model, config)
    sys_, est = centralized.estimate(model)
    scale = float(np.max(np.abs(est.mean), initial=0.0))
    agents = []
    for i, a in enumerate(model.agents):
        mu, cov = centralized.marginal(est, sys_, i)
        err = float(np.max(np.abs(result.beliefs.means[i] - mu), initial=0.0))
        cov_err = float(np.linalg.norm(result.beliefs.covs[i] - cov))
        rel = err / scale if scale > 0 else err
        agents.append({"id": a.id, "mean_error": _num(err), "rel_mean_error": _num(rel),
                       "cov_error": _num(cov_err)})

    try:
        verdict = convergence.decide(model)
        rho, indeterminate = verdict.rho, verdict.indeterminate
    except NonConvergence:
        rho, indeterminate = None, True

    rels = [a["rel_mean_error"] for a in agents]
    max_rel = None if any(r is None for r in rels) else max(rels)
    if rho is None or indeterminate:
        consistent = None
    elif rho < 1:
        consistent = result.status == engine.CONVERGED and max_rel is not None and max_rel < REL_TOL
    else:
        consistent = result.status != engine.CONVERGED
    record = {
        "format_version": FORMAT_VERSION,
        "status": result.status,
        "rounds": result.rounds,
        "rho": rho,
        "indeterminate": indeterminate,
        "max_rel_mean_error": max_rel,
        "consistent": consistent,
        "agents": agents,
    }
    return record, result


def cmd_compare(args) -> int:
    model = _load_model(args.model)
    record, result = compare(model, _run_config(args))
    _write_json(args.out, record)
    if args.figure:
        from gabp import plotting
        plotting.trace_figure(result.trace, args.figure, title=f"{result.status}, rho = {record['rho']}")
    if record["consistent"] is False:
        return EXIT_INCONSISTENT
    return STATUS_EXIT[result.status]


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gabp", description="Gaussian belief propagation on pairwise linear Gaussian models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a seeded benchmark model")
    g.add_argument("--topology", required=True, choices=generators.TOPOLOGIES)
    g.add_argument("--nodes", type=int)
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--edge-prob", type=float, default=0.5)
    g.add_argument("--edges", type=_edge_list, help="dcflow lines, e.g. 0-1,1-2,2-0")
    g.add_argument("--susceptances", type=_float_list, help="one per --edges entry")
    g.add_argument("--dim", type=int, default=1)
    g.add_argument("--prior-scale", type=float, default=1.0)
    g.add_argument("--noise-scale", type=float, default=1.0)
    g.add_argument("--noise-anisotropy", type=float, default=1.0)
    g.add_argument("--coef", choices=generators.COEF_MODES, default="unit")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def bp_flags(cmd):
        cmd.add_argument("--model", required=True)
        cmd.add_argument("--max-iters", type=int, help="round cap (default 10 x agents)")
        cmd.add_argument("--tol", type=float, default=engine.DEFAULT_ETA, help="mean-change threshold")
        cmd.add_argument("--out", required=True)
        cmd.add_argument("--figure", help="also render a PNG to this path")

    r = sub.add_parser("run", help="run synchronous BP")
    bp_flags(r)
    r.add_argument("--init", choices=("zero", "upper"), default="zero")
    r.add_argument("--trace", help="per-round CSV trace")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="fixed point, Q and the spectral-radius verdict")
    a.add_argument("--model", required=True)
    a.add_argument("--tol", type=float, default=convergence.DEFAULT_FP_TOL)
    a.add_argument("--fp-max-iters", type=int, default=convergence.DEFAULT_FP_MAX_ITERS)
    a.add_argument("--out", required=True)
    a.add_argument("--figure", help="also render a PNG to this path")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="BP against the centralized estimate")
    bp_flags(c)
    c.set_defaults(func=cmd_compare)
    return p


def _thread_limit():
    value = os.environ.get("GABP_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"GABP_THREADS must be an integer (got {value!r})") from None
    if n < 1:
        raise UsageError("GABP_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"gabp: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
