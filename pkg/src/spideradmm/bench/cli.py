"""Command-line entry point: ``solve``, ``bench``, ``check`` and ``graph``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..admm import SolverKind, run
from ..diagnostics import finite_diff_check, stationarity_sq
from ..errors import DivergenceError, SpiderAdmmError
from .. import estimators as est
from ..linalg import SeededRng
from ..losses import MultitaskLoss, QuadraticLoss, SigmoidLoss
from ..regularizers import L1, Nuclear
from .data import parse_libsvm, synthetic_binary, synthetic_multiclass
from .experiment import (
    ExperimentConfig,
    build_problem,
    hyperparams_for,
    load_samples,
    run_experiment,
    write_trace_csv,
)
from .graph import build_fusion_graph, write_edge_list


def _config_from_args(args):
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
        base = Path(args.config).resolve().parent
    else:
        if args.data:
            data = {"path": args.data}
        else:
            kind = "multiclass" if args.problem == "multitask" else "binary"
            data = {"synthetic": kind, "n": args.n, "d": args.d, "seed": args.data_seed}
        cfg = ExperimentConfig(data=data, solvers=[args.solver or "spider"], problem=args.problem)
        base = None
    return cfg, base


def _overrides(args):
    out = {}
    if args.alpha is not None:
        out["alpha"] = args.alpha
    if args.rho is not None:
        out["rho"] = args.rho
    if args.eta is not None:
        out["eta"] = args.eta
    if args.iters is not None:
        out["K"] = args.iters
    if args.lyapunov:
        out["lyapunov"] = True
    if args.theory_rho:
        out["theory_rho"] = True
    return out


def cmd_solve(args):
    cfg, base = _config_from_args(args)
    solver = args.solver or cfg.solvers[0]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    samples = load_samples(cfg, base)
    problem = build_problem(cfg, samples, base)
    hp = replace(hyperparams_for(cfg, solver, seed), **_overrides(args))
    try:
        trace = run(problem, hp, solver)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 2
    x, y, z = trace.output
    last = trace.records[-1] if trace.records else None
    info = {
        "solver": solver,
        "seed": seed,
        "iterations": len(trace.records),
        "objective": last.objective if last else None,
        "residual": last.residual if last else None,
        "ifo": trace.state.ifo.count,
        "stationarity": stationarity_sq(problem, x, y, z).total_sq,
        "rho": trace.spectra.rho,
        "eta": trace.spectra.eta,
        "kappa_G": trace.spectra.kappa_G,
    }
    if trace.lyapunov:
        info["lyapunov_max_increase"] = float(np.max(np.diff(trace.lyapunov), initial=-np.inf))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_trace_csv(trace, out / f"{solver}_seed{seed}.csv")
    print(json.dumps(info, indent=2))
    return 0


def cmd_bench(args):
    if not args.config:
        print("bench needs --config", file=sys.stderr)
        return 1
    cfg = ExperimentConfig.from_json(args.config)
    ov = _overrides(args)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.solver:
        cfg.solvers = [SolverKind(args.solver).value]
    if ov:
        hp = dict(cfg.hyperparams)
        hp["default"] = {**hp.get("default", {}), **ov}
        cfg.hyperparams = hp
    base = Path(args.config).resolve().parent
    out = args.out or cfg.out
    if not Path(out).is_absolute() and not args.out:
        out = base / out
    results = run_experiment(cfg, out_dir=out, base_dir=base)
    bad = sum(isinstance(r, DivergenceError) for r in results.values())
    print(f"{len(results)} runs written to {out} ({bad} diverged)")
    return 0


def _check_suite(seed):
    rng = np.random.default_rng(seed)
    results = []
    bin_samples = synthetic_binary(50, 6, seed=seed)
    mc = synthetic_multiclass(60, 5, 3, seed=seed)
    losses = {
        "sigmoid": SigmoidLoss(bin_samples),
        "multitask": MultitaskLoss(mc, lam1=0.1),
        "quadratic": QuadraticLoss(rng.standard_normal((20, 6))),
    }
    for name, loss in losses.items():
        err = max(finite_diff_check(loss, rng.standard_normal(loss.d)) for _ in range(5))
        results.append((f"gradient {name}", err <= 1e-5, f"max rel err {err:.2e}"))

    l1 = L1(0.3)
    w = rng.standard_normal(50)
    p = l1.prox(w, 2.0)
    kkt = l1.min_subgrad_dist_sq(p, 2.0 * (w - p))
    results.append(("prox l1", kkt <= 1e-20, f"optimality {kkt:.1e}"))
    nuc = Nuclear(0.5, 5, 4)
    w = rng.standard_normal(20)
    p = nuc.prox(w, 1.5)
    kkt = nuc.min_subgrad_dist_sq(p, 1.5 * (w - p))
    results.append(("prox nuclear", kkt <= 1e-20, f"optimality {kkt:.1e}"))

    loss = losses["quadratic"]
    n = loss.n
    for name, make, closed in (
        ("spider", lambda c: est.SpiderEstimator(loss, 3, 4), lambda K: est.ifo_total_spider(K, n, 3, 4)),
        ("svrg", lambda c: est.SvrgEstimator(loss, 3, 4), lambda K: est.ifo_total_svrg(K, n, 3, 4)),
        ("saga", lambda c: est.SagaEstimator(loss, 4, np.zeros(loss.d), c), lambda K: est.ifo_total_saga(K, n, 4)),
    ):
        counter = est.IfoCounter()
        e = make(counter)
        r = SeededRng(seed, 1)
        K = 11
        for _ in range(K):
            e.step(rng.standard_normal(loss.d), r, counter)
        results.append((f"ifo {name}", counter.count == closed(K), f"{counter.count} vs {closed(K)}"))
    return results


def cmd_check(args):
    results = _check_suite(args.seed or 0)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def cmd_graph(args):
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
        samples = load_samples(cfg, Path(args.config).resolve().parent)
        threshold = cfg.graph_threshold if args.threshold is None else args.threshold
    elif args.data:
        samples = parse_libsvm(args.data)
        threshold = 0.5 if args.threshold is None else args.threshold
    else:
        print("graph needs --data or --config", file=sys.stderr)
        return 1
    E = build_fusion_graph(samples, threshold)
    if args.out:
        write_edge_list(E.edges, args.out)
        print(f"{len(E.edges)} edges written to {args.out}")
    else:
        for i, j in E.edges:
            print(i, j)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="spideradmm", description="Stochastic multi-block ADMM solvers.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (or edge-list file for graph)")

    def solver_flags(sp):
        sp.add_argument("--solver", choices=[k.value for k in SolverKind])
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--rho", type=float)
        sp.add_argument("--eta", type=float)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--lyapunov", action="store_true", help="record Lyapunov potentials")
        sp.add_argument("--theory-rho", action="store_true", help="iterate the kappa_G fixed point for rho")

    s = sub.add_parser("solve", help="run one solver on one problem")
    common(s)
    solver_flags(s)
    s.add_argument("--data", help="LIBSVM file (otherwise synthetic data)")
    s.add_argument("--problem", choices=["graph", "multitask"], default="graph")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--d", type=int, default=20)
    s.add_argument("--data-seed", type=int, default=0)
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a configuration sweep")
    common(b)
    solver_flags(b)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("check", help="gradient, prox and IFO self-checks")
    common(c)
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("graph", help="build and dump the feature graph")
    common(g)
    g.add_argument("--data", help="LIBSVM file")
    g.add_argument("--threshold", type=float)
    g.set_defaults(func=cmd_graph)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpiderAdmmError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
