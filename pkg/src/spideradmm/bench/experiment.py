"""Experiment sweeps over (solver, seed) pairs with CSV/JSON output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import estimators as est
from ..admm import HyperParams, SolverKind, resolve_batch_sizes, run
from ..diagnostics import stationarity_sq
from ..errors import DivergenceError
from .data import parse_libsvm, synthetic_binary, synthetic_multiclass
from .graph import build_fusion_graph, edge_matrix, read_edge_list
from .problems import build_graph_problem, build_multitask_problem

__all__ = [
    "TRACE_COLUMNS",
    "ExperimentConfig",
    "load_samples",
    "build_problem",
    "hyperparams_for",
    "write_trace_csv",
    "read_trace_csv",
    "closed_form_ifo",
    "ifo_to_target",
    "run_experiment",
]

TRACE_COLUMNS = (
    "iter", "epoch", "objective", "aug_lagrangian", "residual",
    "theta", "stationarity", "ifo", "seconds",
)


@dataclass
class ExperimentConfig:
    """Everything one sweep needs.

    ``data`` is either ``{"path": "file.libsvm"}`` or
    ``{"synthetic": "binary" | "multiclass", "n": ..., "d": ..., "seed": ...}``.
    ``hyperparams`` maps a solver name (or ``"default"``) to
    :class:`~spideradmm.admm.HyperParams` fields.
    """

    data: dict
    solvers: list
    seeds: list = field(default_factory=lambda: [0])
    problem: str = "graph"
    hyperparams: dict = field(default_factory=dict)
    lam: float = 1e-5
    mu: float = 1.0
    graph_threshold: float = 0.5
    edges: str | None = None
    lam1: float = 1e-5
    lam2: float = 1e-4
    alpha_ls: float = 1.0
    beta_ls: float = 1.0
    target_tol: float = 1e-3
    out: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if not self.solvers:
            raise ValueError("config needs at least one solver")
        self.solvers = [SolverKind(s).value for s in self.solvers]
        if not self.seeds:
            raise ValueError("config needs at least one seed")
        for name in ("lam", "lam1", "lam2", "mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.problem not in ("graph", "multitask"):
            raise ValueError(f"unknown problem {self.problem!r}")
        known = {f.name for f in fields(HyperParams)}
        for key, hp in self.hyperparams.items():
            bad = set(hp) - known
            if bad:
                raise ValueError(f"unknown hyperparameters for {key!r}: {sorted(bad)}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def digest(self):
        blob = {k: v for k, v in asdict(self).items() if k not in ("workers", "out")}
        blob = json.dumps(blob, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_samples(cfg, base_dir=None):
    data = dict(cfg.data)
    if "path" in data:
        p = Path(data["path"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return parse_libsvm(p)
    kind = data.pop("synthetic", None)
    if kind == "binary":
        return synthetic_binary(**data)
    if kind == "multiclass":
        return synthetic_multiclass(**data)
    raise ValueError("data needs 'path' or 'synthetic' in {'binary', 'multiclass'}")


def build_problem(cfg, samples, base_dir=None):
    if cfg.problem == "multitask":
        return build_multitask_problem(samples, cfg.lam1, cfg.lam2, cfg.alpha_ls, cfg.beta_ls)
    if cfg.edges:
        p = Path(cfg.edges)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        E = edge_matrix(read_edge_list(p), samples.d)
    else:
        E = build_fusion_graph(samples, cfg.graph_threshold)
    return build_graph_problem(samples, E, cfg.lam, cfg.mu)


def hyperparams_for(cfg, solver, seed):
    merged = dict(cfg.hyperparams.get("default", {}))
    merged.update(cfg.hyperparams.get(solver, {}))
    merged["seed"] = seed
    return HyperParams(**merged)


# traces on disk -------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_trace_csv(trace, path):
    """Header plus one row per iteration; empty cells for absent values."""
    records = trace.records if hasattr(trace, "records") else trace
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in records:
                w.writerow([_cell(getattr(r, c)) for c in TRACE_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace_csv(path):
    """Rows as dicts of floats (``None`` for empty cells)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected header")
    out = []
    for row in rows[1:]:
        if len(row) != len(TRACE_COLUMNS):
            raise ValueError(f"{path}: row with {len(row)} columns")
        out.append({c: (float(v) if v != "" else None) for c, v in zip(TRACE_COLUMNS, row)})
    return out


# summaries ------------------------------------------------------------------


def closed_form_ifo(kind, hp, n, K):
    kind = SolverKind(kind)
    if kind is SolverKind.DETERMINISTIC:
        return est.ifo_total_deterministic(K, n)
    if kind is SolverKind.SGD:
        return est.ifo_total_sgd(K, hp.b)
    if kind is SolverKind.SPIDER:
        return est.ifo_total_spider(K, n, hp.q, hp.b)
    if kind is SolverKind.SPIDER_ONLINE:
        return est.ifo_total_spider_online(K, hp.b1, hp.q, hp.b2)
    if kind is SolverKind.SVRG:
        return est.ifo_total_svrg(K, n, hp.M, hp.b)
    return est.ifo_total_saga(K, n, hp.b)


def ifo_to_target(trace, target):
    """IFO count at the first iteration whose objective is ``<= target``."""
    for r in trace.records:
        if r.objective is not None and r.objective <= target:
            return r.ifo
    return None


def _median(vals):
    vals = [v for v in vals if v is not None]
    return float(np.median(vals)) if vals else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _run_one(job):
    problem, hp, solver = job
    try:
        return run(problem, hp, solver)
    except DivergenceError as exc:
        return exc


def run_experiment(cfg, out_dir=None, base_dir=None):
    """Run every (solver, seed) pair, write CSVs and ``summary.json``.

    Returns ``{(solver, seed): Trace or DivergenceError}``.  A diverging run
    is recorded in the summary and does not stop the others.  With
    ``cfg.workers > 1`` runs go to a process pool; every run has its own
    seeded state, so the output does not depend on the worker count.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_samples(cfg, base_dir)
    problem = build_problem(cfg, samples, base_dir)
    n = problem.loss.n

    jobs = [(solver, seed) for solver in cfg.solvers for seed in cfg.seeds]
    args = [(problem, hyperparams_for(cfg, solver, seed), solver) for solver, seed in jobs]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_one, args))
    else:
        outcomes = [_run_one(a) for a in args]

    results = {}
    runs = []
    for (solver, seed), (_, hp, _), trace in zip(jobs, args, outcomes):
        path = out / f"{solver}_seed{seed}.csv"
        entry = {"solver": solver, "seed": seed, "csv": path.name}
        results[(solver, seed)] = trace
        if isinstance(trace, DivergenceError):
            entry["diverged"] = {"iteration": trace.iteration, "rho": trace.rho, "eta": trace.eta}
            write_trace_csv(trace.trace.records if trace.trace else [], path)
            runs.append(entry)
            continue
        write_trace_csv(trace, path)
        x, y, z = trace.output
        resolved = resolve_batch_sizes(hp, solver, n)
        K = len(trace.records)
        entry.update(
            header=trace.header,
            config_hash=cfg.digest(),
            final_objective=trace.records[-1].objective if trace.records else None,
            final_stationarity=None if problem.streaming else stationarity_sq(problem, x, y, z).total_sq,
            ifo=trace.state.ifo.count,
            ifo_closed_form=closed_form_ifo(solver, resolved, n, K),
        )
        runs.append(entry)

    finals = [e.get("final_objective") for e in runs if e["solver"] == "deterministic"]
    finals = [f for f in finals if f is not None]
    if not finals:
        finals = [e["final_objective"] for e in runs if e.get("final_objective") is not None]
    target = (min(finals) + cfg.target_tol) if finals else None

    per_solver = {}
    for solver in cfg.solvers:
        mine = [e for e in runs if e["solver"] == solver]
        hits = []
        for e in mine:
            tr = results[(solver, e["seed"])]
            hit = ifo_to_target(tr, target) if (target is not None and not isinstance(tr, DivergenceError)) else None
            e["ifo_to_target"] = hit
            hits.append(hit)
        per_solver[solver] = {
            "median_ifo_to_target": _median(hits),
            "reached_target": sum(h is not None for h in hits),
            "median_final_stationarity": _median([e.get("final_stationarity") for e in mine]),
            "diverged": sum("diverged" in e for e in mine),
            "ifo_matches_closed_form": all(
                e.get("ifo") == e.get("ifo_closed_form") for e in mine if "diverged" not in e
            ),
        }

    summary = {
        "config_hash": cfg.digest(),
        "problem": problem.notes,
        "target_objective": target,
        "solvers": per_solver,
        "runs": runs,
    }
    with (out / "summary.json").open("w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return results
