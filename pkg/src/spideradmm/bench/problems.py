"""Builders for the fused-lasso and multi-task problems."""

from __future__ import annotations

import numpy as np

from ..admm import CompositeProblem
from ..errors import AssumptionViolation
from ..linalg import KronLift, ScaledIdentity, VStack, spectral_extremes
from ..losses import MultitaskLoss, SigmoidLoss
from ..regularizers import L1, Nuclear
from .graph import edge_matrix

__all__ = ["build_graph_problem", "build_multitask_problem", "check_problem"]


def check_problem(problem, seed=0, tol=1e-10):
    """Dimension, full-column-rank and feasibility-witness checks.

    The witness sets every block except the first to zero and solves for the
    first block from a random ``x`` (only possible when ``B_1`` is invertible
    on the range needed, which holds for the built-in problems with
    ``B_1 = -I`` or a stacked selector).
    """
    lo, _ = spectral_extremes(problem.A)
    if not lo > 0:
        raise AssumptionViolation("constraint matrix A lacks full column rank")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(problem.d)
    target = problem.c - problem.A.apply(x)
    y = []
    rest = target
    for B, _ in problem.blocks:
        Bd = B.to_dense()
        yj, *_ = np.linalg.lstsq(Bd, rest, rcond=None)
        y.append(yj)
        rest = rest - Bd @ yj
    res = problem.residual(x, y)
    if np.linalg.norm(res) > tol * (1.0 + np.linalg.norm(target)):
        raise AssumptionViolation("could not construct a feasible point")
    return x, y


def build_graph_problem(samples, edges=(), lam=1e-5, mu=1.0):
    """Sigmoid loss with ``lam * ||[E; mu I] x||_1`` through ``y = [E; mu I] x``.

    ``edges`` is a list of feature pairs or an operator from
    :func:`~spideradmm.bench.graph.build_fusion_graph`.  With ``mu > 0`` the
    objective also contains ``lam * mu * ||x||_1``.
    """
    if mu < 0 or lam < 0:
        raise ValueError("lam and mu must be non-negative")
    d = samples.d
    E = edges if hasattr(edges, "apply") else edge_matrix(edges, d)
    if E.rows == 0:
        if mu == 0:
            raise AssumptionViolation("no edges and mu=0 leave A empty; set mu > 0")
        A = ScaledIdentity(d, mu)
    elif mu == 0:
        A = E
        if spectral_extremes(E)[0] == 0:
            raise AssumptionViolation(
                "edge matrix lacks full column rank; use mu > 0 to augment it"
            )
    else:
        A = VStack([E, ScaledIdentity(d, mu)])
    loss = SigmoidLoss(samples)
    note = f"graph-guided fused lasso, {E.rows} edges, lam={lam:g}, mu={mu:g}"
    if mu > 0:
        note += f" (adds {lam * mu:g}*||x||_1)"
    problem = CompositeProblem(loss, A, [(ScaledIdentity(A.rows, -1.0), L1(lam))], notes=note)
    check_problem(problem)
    return problem


def build_multitask_problem(samples, lam1=1e-5, lam2=1e-4, alpha_ls=1.0, beta_ls=1.0):
    """Trace-norm plus log-sum multi-task logistic regression.

    The weight matrix ``X`` (classes x features, flattened row-major) is
    split into copies ``Y1 = X`` (log-sum / l1 part) and ``Y2 = X`` (nuclear part).
    """
    if samples.task != "multiclass":
        raise ValueError("multi-task problem needs class labels; use the graph problem for binary data")
    c, d = samples.n_classes, samples.d
    if c < 2:
        raise ValueError("need at least two classes")
    loss = MultitaskLoss(samples, lam1, alpha_ls, beta_ls)
    I = np.eye(c)
    Z = np.zeros((c, c))
    A = KronLift(np.vstack([I, I]), d)
    B1 = KronLift(np.vstack([-I, Z]), d)
    B2 = KronLift(np.vstack([Z, -I]), d)
    blocks = [(B1, L1(lam1 * loss.kappa0)), (B2, Nuclear(lam2, c, d))]
    note = f"multi-task, {c} classes, lam1={lam1:g}, lam2={lam2:g}, alpha={alpha_ls:g}, beta={beta_ls:g}"
    problem = CompositeProblem(loss, A, blocks, notes=note)
    check_problem(problem)
    return problem
