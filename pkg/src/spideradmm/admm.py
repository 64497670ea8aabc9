"""Multi-block linearized stochastic ADMM.

Solves ``min f(x) + sum_j g_j(y_j)  s.t.  A x + sum_j B_j y_j = c`` where
``f`` is a smooth finite sum.  Each iteration does

1. a gradient estimate ``v_k`` (full, SPIDER, online SPIDER, SVRG, SAGA or
   plain minibatch),
2. one proximal step per block ``y_j`` in ascending order (Gauss-Seidel),
3. a linearized ``x`` step that needs no matrix inverse,
4. dual ascent ``z <- z - rho * residual``.

The linearization matrices ``G = r I - rho*eta A^T A`` and
``H_j = r_j I - rho B_j^T B_j`` are never formed.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.sparse.linalg import LinearOperator as LinearOperatorSp
from scipy.sparse.linalg import lsqr

from . import diagnostics as diag
from .errors import DivergenceError, HyperparameterError
from .estimators import (
    FullGradientEstimator,
    IfoCounter,
    SagaEstimator,
    SgdEstimator,
    SpiderEstimator,
    SpiderOnlineEstimator,
    SvrgEstimator,
    online_b2,
)
from .linalg import SeededRng, as_operator, spectral_extremes
from .losses import ResampleStream
from .regularizers import Regularizer

__all__ = [
    "SolverKind",
    "CompositeProblem",
    "HyperParams",
    "DerivedSpectra",
    "IterateState",
    "TraceRecord",
    "Trace",
    "resolve_batch_sizes",
    "derive_hyperparams",
    "update_y_block",
    "update_x",
    "update_z",
    "x_update_residual",
    "run",
]


class SolverKind(str, Enum):
    DETERMINISTIC = "deterministic"
    SPIDER = "spider"
    SPIDER_ONLINE = "spider-online"
    SVRG = "svrg"
    SAGA = "saga"
    SGD = "sgd"

    def __str__(self):
        return self.value


# (eta numerator, rho numerator): eta = a*alpha*sigma_min(G)/L,
# rho = c*kappa_G*L/(sigmaA_min*alpha)
_THEORY = {
    SolverKind.SPIDER: (2.0 / 3.0, math.sqrt(170.0)),
    SolverKind.SPIDER_ONLINE: (2.0 / 3.0, math.sqrt(170.0)),
    SolverKind.DETERMINISTIC: (2.0 / 3.0, math.sqrt(170.0)),
    SolverKind.SGD: (2.0 / 3.0, math.sqrt(170.0)),
    SolverKind.SVRG: (1.0 / 5.0, 2.0 * math.sqrt(231.0)),
    SolverKind.SAGA: (1.0 / 17.0, 2.0 * math.sqrt(2031.0)),
}
SGD_ETA_SCALE = 0.1
THEORY_RHO_MAX_ITERS = 20
THEORY_RHO_RTOL = 1e-9
INIT_MODES = ("random", "consistent")


class CompositeProblem:
    """Loss, constraint ``A x + sum_j B_j y_j = c`` and block regularizers."""

    def __init__(self, loss, A, blocks, c=None, streaming=False, notes=""):
        self.loss = loss
        self.A = as_operator(A)
        self.blocks = [(as_operator(B), g) for B, g in blocks]
        if not self.blocks:
            raise ValueError("need at least one (B_j, g_j) block")
        l = self.A.rows
        for j, (B, g) in enumerate(self.blocks):
            if B.rows != l:
                raise ValueError(f"block {j} has {B.rows} rows, A has {l}")
            if not isinstance(g, Regularizer):
                raise TypeError(f"block {j} regularizer must be a Regularizer")
            probe = np.random.default_rng(j).standard_normal(B.cols)
            if not np.any(B.apply(probe)):
                raise ValueError(f"block {j} operator B_j is zero; it cannot couple")
        if self.A.cols != loss.d:
            raise ValueError(f"A has {self.A.cols} columns, loss dimension is {loss.d}")
        self.c = np.zeros(l) if c is None else np.asarray(c, dtype=float)
        if self.c.shape != (l,):
            raise ValueError(f"offset c must have length {l}")
        self.streaming = streaming
        self.notes = notes

    @property
    def m(self):
        return len(self.blocks)

    @property
    def l(self):
        return self.A.rows

    @property
    def d(self):
        return self.A.cols

    def objective(self, x, y):
        return self.loss.value(x) + sum(g.value(yj) for (_, g), yj in zip(self.blocks, y))

    def residual(self, x, y):
        return diag.lagrangian_residual(self, x, y)


@dataclass
class HyperParams:
    """User knobs.  Batch sizes left as ``None`` get the theory defaults."""

    alpha: float = 1.0
    K: int = 100
    b: int | None = None
    q: int | None = None
    b1: int | None = None
    b2: int | None = None
    M: int | None = None
    rho: float | None = None
    eta: float | None = None
    seed: int = 0
    lipschitz: float | None = None
    sigmaA: tuple | None = None
    theory_rho: bool = False
    lyapunov: bool = False
    kappa_a_form: bool = False
    stationarity: bool = False
    objective: bool = True
    random_output: bool = False
    early_stop_tol: float | None = None
    debug_checks: bool = False
    keep_history: bool = False
    init: str = "random"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        for name in ("rho", "eta", "lipschitz"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive when given")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")


@dataclass
class DerivedSpectra:
    L: float
    sigmaA_min: float
    sigmaA_max: float
    sigmaB_max: float
    sigmaB_max_blocks: list
    sigmaB_min_blocks: list
    r: float
    r_blocks: list
    kappa_G: float
    kappa_A: float
    rho: float
    eta: float
    theory_rho_converged: bool | None = None
    delta_estimate: float | None = None

    @property
    def sigmaG_min(self):
        return self.r - self.rho * self.eta * self.sigmaA_max

    @property
    def sigmaG_max(self):
        return self.r - self.rho * self.eta * self.sigmaA_min

    @property
    def sigmaH_min(self):
        return min(r - self.rho * s for r, s in zip(self.r_blocks, self.sigmaB_max_blocks))

    @property
    def sigmaH_max(self):
        return max(r - self.rho * s for r, s in zip(self.r_blocks, self.sigmaB_min_blocks))

    def as_dict(self):
        out = asdict(self)
        out.update(sigmaG_min=self.sigmaG_min, sigmaG_max=self.sigmaG_max)
        return out


@dataclass
class IterateState:
    x: np.ndarray
    y: list
    z: np.ndarray
    v: np.ndarray | None = None
    k: int = 0
    ifo: IfoCounter = field(default_factory=IfoCounter)


@dataclass
class TraceRecord:
    iter: int
    epoch: int
    objective: float | None
    aug_lagrangian: float
    residual: float
    theta: float
    stationarity: float | None
    ifo: int
    seconds: float


@dataclass
class Trace:
    kind: str
    header: dict
    records: list
    state: IterateState
    spectra: DerivedSpectra
    lyapunov: list = field(default_factory=list)
    stationarity_reports: list = field(default_factory=list)
    history: dict = field(default_factory=dict)
    output: tuple | None = None
    stopped_early: bool = False

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def resolve_batch_sizes(hp, kind, n):
    """Fill unset batch sizes with the theory defaults for ``n`` samples.

    SPIDER uses ``b = q = ceil(sqrt(n))``; SVRG ``b = ceil(n^(2/3))`` and
    ``M = ceil(n^(1/3))``; SAGA ``b = ceil(n^(2/3))``; the online variant
    ``q = b2 = ceil(sqrt(n))`` and ``b1 = b2^2``; SGD ``b = ceil(sqrt(n))``.
    """
    kind = SolverKind(kind)
    root = max(1, math.ceil(math.sqrt(n)))
    two_thirds = max(1, math.ceil(n ** (2.0 / 3.0) - 1e-9))
    third = max(1, math.ceil(n ** (1.0 / 3.0) - 1e-9))
    upd = {}
    if kind is SolverKind.SPIDER:
        upd["b"] = hp.b or root
        upd["q"] = hp.q or root
    elif kind is SolverKind.DETERMINISTIC:
        upd["q"] = 1
    elif kind is SolverKind.SPIDER_ONLINE:
        if hp.b1 is None:
            b2 = hp.b2 or hp.q or root
            upd["b1"] = b2 * b2
        else:
            upd["b1"] = hp.b1
        upd["b2"] = online_b2(upd["b1"]) if hp.b2 is None else hp.b2
        upd["q"] = hp.q or upd["b2"]
    elif kind is SolverKind.SVRG:
        upd["b"] = hp.b or two_thirds
        upd["M"] = hp.M or third
    elif kind is SolverKind.SAGA:
        upd["b"] = hp.b or two_thirds
    elif kind is SolverKind.SGD:
        upd["b"] = hp.b or root
    return replace(hp, **upd)


def _kappa_g(rho, eta, sa_min, sa_max):
    # with r at its minimal value the denominator r - rho*eta*sa_max is 1
    return rho * eta * (sa_max - sa_min) + 1.0


def derive_hyperparams(problem, hp, kind):
    """Step size, penalty and linearization constants for ``kind``.

    The penalty formula depends on ``kappa_G``, which depends on the penalty
    through ``r``.  The cycle is broken by evaluating the formula at
    ``kappa_G = 1`` and reporting the realized ``kappa_G``.  With
    ``hp.theory_rho`` the map ``rho -> formula(kappa_G(rho))`` is iterated
    (at most 20 times); if it does not settle the bootstrap value is kept.
    ``r`` and ``r_j`` take their minimal admissible values, so
    ``sigma_min(G) = sigma_min(H_j) = 1``.
    """
    kind = SolverKind(kind)
    L = float(hp.lipschitz) if hp.lipschitz is not None else float(problem.loss.lipschitz())
    if hp.sigmaA is not None:
        sa_min, sa_max = (float(s) for s in hp.sigmaA)
    else:
        sa_min, sa_max = spectral_extremes(problem.A)
    sb = [spectral_extremes(B) for B, _ in problem.blocks]
    sb_min = [s[0] for s in sb]
    sb_max = [s[1] for s in sb]
    eta_c, rho_c = _THEORY[kind]
    alpha = hp.alpha

    eta = hp.eta if hp.eta is not None else eta_c * alpha / L
    if kind is SolverKind.SGD and hp.eta is None:
        eta *= SGD_ETA_SCALE

    converged = None
    if hp.rho is not None:
        rho = float(hp.rho)
    else:
        if not sa_min > 0:
            raise HyperparameterError(
                "sigma_min(A^T A) is 0: A lacks full column rank; "
                "augment A or pass an explicit rho"
            )
        rho = rho_c * L / (sa_min * alpha)
        if hp.theory_rho:
            rho, converged = _theory_rho(rho, rho_c, L, alpha, eta, sa_min, sa_max)

    r = rho * eta * sa_max + 1.0
    r_blocks = [rho * s + 1.0 for s in sb_max]
    kappa_g = _kappa_g(rho, eta, sa_min, sa_max)
    kappa_a = sa_max / sa_min if sa_min > 0 else math.inf
    return DerivedSpectra(
        L=L,
        sigmaA_min=sa_min,
        sigmaA_max=sa_max,
        sigmaB_max=max(sb_max),
        sigmaB_max_blocks=sb_max,
        sigmaB_min_blocks=sb_min,
        r=r,
        r_blocks=r_blocks,
        kappa_G=kappa_g,
        kappa_A=kappa_a,
        rho=rho,
        eta=eta,
        theory_rho_converged=converged,
    )


def _theory_rho(rho0, rho_c, L, alpha, eta, sa_min, sa_max):
    rho = rho0
    for _ in range(THEORY_RHO_MAX_ITERS):
        new = rho_c * _kappa_g(rho, eta, sa_min, sa_max) * L / (sa_min * alpha)
        if not math.isfinite(new):
            break
        if abs(new - rho) <= THEORY_RHO_RTOL * abs(rho):
            return new, True
        rho = new
    warnings.warn(
        "kappa_G fixed-point iteration for rho did not converge in "
        f"{THEORY_RHO_MAX_ITERS} steps; keeping the kappa_G=1 value"
    )
    return rho0, False


# single updates -------------------------------------------------------------


def _prox_block(spectra, j, B, g, yj, residual, z):
    rj = spectra.r_blocks[j]
    w = yj - (spectra.rho / rj) * B.apply_t(residual) + B.apply_t(z) / rj
    return g.prox(w, rj)


def update_y_block(problem, spectra, state, j):
    """Proximal update of block ``j`` given blocks ``< j`` already updated in ``state.y``.

    Returns ``prox_{g_j, r_j}(w)`` with
    ``w = (H_j y_j - rho B_j^T c~ + B_j^T z) / r_j``.
    """
    B, g = problem.blocks[j]
    residual = problem.residual(state.x, state.y)
    return _prox_block(spectra, j, B, g, state.y[j], residual, state.z)


def update_x(problem, spectra, state, v):
    """Linearized primal step (all ``y`` blocks already updated in ``state``).

    ``x+ = G x/r - eta v/r - (eta rho/r) A^T(sum B_j y_j - c - z/rho)``, which
    is the exact minimizer of the quadratic surrogate because
    ``G/eta + rho A^T A = (r/eta) I``.
    """
    residual = problem.residual(state.x, state.y)
    return _x_step(problem, spectra, state.x, state.z, v, residual)


def _x_step(problem, spectra, x, z, v, residual):
    step = spectra.eta / spectra.r
    grad = v - problem.A.apply_t(z) + spectra.rho * problem.A.apply_t(residual)
    return x - step * grad


def update_z(problem, spectra, state):
    """``z - rho * (A x + sum B_j y_j - c)`` at the updated ``x``, ``y``."""
    return state.z - spectra.rho * problem.residual(state.x, state.y)


def x_update_residual(problem, spectra, x_old, x_new, y_new, z, v):
    """Norm of the surrogate's gradient at ``x_new`` (zero for an exact step)."""
    eta, rho, r = spectra.eta, spectra.rho, spectra.r
    dx = x_new - x_old
    g_dx = r * dx - rho * eta * problem.A.apply_t(problem.A.apply(dx))
    res = problem.residual(x_new, y_new)
    out = v + g_dx / eta - problem.A.apply_t(z) + rho * problem.A.apply_t(res)
    return float(np.linalg.norm(out))


# the loop -------------------------------------------------------------------


def _make_estimator(kind, problem, hp, x0, ifo, stream):
    loss = problem.loss
    if kind is SolverKind.DETERMINISTIC:
        return FullGradientEstimator(loss)
    if kind is SolverKind.SPIDER:
        return SpiderEstimator(loss, hp.q, hp.b)
    if kind is SolverKind.SPIDER_ONLINE:
        return SpiderOnlineEstimator(loss, stream, hp.q, hp.b1, hp.b2)
    if kind is SolverKind.SVRG:
        return SvrgEstimator(loss, hp.M, hp.b)
    if kind is SolverKind.SAGA:
        return SagaEstimator(loss, hp.b, x0, ifo)
    if kind is SolverKind.SGD:
        return SgdEstimator(loss, hp.b)
    raise ValueError(f"unknown solver kind {kind!r}")


def _lstsq(op, rhs):
    if op.rows * op.cols <= 4_000_000:
        return np.linalg.lstsq(op.to_dense(), rhs, rcond=None)[0]
    sp_op = LinearOperatorSp(
        (op.rows, op.cols), matvec=op.apply, rmatvec=op.apply_t, dtype=float
    )
    return lsqr(sp_op, rhs, atol=1e-15, btol=1e-15, iter_lim=10 * op.cols)[0]


def _initial_state(problem, seed, init, mode="random"):
    """Standard normal ``x`` and ``y_j``, zero ``z``.

    ``mode="consistent"`` keeps the random ``x`` but starts feasible
    (``y_1`` solves ``B_1 y_1 = c - A x``, other blocks zero) and picks the
    least-norm ``z`` with ``A^T z = grad f(x)``, so the first step already
    satisfies the relation ``A^T z_k = v_{k-1} + (G/eta)(x_k - x_{k-1})``
    that later steps obey by construction.
    """
    rng = SeededRng(seed, 0)
    x = rng.normal(problem.d)
    y = [rng.normal(B.cols) for B, _ in problem.blocks]
    z = np.zeros(problem.l)
    if mode == "consistent":
        B1 = problem.blocks[0][0]
        y = [np.zeros(B.cols) for B, _ in problem.blocks]
        y[0] = _lstsq(B1, problem.c - problem.A.apply(x))
        z = _lstsq(_Adjoint(problem.A), problem.loss.full_grad(x))
    if init:
        if "x" in init:
            x = np.array(init["x"], dtype=float)
        if "y" in init:
            y = [np.array(v, dtype=float) for v in init["y"]]
        if "z" in init:
            z = np.array(init["z"], dtype=float)
    return IterateState(x=x, y=y, z=z)


class _Adjoint:
    def __init__(self, op):
        self.op = op
        self.rows, self.cols = op.cols, op.rows

    def apply(self, v):
        return self.op.apply_t(v)

    def apply_t(self, u):
        return self.op.apply(u)

    def to_dense(self):
        return self.op.to_dense().T


class _Tracker:
    """Keeps the short history that theta and the potentials need."""

    def __init__(self, kind, hp, n, K):
        self.kind = kind
        self.hp = hp
        self.n = n
        self.K = K
        self.dx_prev_sq = 0.0
        self.period_sum = 0.0
        self.dist_prev = 0.0
        self.q = hp.q if kind in _SPIDER_FAMILY else 1

    def period_start(self, k):
        return (k // self.q) * self.q


_SPIDER_FAMILY = (SolverKind.SPIDER, SolverKind.SPIDER_ONLINE, SolverKind.DETERMINISTIC)


def run(problem, hp, kind, callbacks=(), stream=None, init=None):
    """Run ``hp.K`` iterations of the chosen estimator inside the ADMM loop.

    Parameters
    ----------
    problem : CompositeProblem
    hp : HyperParams
        Unset batch sizes are filled by :func:`resolve_batch_sizes`.
    kind : SolverKind or str
    callbacks : iterable of callables
        Each is called as ``cb(k, state, record)`` after iteration ``k``;
        a truthy return value stops the run.
    stream : SampleStream, optional
        Sample source for the online variant.  Defaults to with-replacement
        resampling of the loss's finite sample set.
    init : dict, optional
        Overrides for the initial ``x``, ``y`` (list) and ``z``.  Otherwise
        ``x`` and every ``y_j`` are standard normal and ``z = 0``.

    Returns
    -------
    Trace
        One :class:`TraceRecord` per iteration; ``trace.state`` holds the last
        iterate (or a uniformly drawn one with ``hp.random_output``).

    Raises
    ------
    DivergenceError
        When an iterate becomes non-finite.
    """
    kind = SolverKind(kind)
    hp = resolve_batch_sizes(hp, kind, problem.loss.n)
    spectra = derive_hyperparams(problem, hp, kind)
    rho, eta = spectra.rho, spectra.eta
    K = hp.K

    if kind is SolverKind.SPIDER_ONLINE and stream is None:
        stream = ResampleStream(problem.loss.samples)

    state = _initial_state(problem, hp.seed, init, hp.init)
    sample_rng = SeededRng(hp.seed, 1)
    estimator = _make_estimator(kind, problem, hp, state.x, state.ifo, stream)

    header = {
        "solver": kind.value,
        "seed": hp.seed,
        "K": K,
        "batch": {k: getattr(hp, k) for k in ("b", "q", "b1", "b2", "M")},
        "alpha": hp.alpha,
        "init": hp.init,
        "spectra": spectra.as_dict(),
        "faithful": kind is not SolverKind.SGD,
        "problem": problem.notes,
    }
    if kind is SolverKind.SGD:
        header["note"] = "baseline with constant step 0.1x the SPIDER step; outside the convergence guarantees"
    if kind is SolverKind.SPIDER_ONLINE:
        header["stream"] = getattr(stream, "description", type(stream).__name__)

    m = problem.m
    family = "spider" if kind in _SPIDER_FAMILY or kind is SolverKind.SGD else "vr"
    nu_max = max(diag.nu_constants(spectra, m, family))
    header["nu_max"] = nu_max
    tr = _Tracker(kind, hp, problem.loss.n, K)
    theta_b = hp.b2 if kind is SolverKind.SPIDER_ONLINE else (hp.b or 1)

    c_sched = None
    if hp.lyapunov:
        if kind is SolverKind.SVRG:
            c_sched = diag.svrg_c_schedule(spectra.L, spectra.sigmaA_min, rho, hp.b, hp.M)
        elif kind is SolverKind.SAGA:
            c_sched = diag.saga_c_schedule(spectra.L, spectra.sigmaA_min, rho, hp.b, problem.loss.n, K)

    trace = Trace(kind=kind.value, header=header, records=[], state=state, spectra=spectra)
    keep = hp.keep_history or hp.random_output
    xs = [state.x.copy()] if (keep or hp.lyapunov) else None
    if keep:
        trace.history = {"x": [state.x.copy()], "y": [[v.copy() for v in state.y]], "z": [state.z.copy()]}
    saga_dist = 0.0
    delta_est = 0.0

    def lyap_now(k, x, y, z, dx_prev_sq, period_sum, dist_prev, dist):
        c_t = 0.0
        if kind is SolverKind.SVRG:
            s = max(1, -(-k // hp.M))
            t = k - (s - 1) * hp.M
            c_t = c_sched[t]
        elif kind is SolverKind.SAGA:
            c_t = c_sched[min(k, K)]
        win = diag.LyapunovWindow(
            kind=kind.value, x=x, y=y, z=z, dx_prev_sq=dx_prev_sq, b=theta_b,
            period_sq_sum=period_sum, dist_prev=dist_prev, dist=dist, c_t=c_t,
        )
        return diag.lyapunov_value(kind.value, problem, win, spectra, hp.kappa_a_form)

    if hp.lyapunov:
        trace.lyapunov.append(lyap_now(0, state.x, state.y, state.z, 0.0, 0.0, 0.0, 0.0))

    t0 = time.perf_counter()
    Ax = problem.A.apply(state.x)
    By = [B.apply(yj) for (B, _), yj in zip(problem.blocks, state.y)]

    for k in range(K):
        x_old = state.x
        # SVRG snapshot / SAGA table distances are taken before the estimator moves
        if kind is SolverKind.SAGA:
            saga_dist = estimator.mean_dist_sq(x_old)
        v = estimator.step(x_old, sample_rng, state.ifo)
        delta_est = max(delta_est, float(np.linalg.norm(v)))
        if kind is SolverKind.SVRG:
            snap = estimator.x_snapshot
            snap_dist = float(np.sum((x_old - snap) ** 2))
            snap_prev = float(np.sum((xs[-2] - snap) ** 2)) if (xs is not None and len(xs) > 1) else tr.dist_prev

        # y blocks, Gauss-Seidel
        base = Ax - problem.c
        residual = base + sum(By)
        y_new = []
        dy_sq = 0.0
        for j, (B, g) in enumerate(problem.blocks):
            yj = _prox_block(spectra, j, B, g, state.y[j], residual, state.z)
            Byj = B.apply(yj)
            residual = residual + (Byj - By[j])
            By[j] = Byj
            dy_sq += float(np.sum((yj - state.y[j]) ** 2))
            y_new.append(yj)

        # x step uses the residual at (x_k, y^{k+1})
        x_new = _x_step(problem, spectra, x_old, state.z, v, residual)
        Ax = problem.A.apply(x_new)
        residual = Ax - problem.c + sum(By)
        z_new = state.z - rho * residual

        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z_new))):
            trace.state = state
            raise DivergenceError(k + 1, rho, eta, trace)

        if hp.debug_checks:
            res_norm = x_update_residual(problem, spectra, x_old, x_new, y_new, state.z, v)
            bound = 1e-8 * (1.0 + float(np.linalg.norm(v)))
            assert res_norm <= bound, f"x-step optimality residual {res_norm:.3e} > {bound:.3e}"

        dx_sq = float(np.sum((x_new - x_old) ** 2))
        if tr.period_start(k) == k:
            tr.period_sum = 0.0
        tr.period_sum += dx_sq
        if kind is SolverKind.SVRG:
            theta = diag.theta_svrg(dx_sq, tr.dx_prev_sq, snap_dist, snap_prev, hp.b, dy_sq)
        elif kind is SolverKind.SAGA:
            theta = diag.theta_saga(dx_sq, tr.dx_prev_sq, saga_dist, tr.dist_prev, hp.b, dy_sq)
            tr.dist_prev = saga_dist
        else:
            theta = diag.theta_spider(dx_sq, tr.dx_prev_sq, tr.period_sum, tr.q, dy_sq)

        state = IterateState(x=x_new, y=y_new, z=z_new, v=v, k=k + 1, ifo=state.ifo)
        if xs is not None:
            xs.append(x_new.copy())
        if keep:
            trace.history["x"].append(x_new.copy())
            trace.history["y"].append([u.copy() for u in y_new])
            trace.history["z"].append(z_new.copy())

        lag = float(
            (problem.loss.value(x_new) + sum(g.value(u) for (_, g), u in zip(problem.blocks, y_new)))
        ) if hp.objective else None
        res_sq = float(residual @ residual)
        aug = (lag if lag is not None else problem.objective(x_new, y_new)) - float(z_new @ residual) + 0.5 * rho * res_sq
        stat = None
        if hp.stationarity:
            rep = diag.stationarity_sq(problem, x_new, y_new, z_new)
            trace.stationarity_reports.append(rep)
            stat = rep.total_sq

        if hp.lyapunov:
            k1 = k + 1
            if kind is SolverKind.SVRG:
                s = -(-k1 // hp.M)
                snap_k = xs[(s - 1) * hp.M]
                dist = float(np.sum((x_new - snap_k) ** 2))
                dist_prev = float(np.sum((x_old - snap_k) ** 2))
            elif kind is SolverKind.SAGA:
                dist = estimator.mean_dist_sq(x_new)
                dist_prev = saga_dist
            else:
                dist = dist_prev = 0.0
            start = tr.period_start(k1)
            psum = tr.period_sum if start <= k else 0.0
            trace.lyapunov.append(lyap_now(k1, x_new, y_new, z_new, dx_sq, psum, dist_prev, dist))

        epoch = _epoch(kind, hp, k)
        rec = TraceRecord(
            iter=k + 1,
            epoch=epoch,
            objective=lag,
            aug_lagrangian=float(aug),
            residual=math.sqrt(res_sq),
            theta=float(theta),
            stationarity=stat,
            ifo=state.ifo.count,
            seconds=time.perf_counter() - t0,
        )
        trace.records.append(rec)
        tr.dx_prev_sq = dx_sq
        if kind is SolverKind.SVRG:
            tr.dist_prev = snap_dist

        stop = False
        for cb in callbacks:
            if cb(k, state, rec):
                stop = True
        if hp.early_stop_tol is not None and theta < hp.early_stop_tol:
            stop = True
        if stop:
            trace.stopped_early = k + 1 < K
            break

    spectra.delta_estimate = delta_est
    trace.state = state
    if hp.random_output and trace.records:
        pick = int(SeededRng(hp.seed, 2).integers(len(trace.records), 1)[0]) + 1
        h = trace.history
        trace.output = (h["x"][pick], h["y"][pick], h["z"][pick])
    else:
        trace.output = (state.x, state.y, state.z)
    return trace


def _epoch(kind, hp, k):
    if kind in (SolverKind.SPIDER, SolverKind.SPIDER_ONLINE):
        return k // hp.q
    if kind is SolverKind.SVRG:
        return k // hp.M
    return k
