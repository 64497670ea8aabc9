"""Optimality measures and Lyapunov potentials evaluated along a run.

Everything here is a pure function of a problem, a state and a few scalars
recorded by the solver, so it can be replayed on a stored trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError

__all__ = [
    "StationarityReport",
    "augmented_lagrangian",
    "lagrangian_residual",
    "stationarity_sq",
    "theta_spider",
    "theta_svrg",
    "theta_saga",
    "nu_constants",
    "svrg_c_schedule",
    "saga_c_schedule",
    "saga_p",
    "LyapunovWindow",
    "lyapunov_value",
    "finite_diff_check",
    "online_w_constant",
]


def lagrangian_residual(problem, x, y):
    """``A x + sum_j B_j y_j - c``."""
    r = problem.A.apply(x) - problem.c
    for (B, _), yj in zip(problem.blocks, y):
        r = r + B.apply(yj)
    return r


def augmented_lagrangian(problem, x, y, z, rho):
    """``f(x) + sum g_j(y_j) - <z, res> + (rho/2)||res||^2``."""
    res = lagrangian_residual(problem, x, y)
    obj = problem.loss.value(x) + sum(g.value(yj) for (_, g), yj in zip(problem.blocks, y))
    return float(obj - z @ res + 0.5 * rho * (res @ res))


@dataclass
class StationarityReport:
    grad_block_sq: float
    y_block_sq: list
    feasibility_sq: float
    total_sq: float = field(init=False)

    def __post_init__(self):
        self.total_sq = self.grad_block_sq + sum(self.y_block_sq) + self.feasibility_sq


def stationarity_sq(problem, x, y, z):
    """Squared distance from 0 to the Lagrangian subdifferential.

    Needs an exact full gradient, so streaming problems are rejected.
    """
    if getattr(problem, "streaming", False):
        raise CapabilityError("stationarity needs a full gradient; use the theta surrogate")
    g = problem.A.apply_t(z) - problem.loss.full_grad(x)
    yb = [reg.min_subgrad_dist_sq(yj, B.apply_t(z)) for (B, reg), yj in zip(problem.blocks, y)]
    res = lagrangian_residual(problem, x, y)
    return StationarityReport(float(g @ g), yb, float(res @ res))


# theta surrogates --------------------------------------------------------


def theta_spider(dx_next_sq, dx_prev_sq, period_sq_sum, q, dy_sq):
    """``||dx_k||^2 + ||dx_{k-1}||^2 + (1/q) sum_{period..k} ||dx_i||^2 + sum ||dy_j||^2``.

    ``period_sq_sum`` must already include ``dx_next_sq``.
    """
    if q < 1:
        raise ValueError("q must be positive")
    return dx_next_sq + dx_prev_sq + period_sq_sum / q + dy_sq


def theta_svrg(dx_next_sq, dx_prev_sq, snap_dist_sq, snap_dist_prev_sq, b, dy_sq):
    return dx_next_sq + dx_prev_sq + (snap_dist_sq + snap_dist_prev_sq) / b + dy_sq


def theta_saga(dx_next_sq, dx_prev_sq, table_dist, table_dist_prev, b, dy_sq):
    """Table distances are the averages ``(1/n) sum_i ||x - u_i||^2``."""
    return dx_next_sq + dx_prev_sq + (table_dist + table_dist_prev) / b + dy_sq


# constants ----------------------------------------------------------------


def _sigma_g(spectra):
    gmin = spectra.r - spectra.rho * spectra.eta * spectra.sigmaA_max
    gmax = spectra.r - spectra.rho * spectra.eta * spectra.sigmaA_min
    return gmin, gmax


def nu_constants(spectra, m, family):
    """``(nu1, nu2, nu3)`` bounding the three stationarity blocks by theta.

    ``family`` is ``"spider"`` (also online/deterministic) or ``"vr"``
    (SVRG/SAGA); they differ only in the leading constant of ``nu3``.
    """
    L = spectra.L
    rho, eta = spectra.rho, spectra.eta
    sa_min, sa_max = spectra.sigmaA_min, spectra.sigmaA_max
    sb = spectra.sigmaB_max
    _, gmax = _sigma_g(spectra)
    hmax = spectra.sigmaH_max
    nu1 = m * (rho**2 * sb * sa_max + rho**2 * sb**2 + hmax**2)
    nu2 = 3.0 * (L**2 + gmax**2 / eta**2)
    lead = 18.0 if family == "spider" else 9.0
    nu3 = lead * L**2 / (sa_min * rho**2) + 3.0 * gmax**2 / (sa_min * eta**2 * rho**2)
    return nu1, nu2, nu3


def online_w_constant(delta, sigmaA_min, rho):
    """The online variance constant ``12 delta^2 max(1, 6/(sigmaA_min rho^2))``.

    ``delta`` is only an empirical estimate, so the result is as well.
    """
    return 12.0 * delta**2 * max(1.0, 6.0 / (sigmaA_min * rho**2))


def svrg_c_schedule(L, sigmaA_min, rho, b, M):
    """Backward recursion ``c_t = C + (1 + 1/M) c_{t+1}`` with ``c_{M+1} = 0``.

    Returns an array indexed ``0..M+1``; ``c_0`` extends the same recursion.
    """
    C = 18.0 * L**2 / (sigmaA_min * rho * b) + L / b
    beta = 1.0 / M
    c = np.zeros(M + 2)
    for t in range(M, -1, -1):
        c[t] = C + (1.0 + beta) * c[t + 1]
    return c


def saga_p(n, b):
    """Probability that a given index lands in a size-b with-replacement batch."""
    return 1.0 - (1.0 - 1.0 / n) ** b


def saga_c_schedule(L, sigmaA_min, rho, b, n, T):
    """``c_t = C + (1-p)(1+beta) c_{t+1}``, ``beta = b/(4n)``, ``c_T = 0``."""
    C = 18.0 * L**2 / (sigmaA_min * rho * b) + L / b
    factor = (1.0 - saga_p(n, b)) * (1.0 + b / (4.0 * n))
    c = np.zeros(T + 1)
    for t in range(T - 1, -1, -1):
        c[t] = C + factor * c[t + 1]
    return c


# Lyapunov potentials --------------------------------------------------------


@dataclass
class LyapunovWindow:
    """Scalars a potential needs at one iterate.

    ``dist_prev``/``dist`` are snapshot distances (SVRG) or table-average
    distances (SAGA); ``period_sq_sum`` is the SPIDER in-period sum up to
    ``k-1``.  ``b`` is the recursion batch size (``b2`` for the online variant).
    """

    kind: str
    x: np.ndarray
    y: list
    z: np.ndarray
    dx_prev_sq: float
    b: int
    period_sq_sum: float = 0.0
    dist_prev: float = 0.0
    dist: float = 0.0
    c_t: float = 0.0


_LYAP_KINDS = {
    "deterministic": "spider",
    "spider": "spider",
    "spider-online": "spider",
    "svrg": "svrg",
    "saga": "saga",
}


def lyapunov_value(kind, problem, window, spectra, kappa_a_form=False):
    """Potential value at one iterate for the SPIDER family, SVRG or SAGA.

    With ``kappa_a_form`` the SPIDER potential scales its ``sigma_max(G)``
    and in-period terms by ``kappa_A`` (the longer-form constants).
    """
    kind = str(kind)
    if kind not in _LYAP_KINDS:
        raise ValueError(f"no potential is defined for solver {kind!r}")
    if window.kind != kind:
        raise ValueError(f"window recorded for {window.kind!r}, asked for {kind!r}")
    L, rho, eta = spectra.L, spectra.rho, spectra.eta
    sa_min = spectra.sigmaA_min
    _, gmax = _sigma_g(spectra)
    lag = augmented_lagrangian(problem, window.x, window.y, window.z, rho)
    family = _LYAP_KINDS[kind]
    if family == "spider":
        ka = spectra.kappa_A if kappa_a_form else 1.0
        coef = 9.0 * L**2 / (sa_min * rho) + 3.0 * ka * gmax**2 / (sa_min * eta**2 * rho)
        inner = 2.0 * ka * L**2 / (sa_min * rho * window.b)
        return lag + coef * window.dx_prev_sq + inner * window.period_sq_sum
    coef = 3.0 * gmax**2 / (sa_min * eta**2 * rho) + 9.0 * L**2 / (sa_min * rho)
    lag_term = 9.0 * L**2 / (sa_min * rho * window.b)
    return lag + coef * window.dx_prev_sq + lag_term * window.dist_prev + window.c_t * window.dist


def finite_diff_check(loss, x, h=None, idx=None):
    """Max relative error between central differences and the analytic gradient.

    The default step is ``1e-6 * (1 + ||x||)``.  The relative error of each
    coordinate is taken against ``max(|g|_inf, 1e-12)`` so tiny coordinates do
    not dominate.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-6 * (1.0 + np.linalg.norm(x))
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    g = loss.grad(x, idx)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (loss.value(x + e, idx) - loss.value(x - e, idx)) / (2 * h)
    scale = max(float(np.max(np.abs(g))), 1e-12)
    return float(np.max(np.abs(fd - g)) / scale)
