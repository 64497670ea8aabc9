"""Stochastic gradient estimators with incremental-first-order-oracle counts.

One IFO is one evaluation of a single-sample gradient ``grad f_i``.  A full
gradient costs ``n``; a size-``b`` minibatch at one point costs ``b`` and at
two points ``2b``.  SAGA table entries are lookups and cost nothing.
"""

from __future__ import annotations

import copy
import math
import warnings

import numpy as np

from .linalg import sample_minibatch

__all__ = [
    "IfoCounter",
    "FullGradientEstimator",
    "SgdEstimator",
    "SpiderEstimator",
    "SpiderOnlineEstimator",
    "SvrgEstimator",
    "SagaEstimator",
    "online_b2",
    "ifo_total_deterministic",
    "ifo_total_sgd",
    "ifo_total_spider",
    "ifo_total_spider_online",
    "ifo_total_svrg",
    "ifo_total_saga",
]


class IfoCounter:
    def __init__(self, count=0):
        self.count = int(count)

    def add(self, k):
        if k < 0:
            raise ValueError("IFO counts only go up")
        self.count += int(k)

    def __int__(self):
        return self.count

    def __repr__(self):
        return f"IfoCounter({self.count})"


class Estimator:
    """Common interface: ``step(x, rng, ifo) -> v`` advances the state."""

    k = 0

    def clone(self):
        return copy.deepcopy(self)

    def refresh_due(self):
        return False


class FullGradientEstimator(Estimator):
    def __init__(self, loss):
        self.loss = loss
        self.k = 0

    def step(self, x, rng, ifo):
        ifo.add(self.loss.n)
        self.k += 1
        return self.loss.full_grad(x)

    def refresh_due(self):
        return True


class SgdEstimator(Estimator):
    """Plain minibatch gradient ``grad f_I(x)``."""

    def __init__(self, loss, b):
        self.loss = loss
        self.b = int(b)
        self.k = 0

    def step(self, x, rng, ifo):
        idx = sample_minibatch(rng, self.loss.n, self.b)
        ifo.add(self.b)
        self.k += 1
        return self.loss.minibatch_grad(x, idx)


class SpiderEstimator(Estimator):
    """Recursive path-integrated estimator.

    Every ``q`` steps ``v`` is the exact full gradient; in between
    ``v_k = grad f_I(x_k) - grad f_I(x_{k-1}) + v_{k-1}``.
    """

    def __init__(self, loss, q, b):
        if q < 1 or b < 1:
            raise ValueError("q and b must be positive")
        self.loss = loss
        self.q = int(q)
        self.b = int(b)
        self.k = 0
        self.v_prev = None
        self.x_prev = None

    def refresh_due(self):
        return self.k % self.q == 0

    def _refresh(self, x, rng, ifo):
        ifo.add(self.loss.n)
        return self.loss.full_grad(x)

    def _recurse(self, x, rng, ifo):
        idx = sample_minibatch(rng, self.loss.n, self.b)
        ifo.add(2 * self.b)
        diff = self.loss.minibatch_grad(x, idx) - self.loss.minibatch_grad(self.x_prev, idx)
        return diff + self.v_prev

    def step(self, x, rng, ifo):
        x = np.asarray(x, dtype=float)
        if self.refresh_due():
            v = self._refresh(x, rng, ifo)
        else:
            v = self._recurse(x, rng, ifo)
        self.x_prev = x.copy()
        self.v_prev = v
        self.k += 1
        return v


def online_b2(b1):
    """Recursion batch ``round(sqrt(b1))``; warns when ``b1`` is not a square."""
    if b1 < 1:
        raise ValueError("b1 must be at least 1")
    b2 = max(1, int(round(math.sqrt(b1))))
    if b2 * b2 != b1:
        warnings.warn(f"b1={b1} is not a perfect square; using b2=round(sqrt(b1))={b2}")
    return b2


class SpiderOnlineEstimator(SpiderEstimator):
    """Online variant: refresh with ``b1`` fresh samples, recurse with ``b2``.

    The recursion uses the gradient difference at the same fresh samples.
    """

    def __init__(self, loss, stream, q, b1, b2=None):
        if b1 < 1:
            raise ValueError("b1 must be at least 1")
        expected = online_b2(b1)
        if b2 is None:
            b2 = expected
        elif int(b2) != expected:
            raise ValueError(f"b2 must equal round(sqrt(b1)) = {expected}, got {b2}")
        super().__init__(loss, q, b2)
        self.stream = stream
        self.b1 = int(b1)
        self.b2 = int(b2)

    def _refresh(self, x, rng, ifo):
        batch = self.stream.draw(rng, self.b1)
        ifo.add(self.b1)
        return self.loss.batch_grad(x, batch)

    def _recurse(self, x, rng, ifo):
        batch = self.stream.draw(rng, self.b2)
        ifo.add(2 * self.b2)
        diff = self.loss.batch_grad(x, batch) - self.loss.batch_grad(self.x_prev, batch)
        return diff + self.v_prev


class SvrgEstimator(Estimator):
    """Snapshot estimator ``grad f_I(x) - grad f_I(x~) + grad f(x~)``.

    A new snapshot (the current point) is taken every ``M`` steps.
    """

    def __init__(self, loss, M, b):
        if M < 1 or b < 1:
            raise ValueError("M and b must be positive")
        self.loss = loss
        self.M = int(M)
        self.b = int(b)
        self.k = 0
        self.x_snapshot = None
        self.full_grad_snapshot = None

    @property
    def epoch(self):
        return self.k // self.M

    @property
    def t(self):
        return self.k % self.M

    def refresh_due(self):
        return self.k % self.M == 0

    def step(self, x, rng, ifo):
        x = np.asarray(x, dtype=float)
        if self.refresh_due():
            self.x_snapshot = x.copy()
            self.full_grad_snapshot = self.loss.full_grad(x)
            ifo.add(self.loss.n)
        idx = sample_minibatch(rng, self.loss.n, self.b)
        ifo.add(2 * self.b)
        g = self.loss.minibatch_grad(x, idx) - self.loss.minibatch_grad(self.x_snapshot, idx)
        self.k += 1
        return g + self.full_grad_snapshot


class SagaEstimator(Estimator):
    """Gradient-table estimator.

    The table stores ``grad f_i(u_i)`` rather than the points ``u_i``; the
    points are kept as well so distance terms can be evaluated.  Duplicate
    indices in one minibatch are applied in draw order (last write wins).
    """

    def __init__(self, loss, b, x0, ifo):
        if b < 1:
            raise ValueError("b must be positive")
        self.loss = loss
        self.b = int(b)
        self.k = 0
        x0 = np.asarray(x0, dtype=float)
        self.grad_table = loss.per_sample_grads(x0)
        self.points = np.tile(x0, (loss.n, 1))
        self.phi = self.grad_table.mean(axis=0)
        ifo.add(loss.n)

    def step(self, x, rng, ifo):
        x = np.asarray(x, dtype=float)
        n = self.loss.n
        idx = sample_minibatch(rng, n, self.b)
        fresh = self.loss.per_sample_grads(x, idx)
        ifo.add(self.b)
        v = (fresh - self.grad_table[idx]).mean(axis=0) + self.phi
        for row, i in enumerate(idx):
            self.phi = self.phi + (fresh[row] - self.grad_table[i]) / n
            self.grad_table[i] = fresh[row]
            self.points[i] = x
        self.k += 1
        return v

    def resync(self):
        """Recompute ``phi`` from the table; returns the drift that was removed."""
        exact = self.grad_table.mean(axis=0)
        drift = float(np.max(np.abs(exact - self.phi)))
        self.phi = exact
        return drift

    def mean_dist_sq(self, x):
        """``(1/n) sum_i ||x - u_i||^2``."""
        diff = self.points - np.asarray(x, dtype=float)[None, :]
        return float(np.einsum("ij,ij->", diff, diff)) / self.loss.n


# closed-form IFO totals -------------------------------------------------


def _refreshes(K, period):
    return -(-K // period)


def ifo_total_deterministic(K, n):
    return n * K


def ifo_total_sgd(K, b):
    return b * K


def ifo_total_spider(K, n, q, b):
    r = _refreshes(K, q)
    return n * r + 2 * b * (K - r)


def ifo_total_spider_online(K, b1, q, b2):
    r = _refreshes(K, q)
    return b1 * r + 2 * b2 * (K - r)


def ifo_total_svrg(K, n, M, b):
    return n * _refreshes(K, M) + 2 * b * K


def ifo_total_saga(K, n, b):
    return n + b * K
