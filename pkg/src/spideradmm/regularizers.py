"""Convex penalties ``g_j`` with scaled proximal maps.

``prox(w, r)`` solves ``argmin_y (r/2)||y - w||^2 + g(y)``.
``min_subgrad_dist_sq(y, t)`` returns ``dist(t, dg(y))^2``, the squared
distance used by the stationarity measure.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Regularizer", "Zero", "L1", "Nuclear", "soft_threshold", "SVD_CUTOFF"]

SVD_CUTOFF = 1e-10


def soft_threshold(w, tau):
    return np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)


def _check_r(r):
    if not r > 0:
        raise ValueError(f"prox scaling must be positive, got {r}")


class Regularizer:
    lam = 0.0

    def value(self, y):
        raise NotImplementedError

    def prox(self, w, r):
        raise NotImplementedError

    def min_subgrad_dist_sq(self, y, t):
        raise NotImplementedError


class Zero(Regularizer):
    def value(self, y):
        return 0.0

    def prox(self, w, r):
        _check_r(r)
        return np.array(w, dtype=float)

    def min_subgrad_dist_sq(self, y, t):
        t = np.asarray(t, dtype=float)
        return float(t @ t)

    def __repr__(self):
        return "Zero()"


class L1(Regularizer):
    """``lam * ||y||_1``."""

    def __init__(self, lam):
        if lam < 0:
            raise ValueError("L1 weight must be non-negative")
        self.lam = float(lam)

    def value(self, y):
        return self.lam * float(np.abs(y).sum())

    def prox(self, w, r):
        _check_r(r)
        w = np.asarray(w, dtype=float)
        if self.lam == 0.0:
            return w.copy()
        return soft_threshold(w, self.lam / r)

    def min_subgrad_dist_sq(self, y, t):
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        nz = y != 0
        on = (self.lam * np.sign(y[nz]) - t[nz]) ** 2
        off = np.maximum(np.abs(t[~nz]) - self.lam, 0.0) ** 2
        return float(on.sum() + off.sum())

    def __repr__(self):
        return f"L1(lam={self.lam:g})"


class Nuclear(Regularizer):
    """``lam * ||Y||_*`` for ``Y`` stored row-major as a flat vector."""

    def __init__(self, lam, rows, cols):
        if lam < 0:
            raise ValueError("nuclear weight must be non-negative")
        self.lam = float(lam)
        self.rows = int(rows)
        self.cols = int(cols)

    def _mat(self, v):
        v = np.asarray(v, dtype=float)
        if v.size != self.rows * self.cols:
            raise ValueError(
                f"expected {self.rows}x{self.cols}={self.rows * self.cols} entries, got {v.size}"
            )
        return v.reshape(self.rows, self.cols)

    def value(self, y):
        return self.lam * float(np.linalg.svd(self._mat(y), compute_uv=False).sum())

    def prox(self, w, r):
        _check_r(r)
        W = self._mat(w)
        if self.lam == 0.0:
            return W.ravel().copy()
        U, s, Vt = np.linalg.svd(W, full_matrices=False)
        s = np.maximum(s - self.lam / r, 0.0)
        return ((U * s) @ Vt).ravel()

    def min_subgrad_dist_sq(self, y, t):
        # dg(Y) = lam * (U V^T + {W : U^T W = 0, W V = 0, ||W||_2 <= 1})
        Y = self._mat(y)
        T = self._mat(t)
        U, s, Vt = np.linalg.svd(Y, full_matrices=False)
        rank = int(np.sum(s > SVD_CUTOFF * s[0])) if s.size and s[0] > 0 else 0
        U = U[:, :rank]
        V = Vt[:rank].T
        PU = U @ U.T
        PV = V @ V.T
        TV = T @ PV
        T_in = PU @ TV
        d2 = float(np.sum((T_in - self.lam * (U @ V.T)) ** 2))
        d2 += float(np.sum((PU @ T - T_in) ** 2))
        d2 += float(np.sum((TV - T_in) ** 2))
        T_perp = T - PU @ T - TV + T_in
        sp = np.linalg.svd(T_perp, compute_uv=False)
        d2 += float(np.sum(np.maximum(sp - self.lam, 0.0) ** 2))
        return d2

    def __repr__(self):
        return f"Nuclear(lam={self.lam:g}, shape=({self.rows}, {self.cols}))"
