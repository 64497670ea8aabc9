"""Linear operators, spectral extremes and seeded sampling.

Every operator exposes ``rows``, ``cols``, ``apply`` and ``apply_t``.  Matrix
valued unknowns (the multi-task weights) are handled as flat row-major
vectors together with :class:`KronLift`, so the solver only ever sees vectors.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "SparseOperator",
    "ScaledIdentity",
    "VStack",
    "KronLift",
    "as_operator",
    "spectral_extremes",
    "SeededRng",
    "sample_minibatch",
    "DEFAULT_EIG_CAP",
]

DEFAULT_EIG_CAP = 2048


class LinearOperator:
    """Base class; subclasses implement ``_apply`` and ``_apply_t``."""

    rows: int
    cols: int

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.cols:
            raise ValueError(
                f"operator expects a vector of length {self.cols}, got shape {v.shape}"
            )
        return self._apply(v)

    def apply_t(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim != 1 or u.shape[0] != self.rows:
            raise ValueError(
                f"transpose expects a vector of length {self.rows}, got shape {u.shape}"
            )
        return self._apply_t(u)

    def to_dense(self):
        """Materialize the operator column by column."""
        eye = np.eye(self.cols)
        return np.column_stack([self._apply(eye[:, j]) for j in range(self.cols)])

    def gram(self):
        """Dense ``op.T @ op``."""
        m = self.to_dense()
        return m.T @ m

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __repr__(self):
        return f"{type(self).__name__}({self.rows}x{self.cols})"


class DenseOperator(LinearOperator):
    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.size == 0:
            raise ValueError("dense operator needs a non-empty 2-D array")
        self.matrix = m
        self.rows, self.cols = m.shape

    def _apply(self, v):
        return self.matrix @ v

    def _apply_t(self, u):
        return self.matrix.T @ u

    def to_dense(self):
        return self.matrix.copy()


class SparseOperator(LinearOperator):
    """Compressed sparse row matrix.  Zero rows are allowed (an empty edge set)."""

    def __init__(self, matrix):
        m = sparse.csr_matrix(matrix, dtype=float)
        if m.shape[1] == 0:
            raise ValueError("sparse operator needs at least one column")
        self.matrix = m
        self._mt = m.T.tocsr()
        self.rows, self.cols = m.shape

    def _apply(self, v):
        return self.matrix @ v

    def _apply_t(self, u):
        return self._mt @ u

    def to_dense(self):
        return self.matrix.toarray()


class ScaledIdentity(LinearOperator):
    def __init__(self, n, scale=1.0):
        if n < 1:
            raise ValueError("identity dimension must be positive")
        self.rows = self.cols = int(n)
        self.scale = float(scale)

    def _apply(self, v):
        if self.scale == 1.0:
            return v.copy()
        return self.scale * v

    def _apply_t(self, u):
        return self._apply(u)

    def to_dense(self):
        return self.scale * np.eye(self.rows)

    def gram(self):
        return self.scale**2 * np.eye(self.rows)


class VStack(LinearOperator):
    """Vertical stack ``[op_1; op_2; ...]`` of operators sharing ``cols``."""

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise ValueError("cannot stack zero operators")
        cols = {op.cols for op in ops}
        if len(cols) != 1:
            raise ValueError(f"stacked operators disagree on column count: {sorted(cols)}")
        self.ops = ops
        self.cols = ops[0].cols
        self.rows = sum(op.rows for op in ops)
        self._splits = np.cumsum([op.rows for op in ops])[:-1]

    def _apply(self, v):
        return np.concatenate([op._apply(v) for op in self.ops])

    def _apply_t(self, u):
        parts = np.split(u, self._splits)
        out = self.ops[0]._apply_t(parts[0])
        for op, part in zip(self.ops[1:], parts[1:]):
            out = out + op._apply_t(part)
        return out

    def to_dense(self):
        return np.vstack([op.to_dense() for op in self.ops])


class KronLift(LinearOperator):
    """``base ⊗ I_k`` acting on row-major flattened ``(base.cols, k)`` matrices.

    For ``X`` of shape ``(p, k)`` this returns ``(base @ X).ravel()``.
    """

    def __init__(self, base, k):
        self.base = as_operator(base)
        self.k = int(k)
        if self.k < 1:
            raise ValueError("lift dimension must be positive")
        self.rows = self.base.rows * self.k
        self.cols = self.base.cols * self.k
        self._bm = self.base.to_dense()

    def _apply(self, v):
        return (self._bm @ v.reshape(self.base.cols, self.k)).ravel()

    def _apply_t(self, u):
        return (self._bm.T @ u.reshape(self.base.rows, self.k)).ravel()

    def to_dense(self):
        return np.kron(self._bm, np.eye(self.k))

    def gram(self):
        return np.kron(self._bm.T @ self._bm, np.eye(self.k))


def as_operator(obj):
    """Wrap arrays and sparse matrices; pass operators through."""
    if isinstance(obj, LinearOperator):
        return obj
    if sparse.issparse(obj):
        return SparseOperator(obj)
    return DenseOperator(obj)


def _small_gram(op):
    # eigenvalues of kron(G, I_k) equal those of G
    if isinstance(op, KronLift):
        return op._bm.T @ op._bm
    return op.gram()


def spectral_extremes(op, tol=1e-10, cap=DEFAULT_EIG_CAP):
    """Smallest and largest eigenvalues of ``op.T @ op``.

    Uses a dense symmetric eigensolver, so ``op.cols`` (or the base column
    count of a :class:`KronLift`) must not exceed ``cap``.  ``tol`` is the
    relative tolerance below which the smallest eigenvalue is reported as 0.

    Raises
    ------
    NotImplementedError
        If the operator is too large; supply the spectra manually instead.
    """
    if isinstance(op, ScaledIdentity):
        s = op.scale**2
        return s, s
    cols = op.base.cols if isinstance(op, KronLift) else op.cols
    if cols > cap:
        raise NotImplementedError(
            f"operator has {cols} columns, above the dense eigensolver cap of {cap}; "
            "pass sigma_min/sigma_max explicitly in the configuration"
        )
    evals = np.linalg.eigvalsh(_small_gram(op))
    lo, hi = float(evals[0]), float(evals[-1])
    if lo < tol * max(hi, 1.0):
        lo = 0.0
    return max(lo, 0.0), hi


class SeededRng:
    """Reproducible random stream keyed by ``(seed, stream_id)``."""

    def __init__(self, seed=0, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def integers(self, n, size):
        return self.gen.integers(0, n, size=size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def child(self, stream_id):
        return SeededRng(self.seed, stream_id)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id})"


def sample_minibatch(rng, n, b):
    """Draw ``b`` indices uniformly with replacement from ``range(n)``."""
    if n < 1:
        raise ValueError("cannot sample from an empty index set")
    if b < 1:
        raise ValueError("minibatch size must be at least 1")
    return rng.integers(n, b)
