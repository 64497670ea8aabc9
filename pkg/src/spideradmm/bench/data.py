"""LIBSVM text I/O and seeded synthetic datasets."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import sparse

from ..losses import SampleSet

__all__ = [
    "LibsvmParseError",
    "parse_libsvm",
    "write_libsvm",
    "chain_features",
    "synthetic_binary",
    "synthetic_multiclass",
]


class LibsvmParseError(ValueError):
    def __init__(self, path, lineno, msg):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


def _parse_label(tok, path, lineno):
    try:
        val = float(tok)
    except ValueError:
        raise LibsvmParseError(path, lineno, f"non-numeric label {tok!r}") from None
    if not np.isfinite(val):
        raise LibsvmParseError(path, lineno, f"non-finite label {tok!r}")
    return val


def parse_libsvm(path, n_features=None, task=None):
    """Read a LIBSVM file into a CSR :class:`SampleSet`.

    Labels drawn only from {-1, 0, +1} are treated as binary (0 becomes -1);
    anything else must be a positive integer class index.  Feature indices are
    1-based in the file.  ``n_features`` pads the column count.
    """
    path = Path(path)
    labels, rows, cols, vals = [], [], [], []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            labels.append(_parse_label(toks[0], path, lineno))
            r = len(labels) - 1
            last = 0
            for tok in toks[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise LibsvmParseError(path, lineno, f"expected idx:val, got {tok!r}")
                try:
                    j = int(key)
                    v = float(val)
                except ValueError:
                    raise LibsvmParseError(path, lineno, f"bad pair {tok!r}") from None
                if j < 1:
                    raise LibsvmParseError(path, lineno, f"feature index {j} is not 1-based")
                if j <= last:
                    raise LibsvmParseError(path, lineno, "feature indices must increase")
                last = j
                rows.append(r)
                cols.append(j - 1)
                vals.append(v)
    if not labels:
        raise ValueError(f"{path}: no samples found")
    d = max(cols) + 1 if cols else 0
    if n_features is not None:
        if n_features < d:
            raise ValueError(f"{path}: file uses {d} features, more than n_features={n_features}")
        d = n_features
    X = sparse.csr_matrix((vals, (rows, cols)), shape=(len(labels), max(d, 1)))
    y = np.asarray(labels)
    if task is None:
        task = "binary" if np.all(np.isin(y, (-1.0, 0.0, 1.0))) else "multiclass"
    if task == "binary":
        y = np.where(y > 0, 1.0, -1.0)
        return SampleSet(X, y, "binary")
    if not np.all(y == np.round(y)) or y.min() < 1:
        raise ValueError(f"{path}: multiclass labels must be positive integers")
    return SampleSet(X, y.astype(int), "multiclass", int(y.max()))


def _fmt(v):
    return f"{v:.17g}"


def write_libsvm(samples, path):
    """Write ``samples`` so that :func:`parse_libsvm` reads back the same values."""
    X = sparse.csr_matrix(samples.features)
    X.sort_indices()
    path = Path(path)
    with path.open("w") as fh:
        for i in range(X.shape[0]):
            lab = samples.labels[i]
            lab = f"{int(lab):+d}" if samples.task == "binary" else str(int(lab))
            start, end = X.indptr[i], X.indptr[i + 1]
            pairs = " ".join(
                f"{j + 1}:{_fmt(v)}" for j, v in zip(X.indices[start:end], X.data[start:end])
            )
            fh.write(f"{lab} {pairs}".rstrip() + "\n")


def chain_features(n, d, rng, window=3):
    """Moving-sum features ``a_j = u_j + ... + u_{j+window-1}``.

    With ``window=3`` neighbours have correlation 2/3, distance-two pairs 1/3
    and farther pairs 0, so a 0.5 threshold recovers the path graph.
    """
    u = rng.standard_normal((n, d + window - 1))
    return np.stack([u[:, j : j + window].sum(axis=1) for j in range(d)], axis=1)


def _unit_rows(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return X / norms


def synthetic_binary(n, d, seed=0, density=0.3, noise=0.1, chain=True):
    """Binary data with labels ``sign(a^T x_true + noise)``.

    ``x_true`` is a sparse Gaussian vector.  Rows are scaled to unit norm so
    the sigmoid loss has smoothness bound 0.1.
    """
    rng = np.random.default_rng(seed)
    X = chain_features(n, d, rng) if chain else rng.standard_normal((n, d))
    X = _unit_rows(X)
    x_true = rng.standard_normal(d) * (rng.random(d) < density)
    if not np.any(x_true):
        x_true[rng.integers(d)] = 1.0
    score = X @ x_true + noise * rng.standard_normal(n)
    y = np.where(score >= 0, 1.0, -1.0)
    return SampleSet(X, y, "binary")


def synthetic_multiclass(n, d, n_classes=3, seed=0, rank=1, density=0.2, scale=3.0):
    """Labels drawn from the softmax of a planted low-rank plus sparse weight matrix."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    low = rng.standard_normal((n_classes, rank)) @ rng.standard_normal((rank, d))
    sp = rng.standard_normal((n_classes, d)) * (rng.random((n_classes, d)) < density)
    W = scale * (low / np.linalg.norm(low) + sp / max(np.linalg.norm(sp), 1e-12))
    X = _unit_rows(rng.standard_normal((n, d)))
    s = X @ W.T
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    cum = p.cumsum(axis=1)
    draws = rng.random((n, 1))
    y = np.minimum((draws > cum).sum(axis=1), n_classes - 1) + 1
    return SampleSet(X, y, "multiclass", n_classes)
