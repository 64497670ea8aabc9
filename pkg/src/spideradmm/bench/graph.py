"""Feature graphs for the fused-lasso problem."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import sparse

from ..linalg import SparseOperator

__all__ = [
    "feature_correlation",
    "correlation_edges",
    "edge_matrix",
    "build_fusion_graph",
    "read_edge_list",
    "write_edge_list",
]


def feature_correlation(samples):
    """Pearson correlation of feature columns; zero-variance columns get 0."""
    X = samples.dense()
    Xc = X - X.mean(axis=0)
    std = np.sqrt((Xc * Xc).sum(axis=0))
    ok = std > 0
    safe = np.where(ok, std, 1.0)
    C = (Xc.T @ Xc) / np.outer(safe, safe)
    C[~ok, :] = 0.0
    C[:, ~ok] = 0.0
    return C


def correlation_edges(samples, threshold=0.5):
    """Sorted pairs ``(i, j)``, ``i < j``, with ``|corr| > threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    C = feature_correlation(samples)
    i, j = np.nonzero(np.triu(np.abs(C) > threshold, k=1))
    return sorted(zip(i.tolist(), j.tolist()))


def edge_matrix(edges, d):
    """One row ``e_i - e_j`` per edge, deduplicated and sorted by ``(i, j)``."""
    pairs = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < d and 0 <= j < d):
            raise ValueError(f"edge ({i}, {j}) out of range for {d} features")
        if i == j:
            raise ValueError(f"self-loop on feature {i}")
        pairs.add((min(i, j), max(i, j)))
    pairs = sorted(pairs)
    k = len(pairs)
    rows = np.repeat(np.arange(k), 2)
    cols = np.array([c for p in pairs for c in p], dtype=int)
    vals = np.tile([1.0, -1.0], k)
    E = sparse.csr_matrix((vals, (rows, cols)), shape=(k, d))
    op = SparseOperator(E)
    op.edges = pairs
    return op


def build_fusion_graph(samples, threshold=0.5):
    """Edge-difference operator from absolute-correlation thresholding."""
    return edge_matrix(correlation_edges(samples, threshold), samples.d)


def read_edge_list(path):
    """0-based ``i j`` pairs, one per line; ``#`` starts a comment."""
    edges = []
    with Path(path).open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two indices")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer index") from None
    return edges


def write_edge_list(edges, path):
    with Path(path).open("w") as fh:
        for i, j in edges:
            fh.write(f"{i} {j}\n")
