"""Smooth finite-sum losses, streams of samples, and curvature bounds.

All losses average per-sample terms over an index array ``idx`` (``None``
means every sample).  Indices may repeat; a repeated index is counted as many
times as it appears, which is what with-replacement minibatches need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import expit, logsumexp

__all__ = [
    "SampleSet",
    "SmoothLoss",
    "SigmoidLoss",
    "MultitaskLoss",
    "QuadraticLoss",
    "SampleStream",
    "ResampleStream",
    "GaussianQuadraticStream",
    "SIGMOID_CURVATURE_BOUND",
]

# sup_t |d^2/dt^2 1/(1+e^t)| = 1/(6*sqrt(3)) ~ 0.0962, rounded up
SIGMOID_CURVATURE_BOUND = 0.1


@dataclass
class SampleSet:
    """Feature rows ``a_i`` (dense or CSR) with labels ``b_i``.

    ``task`` is ``"binary"`` (labels in {-1, +1}), ``"multiclass"`` (labels in
    1..n_classes) or ``"none"`` (labels unused, e.g. quadratic centers).
    """

    features: object
    labels: np.ndarray
    task: str = "binary"
    n_classes: int = 2

    def __post_init__(self):
        if sparse.issparse(self.features):
            self.features = sparse.csr_matrix(self.features, dtype=float)
        else:
            self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels)
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("a sample set needs at least one sample")
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {self.labels.shape}")
        if self.task == "binary":
            if not np.all(np.isin(self.labels, (-1, 1))):
                raise ValueError("binary labels must be -1 or +1")
            self.labels = self.labels.astype(float)
        elif self.task == "multiclass":
            lab = self.labels
            if not np.all(np.equal(np.mod(lab, 1), 0)) or lab.min() < 1:
                raise ValueError("multiclass labels must be integers in 1..n_classes")
            self.labels = lab.astype(int)
            self.n_classes = max(int(self.n_classes), int(self.labels.max()))
        elif self.task != "none":
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def rows(self, idx):
        return self.features if idx is None else self.features[idx]

    def row_norms_sq(self):
        f = self.features
        if sparse.issparse(f):
            return np.asarray(f.multiply(f).sum(axis=1)).ravel()
        return np.einsum("ij,ij->i", f, f)

    def dense(self):
        f = self.features
        return f.toarray() if sparse.issparse(f) else f

    def subset(self, idx):
        return SampleSet(self.rows(idx), self.labels[idx], self.task, self.n_classes)


def _check_idx(idx):
    if idx is not None and len(idx) == 0:
        raise ValueError("index set must not be empty")
    return idx


class SmoothLoss:
    """Finite-sum loss ``f(x) = (1/n) sum_i f_i(x)``.

    Subclasses implement ``_values`` and ``_grads`` which work on an explicit
    batch (``SampleSet``), so the same math serves finite sums and streams.
    """

    def __init__(self, samples, dim):
        self.samples = samples
        self.d = int(dim)
        self.lipschitz_override = None

    @property
    def n(self):
        return self.samples.n

    # batch primitives -------------------------------------------------
    def _values(self, x, batch):
        raise NotImplementedError

    def _grads(self, x, batch):
        """Per-sample gradients, shape ``(batch.n, d)``."""
        raise NotImplementedError

    def _mean_grad(self, x, batch):
        return self._grads(x, batch).mean(axis=0)

    def _bound(self):
        raise NotImplementedError

    # public API -------------------------------------------------------
    def _batch(self, idx):
        if idx is None:
            return self.samples
        return self.samples.subset(np.asarray(idx))

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected a parameter vector of length {self.d}, got {x.shape}")
        return x

    def value(self, x, idx=None):
        x = self._check_x(x)
        return float(np.mean(self._values(x, self._batch(_check_idx(idx)))))

    def grad(self, x, idx=None):
        x = self._check_x(x)
        return self._mean_grad(x, self._batch(_check_idx(idx)))

    def full_grad(self, x):
        return self.grad(x, None)

    def minibatch_grad(self, x, idx):
        return self.grad(x, idx)

    def per_sample_grads(self, x, idx=None):
        x = self._check_x(x)
        return self._grads(x, self._batch(_check_idx(idx)))

    def batch_grad(self, x, batch):
        """Mean gradient over an explicit batch (used with streams)."""
        return self._mean_grad(self._check_x(x), batch)

    def batch_grads(self, x, batch):
        return self._grads(self._check_x(x), batch)

    def lipschitz(self):
        """Upper estimate of the per-sample smoothness constant."""
        if self.lipschitz_override is not None:
            return float(self.lipschitz_override)
        return self._bound()


class SigmoidLoss(SmoothLoss):
    """Nonconvex sigmoid loss ``f_i(x) = 1 / (1 + exp(b_i a_i^T x))``."""

    def __init__(self, samples):
        if samples.task != "binary":
            raise ValueError("sigmoid loss needs binary labels")
        super().__init__(samples, samples.d)

    def _margins(self, x, batch):
        return batch.labels * (batch.features @ x)

    def _values(self, x, batch):
        return expit(-self._margins(x, batch))

    def _coef(self, x, batch):
        t = self._margins(x, batch)
        # d/dt expit(-t) = -expit(t) * expit(-t); stable for large |t|
        return -batch.labels * expit(t) * expit(-t)

    def _grads(self, x, batch):
        c = self._coef(x, batch)
        f = batch.features
        if sparse.issparse(f):
            return f.multiply(c[:, None]).toarray()
        return c[:, None] * f

    def _mean_grad(self, x, batch):
        c = self._coef(x, batch)
        return np.asarray(batch.features.T @ c).ravel() / batch.n

    def _bound(self):
        return SIGMOID_CURVATURE_BOUND * float(self.samples.row_norms_sq().max())


def log_sum_penalty_correction(x, alpha, beta):
    """``beta*log(1+|x|/alpha) - (beta/alpha)*|x|``, elementwise; C^1 at 0."""
    a = np.abs(x)
    return beta * np.log1p(a / alpha) - (beta / alpha) * a


def log_sum_penalty_correction_grad(x, alpha, beta):
    a = np.abs(x)
    return np.sign(x) * beta * (1.0 / (alpha + a) - 1.0 / alpha)


class MultitaskLoss(SmoothLoss):
    """Multinomial logistic loss plus the smooth part of a log-sum penalty.

    The parameter is a row-major flattened ``(n_classes, d)`` weight matrix.
    Each per-sample term carries the full penalty correction
    ``lam1 * sum(kappa(|X_ij|) - kappa0 |X_ij|)``, so averages keep it once.
    """

    def __init__(self, samples, lam1=0.0, alpha_ls=1.0, beta_ls=1.0):
        if samples.task != "multiclass":
            raise ValueError("multitask loss needs class labels in 1..c")
        if lam1 < 0 or alpha_ls <= 0 or beta_ls <= 0:
            raise ValueError("need lam1 >= 0, alpha_ls > 0, beta_ls > 0")
        self.n_classes = samples.n_classes
        self.n_features = samples.d
        super().__init__(samples, self.n_classes * samples.d)
        self.lam1 = float(lam1)
        self.alpha_ls = float(alpha_ls)
        self.beta_ls = float(beta_ls)

    @property
    def kappa0(self):
        return self.beta_ls / self.alpha_ls

    def _scores(self, x, batch):
        w = x.reshape(self.n_classes, self.n_features)
        return np.asarray(batch.features @ w.T)

    def _correction(self, x):
        if self.lam1 == 0.0:
            return 0.0
        return self.lam1 * float(
            np.sum(log_sum_penalty_correction(x, self.alpha_ls, self.beta_ls))
        )

    def _correction_grad(self, x):
        if self.lam1 == 0.0:
            return np.zeros_like(x)
        return self.lam1 * log_sum_penalty_correction_grad(x, self.alpha_ls, self.beta_ls)

    def _values(self, x, batch):
        s = self._scores(x, batch)
        picked = s[np.arange(batch.n), batch.labels - 1]
        return logsumexp(s, axis=1) - picked + self._correction(x)

    def _residuals(self, x, batch):
        s = self._scores(x, batch)
        p = np.exp(s - logsumexp(s, axis=1, keepdims=True))
        p[np.arange(batch.n), batch.labels - 1] -= 1.0
        return p

    def _grads(self, x, batch):
        p = self._residuals(x, batch)
        feats = batch.dense()
        g = (p[:, :, None] * feats[:, None, :]).reshape(batch.n, -1)
        return g + self._correction_grad(x)

    def _mean_grad(self, x, batch):
        p = self._residuals(x, batch)
        g = np.asarray(p.T @ batch.features).reshape(-1) / batch.n
        return g + self._correction_grad(x)

    def _bound(self):
        base = 0.5 * float(self.samples.row_norms_sq().max())
        return base + self.lam1 * self.beta_ls / self.alpha_ls**2


class QuadraticLoss(SmoothLoss):
    """``f_i(x) = 0.5 * ||x - c_i||^2`` with centers stored as feature rows."""

    def __init__(self, centers):
        if not isinstance(centers, SampleSet):
            c = np.atleast_2d(np.asarray(centers, dtype=float))
            centers = SampleSet(c, np.zeros(c.shape[0]), task="none")
        super().__init__(centers, centers.d)

    def _values(self, x, batch):
        diff = x[None, :] - batch.dense()
        return 0.5 * np.einsum("ij,ij->i", diff, diff)

    def _grads(self, x, batch):
        return x[None, :] - batch.dense()

    def minimizer(self):
        return self.samples.dense().mean(axis=0)

    def _bound(self):
        return 1.0


class SampleStream:
    """Source of i.i.d. samples for the online setting."""

    description = "stream"

    def draw(self, rng, size):
        raise NotImplementedError


class ResampleStream(SampleStream):
    """With-replacement resampling of a finite sample set."""

    description = "resample-finite-dataset"

    def __init__(self, samples):
        self.samples = samples

    def draw(self, rng, size):
        return self.samples.subset(rng.integers(self.samples.n, size))


class GaussianQuadraticStream(SampleStream):
    """Centers ``c ~ N(mean, sigma^2 I)`` for :class:`QuadraticLoss`.

    The population gradient is ``x - mean`` and the per-sample gradient
    covariance has trace ``d * sigma^2``.
    """

    description = "parametric-gaussian"

    def __init__(self, mean, sigma=1.0):
        self.mean = np.asarray(mean, dtype=float)
        self.sigma = float(sigma)

    def draw(self, rng, size):
        c = self.mean[None, :] + self.sigma * rng.normal((size, self.mean.size))
        return SampleSet(c, np.zeros(size), task="none")

    def population_grad(self, x):
        return np.asarray(x, dtype=float) - self.mean

    def grad_variance(self):
        return self.mean.size * self.sigma**2
