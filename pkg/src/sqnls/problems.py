"""Stochastic oracles and LIBSVM data ingestion.

An oracle turns an auxiliary variable ``u`` (a minibatch index set or a noise
seed) into a noisy cost/gradient pair. ``evaluate(x, u)`` is a pure function
of its arguments, so two points evaluated under the same ``u`` share their
randomness.
"""

import bz2
import gzip
import lzma
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import BatchTooLarge, DimensionMismatch, NonMonotoneIndices, ParseError

__all__ = [
    "NoisyEval",
    "StochasticOracle",
    "SparseDataset",
    "load_libsvm",
    "write_libsvm",
    "make_classification",
    "make_batch_sampler",
    "LogisticOracle",
    "logistic_oracle",
    "RosenbrockOracle",
    "rosenbrock_oracle",
    "rosenbrock",
]


@dataclass
class NoisyEval:
    f: float
    g: Optional[np.ndarray]
    u: object = None
    per_sample_f: Optional[np.ndarray] = field(default=None, repr=False)


class StochasticOracle:
    """Interface consumed by the optimizers.

    Subclasses set ``dim`` and implement ``sample_u``, ``evaluate`` and
    ``full_cost`` (the noise-free objective used for reporting).
    """

    dim: int
    name = "oracle"

    def sample_u(self, rng):
        raise NotImplementedError

    def evaluate(self, x, u, grad=True) -> NoisyEval:
        raise NotImplementedError

    def full_cost(self, x):
        raise NotImplementedError

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"expected x of shape ({self.dim},), got {x.shape}")
        return x


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class SparseDataset:
    """Binary classification data; labels are -1/+1, features CSR (n x d)."""

    labels: np.ndarray
    features: sp.csr_matrix

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def _open_text(path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".gz":
        return gzip.open(path, "rt")
    if suffix == ".bz2":
        return bz2.open(path, "rt")
    if suffix in (".xz", ".lzma"):
        return lzma.open(path, "rt")
    return open(path, "r")


def _parse_label(token, lineno):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"bad label {token!r}", lineno) from None
    if not np.isfinite(value):
        raise ParseError(f"bad label {token!r}", lineno)
    return value


def _binary_labels(raw):
    # -1/+1 and 0/1 are the common encodings; covtype uses 1/2.
    values = np.unique(raw)
    if len(values) > 2:
        raise ParseError(f"expected binary labels, found {len(values)} distinct values")
    if set(values) <= {-1.0, 1.0}:
        return raw
    if len(values) == 1:
        return np.where(raw > 0, 1.0, -1.0)
    return np.where(raw == values[1], 1.0, -1.0)


def load_libsvm(path, n_features=None):
    """Parse a LIBSVM/svmlight text file into a :class:`SparseDataset`.

    Lines look like ``<label> <idx>:<val> ...`` with 1-based, strictly
    increasing indices. Blank lines and ``#`` comments are skipped; labels
    are normalised to -1/+1, with any other two-valued encoding (0/1, 1/2)
    mapping the smaller value to -1. ``.gz``, ``.bz2`` and ``.xz`` files are
    decompressed on the fly.
    """
    labels = []
    indptr = [0]
    indices = []
    data = []
    max_index = 0
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            labels.append(_parse_label(tokens[0], lineno))
            prev = 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(f"malformed feature token {tok!r}", lineno)
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"malformed feature token {tok!r}", lineno) from None
                if idx < 1:
                    raise ParseError(f"feature index {idx} is not 1-based", lineno)
                if idx <= prev:
                    raise NonMonotoneIndices(f"index {idx} follows {prev}", lineno)
                if not np.isfinite(val):
                    raise ParseError(f"non-finite value {val_s!r}", lineno)
                prev = idx
                indices.append(idx - 1)
                data.append(val)
            max_index = max(max_index, prev)
            indptr.append(len(indices))

    d = max_index if n_features is None else int(n_features)
    if d < max_index:
        raise ParseError(f"n_features={d} is smaller than max index {max_index}")
    X = sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(labels), d),
    )
    return SparseDataset(_binary_labels(np.asarray(labels, dtype=float)), X)


def write_libsvm(dataset, path):
    X = dataset.features.tocsr()
    with open(path, "w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            label = "+1" if dataset.labels[i] > 0 else "-1"
            fh.write(f"{label} {feats}\n".rstrip() + "\n")


def make_classification(n, dim, margin=0.1, flip=0.05, seed=0):
    """Synthetic linearly separable data with a margin, then label noise.

    Features are standard normal rows scaled to unit norm; any row closer
    than ``margin`` to the separating hyperplane is pushed out to the
    margin. A fraction ``flip`` of labels is then inverted.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    w /= np.linalg.norm(w)
    A = rng.standard_normal((n, dim))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    proj = A @ w
    sign = np.where(proj >= 0, 1.0, -1.0)
    short = np.abs(proj) < margin
    A[short] += ((margin - np.abs(proj[short])) * sign[short])[:, None] * w
    labels = sign.copy()
    flipped = rng.random(n) < flip
    labels[flipped] *= -1
    return SparseDataset(labels, sp.csr_matrix(A))


def make_batch_sampler(n, b):
    """Sampler of ``b`` distinct row indices out of ``range(n)``."""
    if b > n:
        raise BatchTooLarge(f"batch size {b} exceeds dataset size {n}")
    if b < 1:
        raise ValueError("batch size must be positive")

    def sample(rng):
        return rng.choice(n, size=b, replace=False)

    return sample


# --------------------------------------------------------------------------
# logistic regression


def _logistic_loss(z):
    # log(1 + exp(-z)) without overflow
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(0.0, -z)


class LogisticOracle(StochasticOracle):
    """Subsampled L2-regularised logistic loss.

    ``f(x, u) = mean_{i in u} log(1 + exp(-y_i a_i.x)) + l2/2 ||x||^2``.
    """

    name = "logistic"

    def __init__(self, data, l2_weight=None, batch_size=1):
        self.data = data
        self.dim = data.dim
        self.n = data.n
        self.l2_weight = 1.0 / self.n if l2_weight is None else float(l2_weight)
        self.batch_size = int(batch_size)
        self._sampler = make_batch_sampler(self.n, self.batch_size)
        X = data.features.tocsr()
        density = X.nnz / max(1, X.shape[0] * X.shape[1])
        # dense rows are much faster to gather when the data is not sparse
        self._X = X.toarray() if density > 0.25 and X.shape[0] * X.shape[1] <= 5e7 else X
        self._y = np.asarray(data.labels, dtype=float)

    def sample_u(self, rng):
        return self._sampler(rng)

    def _rows(self, idx):
        if idx is None:
            return self._X, self._y
        return self._X[idx], self._y[idx]

    def _evaluate_rows(self, x, idx, grad):
        A, y = self._rows(idx)
        z = y * (A @ x)
        reg = 0.5 * self.l2_weight * (x @ x)
        per_sample = _logistic_loss(z) + reg
        f = float(per_sample.mean())
        g = None
        if grad:
            coef = -y * expit(-z) / len(y)
            g = np.asarray(A.T @ coef).ravel() + self.l2_weight * x
        return f, g, per_sample

    def evaluate(self, x, u, grad=True):
        x = self._check_x(x)
        f, g, per_sample = self._evaluate_rows(x, np.asarray(u), grad)
        return NoisyEval(f, g, u, per_sample)

    def full_cost(self, x):
        return self._evaluate_rows(self._check_x(x), None, False)[0]

    def full_gradient(self, x):
        return self._evaluate_rows(self._check_x(x), None, True)[1]


def logistic_oracle(data, l2_weight=None, b=1):
    return LogisticOracle(data, l2_weight=l2_weight, batch_size=b)


# --------------------------------------------------------------------------
# Rosenbrock


def rosenbrock(x):
    """Noise-free banana function and its gradient."""
    x1, x2 = x
    f = (1.0 - x1) ** 2 + 100.0 * (x2 - x1 * x1) ** 2
    g = np.array([-2.0 * (1.0 - x1) - 400.0 * x1 * (x2 - x1 * x1), 200.0 * (x2 - x1 * x1)])
    return f, g


class RosenbrockOracle(StochasticOracle):
    """Two-dimensional Rosenbrock function with additive Gaussian noise.

    ``u`` is an integer seed; the cost noise and the two gradient noise
    components are drawn from a generator seeded with it.
    """

    name = "rosenbrock"
    dim = 2

    def __init__(self, noise_std=0.1):
        if noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        self.noise_std = float(noise_std)

    def sample_u(self, rng):
        return int(rng.integers(0, 2**63 - 1))

    def evaluate(self, x, u, grad=True):
        x = self._check_x(x)
        f, g = rosenbrock(x)
        if self.noise_std > 0:
            noise = np.random.default_rng(u).standard_normal(3) * self.noise_std
            f = f + noise[0]
            g = g + noise[1:]
        return NoisyEval(float(f), g if grad else None, u)

    def full_cost(self, x):
        return float(rosenbrock(self._check_x(x))[0])


def rosenbrock_oracle(noise_std=0.1):
    return RosenbrockOracle(noise_std)
