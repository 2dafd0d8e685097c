"""Strictly convex smooth losses over flattened coefficient matrices.

Coefficients for a model with ``d`` features and ``K`` responses/classes
are a ``d x K`` matrix flattened row-major (feature-major, response-minor):
``beta[j * K + k]`` is the weight of feature ``j`` for output ``k``. Block
partitions over the matrix are defined in this layout.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .groups import GroupPartition, group_norms

DEFAULT_RIDGE = 1e-3


class ConvexObjective:
    """Base class: subclasses set ``n``, ``partition``, ``ridge`` and
    implement :meth:`value_and_grad`."""

    n: int
    partition: GroupPartition
    ridge: float = 0.0

    def value_and_grad(self, beta) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def value(self, beta) -> float:
        return self.value_and_grad(beta)[0]

    def gradient(self, beta) -> np.ndarray:
        return self.value_and_grad(beta)[1]

    def is_strictly_convex(self) -> bool:
        return self.ridge > 0

    def _check(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n,):
            raise ValueError(f"coefficient vector of shape {beta.shape}, expected ({self.n},)")
        return beta


def _default_partition(n, partition):
    if partition is None:
        return GroupPartition.contiguous([1] * n)
    if partition.n != n:
        raise ValueError(f"partition covers {partition.n} coordinates, objective has {n}")
    return partition


class LeastSquaresObjective(ConvexObjective):
    """``0.5 * ||X B - Y||_F^2 + 0.5 * ridge * ||beta||^2``."""

    def __init__(self, X, Y, partition: GroupPartition | None = None, ridge: float = DEFAULT_RIDGE):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.shape[0] != X.shape[0]:
            raise ValueError(f"X {X.shape} and Y {Y.shape} disagree on sample count")
        if ridge < 0:
            raise ValueError("ridge must be nonnegative")
        self.X, self.Y, self.ridge = X, Y, float(ridge)
        self.d, self.K = X.shape[1], Y.shape[1]
        self.n = self.d * self.K
        self.partition = _default_partition(self.n, partition)

    def value_and_grad(self, beta):
        beta = self._check(beta)
        B = beta.reshape(self.d, self.K)
        R = self.X @ B - self.Y
        val = 0.5 * np.sum(R * R) + 0.5 * self.ridge * beta @ beta
        grad = (self.X.T @ R).ravel() + self.ridge * beta
        return float(val), grad

    def hessian(self) -> np.ndarray:
        G = self.X.T @ self.X
        return np.kron(G, np.eye(self.K)) + self.ridge * np.eye(self.n)

    def is_strictly_convex(self):
        return self.ridge > 0 or np.linalg.matrix_rank(self.X) == self.d


class MultinomialLogisticObjective(ConvexObjective):
    """Mean softmax cross-entropy plus ``0.5 * ridge * ||beta||^2``.

    No intercept; append a constant column to ``X`` if one is needed.
    """

    def __init__(self, X, labels, n_classes: int | None = None,
                 partition: GroupPartition | None = None, ridge: float = DEFAULT_RIDGE):
        X = np.asarray(X, dtype=float)
        labels = np.asarray(labels).astype(int)
        if labels.shape != (X.shape[0],):
            raise ValueError("one label per sample required")
        K = int(labels.max()) + 1 if n_classes is None else int(n_classes)
        if labels.min() < 0 or labels.max() >= K:
            raise ValueError(f"labels must lie in [0, {K})")
        if ridge < 0:
            raise ValueError("ridge must be nonnegative")
        self.X, self.labels, self.ridge = X, labels, float(ridge)
        self.m, self.d = X.shape
        self.K = K
        self.n = self.d * K
        self.onehot = np.eye(K)[labels]
        self.partition = _default_partition(self.n, partition)

    def value_and_grad(self, beta):
        beta = self._check(beta)
        Z = self.X @ beta.reshape(self.d, self.K)
        logp = log_softmax(Z, axis=1)
        val = -np.mean(logp[np.arange(self.m), self.labels]) + 0.5 * self.ridge * beta @ beta
        P = np.exp(logp)
        grad = (self.X.T @ (P - self.onehot)).ravel() / self.m + self.ridge * beta
        return float(val), grad

    def predict_proba(self, beta, X=None):
        X = self.X if X is None else X
        return softmax(X @ np.asarray(beta).reshape(self.d, self.K), axis=1)


class QuadraticObjective(ConvexObjective):
    """``0.5 * beta' H beta - c' beta`` for a symmetric positive (semi)definite H."""

    def __init__(self, H, c=None, partition: GroupPartition | None = None):
        H = np.asarray(H, dtype=float)
        self.H = 0.5 * (H + H.T)
        self.n = H.shape[0]
        self.c = np.zeros(self.n) if c is None else np.asarray(c, dtype=float)
        self.partition = _default_partition(self.n, partition)
        self.ridge = 0.0

    def value_and_grad(self, beta):
        beta = self._check(beta)
        Hb = self.H @ beta
        return float(0.5 * beta @ Hb - self.c @ beta), Hb - self.c

    def is_strictly_convex(self):
        return bool(np.linalg.eigvalsh(self.H)[0] > 0)


class Restricted:
    """An objective seen as a function of the coordinates ``coords`` only,
    with every other coordinate held at zero."""

    def __init__(self, obj: ConvexObjective, coords):
        self.obj = obj
        self.coords = np.asarray(coords, dtype=np.intp)

    def embed(self, x) -> np.ndarray:
        full = np.zeros(self.obj.n)
        full[self.coords] = x
        return full

    def value_and_grad(self, x):
        f, g = self.obj.value_and_grad(self.embed(x))
        return f, g[self.coords]


def tau_threshold(obj: ConvexObjective) -> tuple[float, int]:
    """Largest group norm of the gradient at zero, and its group (lowest on ties)."""
    norms = group_norms(obj.partition, obj.gradient(np.zeros(obj.n)))
    i = int(np.argmax(norms))
    return float(norms[i]), i


def load_csv(path: str | Path, label_column: str):
    """Read a dense numeric CSV with a header row.

    Returns ``(X, y, feature_names)`` where ``y`` is the named column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if label_column not in header:
        raise ValueError(f"label column {label_column!r} not in header {header}")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    j = header.index(label_column)
    X = np.delete(data, j, axis=1)
    names = [h for h in header if h != label_column]
    return X, data[:, j], names
