"""Differentiable objectives with hand-written gradients.

Every objective maps a flat float64 parameter vector to a mean loss over a
batch of example indices and the matching mean gradient. ``batch=None``
means the full bound dataset.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from fracfed.errors import NumericError, UsageError
from fracfed.numerics import RngStream
from fracfed.partition import Dataset


class GradResult(NamedTuple):
    loss: float
    grad: np.ndarray


def as_params(values, dim: Optional[int] = None) -> np.ndarray:
    """Validate and copy a parameter vector (finite float64, fixed length)."""
    theta = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and theta.size != dim:
        raise UsageError(f"parameter vector has dim {theta.size}, expected {dim}")
    bad = np.flatnonzero(~np.isfinite(theta))
    if bad.size:
        raise NumericError("non-finite parameter", coordinate=int(bad[0]))
    return theta


def top_eigenvalue(M: np.ndarray, tol: float = 1e-14, max_iter: int = 20000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    M = np.asarray(M, dtype=np.float64)
    v = np.random.Generator(np.random.Philox(key=0x5EED)).standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_lam = float(v @ w)
        v = w / norm
        if abs(new_lam - lam) <= tol * max(abs(new_lam), 1.0):
            return float(v @ M @ v)
        lam = new_lam
    return float(v @ M @ v)


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example cross-entropy and ``softmax - onehot``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    losses = logz - shifted[np.arange(y.size), y]
    probs = np.exp(shifted - logz[:, None])
    probs[np.arange(y.size), y] -= 1.0
    return losses, probs


class Objective:
    kind: str = ""
    dim: int

    def evaluate(self, theta, batch=None) -> GradResult:
        theta = as_params(theta, self.dim)
        idx = self._batch(batch)
        loss, grad = self._loss_grad(theta, idx)
        if not np.isfinite(loss):
            raise NumericError("non-finite loss", context={"kind": self.kind})
        bad = np.flatnonzero(~np.isfinite(grad))
        if bad.size:
            raise NumericError("non-finite gradient", coordinate=int(bad[0]), context={"kind": self.kind})
        return GradResult(float(loss), grad)

    def smoothness(self) -> Optional[float]:
        return None

    def init_params(self, stream: Optional[RngStream] = None) -> np.ndarray:
        return np.zeros(self.dim)

    def _batch(self, batch):
        return None if batch is None else _check_batch(batch, None)

    def _loss_grad(self, theta, idx):
        raise NotImplementedError


def _check_batch(batch, n):
    idx = np.asarray(batch, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise UsageError("empty batch")
    if n is not None and (idx.min() < 0 or idx.max() >= n):
        raise UsageError(f"batch indices out of range [0, {n})")
    return idx


class Quadratic(Objective):
    """``f(theta) = 0.5 * theta^T A theta``; the batch argument is ignored."""

    kind = "quadratic"

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T):
            raise UsageError("quadratic needs a symmetric square matrix")
        if np.linalg.eigvalsh(A).min() < -1e-12:
            raise UsageError("quadratic matrix must be positive semidefinite (loss bounded below)")
        self.A = A
        self.dim = A.shape[0]

    @classmethod
    def diagonal(cls, diag) -> "Quadratic":
        return cls(np.diag(np.asarray(diag, dtype=np.float64)))

    def _batch(self, batch):
        if batch is not None:
            _check_batch(batch, None)
        return None

    def _loss_grad(self, theta, idx):
        g = self.A @ theta
        return 0.5 * float(theta @ g), g

    def smoothness(self):
        return top_eigenvalue(self.A)


class _DataObjective(Objective):
    def __init__(self, features, targets):
        self.X = np.asarray(features, dtype=np.float64)
        self.y = np.asarray(targets)
        self.n = self.X.shape[0]

    def _batch(self, batch):
        if batch is None:
            return None
        return _check_batch(batch, self.n)

    def _rows(self, idx):
        if idx is None:
            return self.X, self.y
        return self.X[idx], self.y[idx]


class LinReg(_DataObjective):
    """Least squares, per-example loss ``0.5 * (x.theta - y)^2``."""

    kind = "linreg"

    def __init__(self, features, targets):
        super().__init__(features, np.asarray(targets, dtype=np.float64))
        self.dim = self.X.shape[1]

    def _loss_grad(self, theta, idx):
        X, y = self._rows(idx)
        r = X @ theta - y
        return 0.5 * float(r @ r) / r.size, X.T @ r / r.size

    def smoothness(self):
        return top_eigenvalue(self.X.T @ self.X) / self.n


class _Classifier(_DataObjective):
    num_classes: int

    def __init__(self, data: Dataset):
        super().__init__(data.features, data.labels)
        self.num_classes = data.num_classes
        self.p = self.X.shape[1]

    def logits(self, theta, X):
        raise NotImplementedError

    def predict(self, theta, X) -> np.ndarray:
        return np.argmax(self.logits(as_params(theta, self.dim), np.asarray(X, dtype=np.float64)), axis=1)

    def accuracy(self, theta, data: Dataset) -> float:
        return float(np.mean(self.predict(theta, data.features) == data.labels))


class LogReg(_Classifier):
    """Multinomial logistic regression; params are ``W`` (K x p, row-major) then ``b`` (K)."""

    kind = "logreg"

    def __init__(self, data: Dataset):
        super().__init__(data)
        self.dim = self.num_classes * (self.p + 1)

    def _unpack(self, theta):
        K, p = self.num_classes, self.p
        return theta[: K * p].reshape(K, p), theta[K * p:]

    def logits(self, theta, X):
        W, b = self._unpack(theta)
        return X @ W.T + b

    def _loss_grad(self, theta, idx):
        X, y = self._rows(idx)
        losses, delta = _softmax_xent(self.logits(theta, X), y)
        m = y.size
        gW = delta.T @ X / m
        gb = delta.sum(axis=0) / m
        return float(losses.mean()), np.concatenate([gW.ravel(), gb])

    def smoothness(self):
        # Softmax Hessian block diag(p) - pp^T has spectral norm <= 1/2.
        Xb = np.hstack([self.X, np.ones((self.n, 1))])
        return top_eigenvalue(Xb.T @ Xb) / (2.0 * self.n)


class MLP(_Classifier):
    """One tanh hidden layer and a softmax head.

    Parameter layout: ``W1`` (h x p), ``b1`` (h), ``W2`` (K x h), ``b2`` (K).
    """

    kind = "mlp"

    def __init__(self, data: Dataset, width: int = 16):
        super().__init__(data)
        if not 1 <= width <= 64:
            raise UsageError(f"mlp width must lie in [1, 64], got {width}")
        self.width = width
        h, p, K = width, self.p, self.num_classes
        self._shapes = [(h, p), (h,), (K, h), (K,)]
        self.dim = h * p + h + K * h + K

    def _unpack(self, theta):
        out, off = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            out.append(theta[off:off + size].reshape(shape))
            off += size
        return out

    def init_params(self, stream: Optional[RngStream] = None) -> np.ndarray:
        if stream is None:
            raise UsageError("mlp initialization needs an RNG stream")
        rng = stream.generator()
        parts = []
        for shape, fan_in in zip(self._shapes, (self.p, self.p, self.width, self.width)):
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=shape).ravel())
        return np.concatenate(parts)

    def logits(self, theta, X):
        W1, b1, W2, b2 = self._unpack(theta)
        return np.tanh(X @ W1.T + b1) @ W2.T + b2

    def _loss_grad(self, theta, idx):
        X, y = self._rows(idx)
        W1, b1, W2, b2 = self._unpack(theta)
        a = np.tanh(X @ W1.T + b1)
        losses, delta = _softmax_xent(a @ W2.T + b2, y)
        m = y.size
        gW2 = delta.T @ a / m
        gb2 = delta.sum(axis=0) / m
        back = (delta @ W2) * (1.0 - a * a)
        gW1 = back.T @ X / m
        gb1 = back.sum(axis=0) / m
        return float(losses.mean()), np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def build_objective(kind: str, data: Optional[Dataset] = None, width: int = 16) -> Objective:
    if kind == "logreg":
        return LogReg(data)
    if kind == "mlp":
        return MLP(data, width)
    if kind == "linreg":
        return LinReg(data.features, data.labels.astype(np.float64))
    raise UsageError(f"unknown model kind {kind!r}; expected logreg, mlp or linreg")


def evaluate(obj: Objective, theta, batch=None) -> GradResult:
    return obj.evaluate(theta, batch)


def smoothness_constant(obj: Objective) -> Optional[float]:
    """Global gradient-Lipschitz constant, or ``None`` when no analytic bound exists (mlp)."""
    return obj.smoothness()


def grad_check(obj: Objective, theta, batch=None, h: float = 1e-5) -> float:
    """Max over coordinates of ``|g_fd - g| / (|g| + 1e-12)`` with central differences."""
    if not 1e-8 <= h <= 1e-3:
        raise UsageError(f"h must lie in [1e-8, 1e-3], got {h}")
    theta = as_params(theta, obj.dim)
    g = obj.evaluate(theta, batch).grad
    worst = 0.0
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        fd = (obj.evaluate(up, batch).loss - obj.evaluate(down, batch).loss) / (2.0 * h)
        worst = max(worst, abs(fd - g[i]) / (abs(g[i]) + 1e-12))
    return worst
