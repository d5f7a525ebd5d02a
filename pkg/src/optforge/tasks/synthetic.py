"""Desk-scale synthetic tasks with closed-form gradients."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit, log_expit

from ..screen import ACCURACY, LOSS
from .base import MNISTNET_LR_GRID, Task


class QuadraticTask(Task):
    """L(theta) = 1/2 theta'A theta - b'theta + xi'theta with xi ~ N(0, noise^2 I) per step."""

    name = "quadratic"
    metric_kind = LOSS

    def __init__(self, A, b, noise=0.0, theta0=None, proxy_steps=50, full_steps=200, lr_grid=MNISTNET_LR_GRID):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dim = len(self.b)
        if self.A.shape != (self.dim, self.dim):
            raise ValueError("A must be square and match b")
        self.noise = float(noise)
        self.theta0 = None if theta0 is None else np.asarray(theta0, dtype=float)
        self.proxy_steps = proxy_steps
        self.full_steps = full_steps
        self.lr_grid = tuple(lr_grid)

    def init_params(self, seed):
        if self.theta0 is not None:
            return self.theta0.copy()
        return np.random.default_rng(seed).standard_normal(self.dim)

    def batch_stream(self, seed):
        rng = np.random.default_rng(seed)
        if self.noise == 0:
            return itertools.repeat(None)
        return (self.noise * rng.standard_normal(self.dim) for _ in itertools.count())

    def loss(self, params, batch):
        with np.errstate(all="ignore"):
            value = 0.5 * params @ self.A @ params - self.b @ params
            if batch is not None:
                value += batch @ params
        return float(value)

    def gradient(self, params, batch):
        with np.errstate(all="ignore"):
            grad = self.A @ params - self.b
            if batch is not None:
                grad = grad + batch
        return grad

    @property
    def optimum(self):
        return np.linalg.solve(self.A, self.b)

    @property
    def minimum_loss(self):
        return float(-0.5 * self.b @ self.optimum)

    def describe(self):
        return {"name": self.name, "dim": self.dim, "noise": self.noise}


def quadratic_task(dim=20, condition_number=100.0, noise=0.0, seed=0, max_eigenvalue=10.0, **kwargs) -> QuadraticTask:
    """Random SPD quadratic with eigenvalues log-spaced in [max_eigenvalue / condition_number, max_eigenvalue].

    With the default top eigenvalue of 10, plain gradient descent is stable
    only for lr < 0.2, so its best rate lies inside the default grid rather
    than at its upper edge. The minimizer is drawn from N(0, I) and
    b = A theta*, so the optimal loss is -1/2 theta*'A theta*.
    """
    if dim < 1 or condition_number < 1 or max_eigenvalue <= 0:
        raise ValueError("need dim >= 1, condition_number >= 1 and max_eigenvalue > 0")
    rng = np.random.default_rng(seed)
    top = np.log10(max_eigenvalue)
    eigs = np.logspace(top - np.log10(condition_number), top, dim)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    A = (q * eigs) @ q.T
    A = 0.5 * (A + A.T)
    theta_star = rng.standard_normal(dim)
    task = QuadraticTask(A, A @ theta_star, noise=noise, **kwargs)
    task.condition_number = condition_number
    task.seed = seed
    return task


class LogRegTask(Task):
    """Binary logistic regression on two Gaussian blobs; full-run signal is test accuracy."""

    name = "logreg"
    metric_kind = ACCURACY

    def __init__(self, X, y, X_test, y_test, batch_size=64, proxy_steps=30, full_steps=300, lr_grid=MNISTNET_LR_GRID):
        self.X, self.y = np.asarray(X, float), np.asarray(y, float)
        self.X_test, self.y_test = np.asarray(X_test, float), np.asarray(y_test, float)
        self.dim = self.X.shape[1]
        self.batch_size = min(batch_size, len(self.y))
        self.proxy_steps = proxy_steps
        self.full_steps = full_steps
        self.lr_grid = tuple(lr_grid)

    def init_params(self, seed):
        return np.zeros(self.dim)

    def batch_stream(self, seed):
        rng = np.random.default_rng(seed)
        n = len(self.y)
        while True:
            yield rng.choice(n, size=self.batch_size, replace=False)

    def _data(self, batch):
        if batch is None:
            return self.X, self.y
        return self.X[batch], self.y[batch]

    def loss(self, params, batch):
        X, y = self._data(batch)
        z = X @ params
        return float(-np.mean(y * log_expit(z) + (1 - y) * log_expit(-z)))

    def gradient(self, params, batch):
        X, y = self._data(batch)
        return X.T @ (expit(X @ params) - y) / len(y)

    def metric(self, params):
        pred = (self.X_test @ params) > 0
        return float(np.mean(pred == (self.y_test > 0.5)))


def logreg_task(n=512, dim=10, seed=0, separation=1.5, **kwargs) -> LogRegTask:
    """Two Gaussian classes at +/- separation * u (u a random unit vector), equal train/test sizes."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)

    def draw(count):
        y = rng.integers(0, 2, size=count)
        X = rng.standard_normal((count, dim)) + np.outer(2 * y - 1, separation * direction)
        return X, y

    X, y = draw(n)
    X_test, y_test = draw(n)
    return LogRegTask(X, y, X_test, y_test, **kwargs)
