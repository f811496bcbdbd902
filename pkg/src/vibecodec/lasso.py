"""Lasso regression by cyclic coordinate descent, with k-fold lambda selection.

Columns are standardised (population sd) before fitting and the intercept is
left unpenalised; weights are reported on the original column scale. The
objective in standardised space is

    (1 / 2n) * ||y - b0 - Z w||^2 + lam * ||w||_1
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LassoConvergenceWarning",
    "LassoFit",
    "soft_threshold",
    "standardize",
    "lambda_max",
    "lambda_grid",
    "lasso_path",
    "lasso_cv",
]

TOL = 1e-7
MAX_SWEEPS = 10_000
N_LAMBDAS = 50
LAMBDA_RATIO = 1e-4


class LassoConvergenceWarning(RuntimeWarning):
    pass


def soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def standardize(X: np.ndarray):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    live = sd > 0
    Z = np.zeros_like(X)
    Z[:, live] = (X[:, live] - mu[live]) / sd[live]
    return Z, mu, sd, live


def lambda_max(X, y) -> float:
    """Smallest penalty at which every standardised weight is zero."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Z, *_ = standardize(X)
    return float(np.max(np.abs(Z.T @ (y - y.mean()))) / y.size) if X.shape[1] else 0.0


def lambda_grid(X, y, n: int = N_LAMBDAS, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    lmax = lambda_max(X, y)
    if lmax == 0.0:
        return np.zeros(1)
    return lmax * np.logspace(0.0, math.log10(ratio), n)


def _descend(G, c, w, lam, tol, max_sweeps):
    """Coordinate descent on the covariance form; ``w`` (list) is updated in place."""
    k = len(w)
    # gradient residual r = c - G w
    r = [c[i] - sum(G[i][j] * w[j] for j in range(k)) for i in range(k)]
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(k):
            gjj = G[j][j]
            if gjj == 0.0:
                continue
            old = w[j]
            new = soft_threshold(r[j] + gjj * old, lam) / gjj
            if new != old:
                delta = new - old
                w[j] = new
                Gj = G[j]
                for i in range(k):
                    r[i] -= Gj[i] * delta
                if abs(delta) > biggest:
                    biggest = abs(delta)
        if biggest < tol:
            return sweep, True
    return max_sweeps, False


@dataclass
class LassoFit:
    weights: np.ndarray  # (n_lambdas, k), original scale
    intercepts: np.ndarray
    lambdas: np.ndarray
    converged: np.ndarray
    sweeps: np.ndarray

    def predict(self, X, i: int = -1) -> np.ndarray:
        return self.intercepts[i] + np.asarray(X, dtype=np.float64) @ self.weights[i]


def lasso_path(X, y, lambdas, tol: float = TOL, max_sweeps: int = MAX_SWEEPS) -> LassoFit:
    """Fit along ``lambdas`` (in the given order) with warm starts.

    Zero-variance columns are pinned to a zero weight. A lambda whose
    descent hits ``max_sweeps`` is flagged in ``converged`` and a
    :class:`LassoConvergenceWarning` is issued.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    Z, mu, sd, live = standardize(X)
    yc = y - y.mean()
    G = (Z.T @ Z / n).tolist()
    c = (Z.T @ yc / n).tolist()
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))

    w = [0.0] * k
    W = np.zeros((lambdas.size, k))
    b0 = np.zeros(lambdas.size)
    conv = np.ones(lambdas.size, dtype=bool)
    sweeps = np.zeros(lambdas.size, dtype=int)
    for i, lam in enumerate(lambdas):
        sweeps[i], conv[i] = _descend(G, c, w, float(lam), tol, max_sweeps)
        ws = np.array(w)
        wo = np.zeros(k)
        wo[live] = ws[live] / sd[live]
        W[i] = wo
        b0[i] = y.mean() - mu @ wo
    if not conv.all():
        warnings.warn(
            f"lasso did not converge within {max_sweeps} sweeps for "
            f"{int((~conv).sum())} of {lambdas.size} penalties",
            LassoConvergenceWarning,
            stacklevel=2,
        )
    return LassoFit(W, b0, lambdas, conv, sweeps)


@dataclass
class CvResult:
    weights: np.ndarray
    intercept: float
    lam: float
    lambdas: np.ndarray
    cv_mse: np.ndarray
    cv_se: np.ndarray
    converged: bool
    folds: int = 0


def fold_ids(n: int, folds: int, rng) -> np.ndarray:
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def lasso_cv(X, y, lambdas=None, folds: int = 10, rng=None) -> CvResult:
    """Pick the penalty with the lowest mean k-fold CV error, then refit on all rows."""
    from .signal import Rng

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if lambdas is None:
        lambdas = lambda_grid(X, y)
    lambdas = np.sort(np.atleast_1d(np.asarray(lambdas, dtype=np.float64)))[::-1]

    if lambdas.size == 1:
        mse = np.full(1, np.nan)
        se = np.full(1, np.nan)
        best = 0
    else:
        if n < folds:
            raise ValueError(f"{n} rows cannot be split into {folds} folds")
        rng = rng if rng is not None else Rng(0)
        ids = fold_ids(n, folds, rng)
        err = np.zeros((folds, lambdas.size))
        for f in range(folds):
            tr = ids != f
            fit = lasso_path(X[tr], y[tr], lambdas)
            pred = fit.intercepts[None, :] + X[~tr] @ fit.weights.T
            err[f] = ((pred - y[~tr, None]) ** 2).mean(axis=0)
        mse = err.mean(axis=0)
        se = err.std(axis=0, ddof=1) / math.sqrt(folds)
        best = int(np.argmin(mse))

    fit = lasso_path(X, y, lambdas[: best + 1])
    return CvResult(
        fit.weights[-1].copy(), float(fit.intercepts[-1]), float(lambdas[best]),
        lambdas, mse, se, bool(fit.converged.all()), folds if lambdas.size > 1 else 0,
    )
