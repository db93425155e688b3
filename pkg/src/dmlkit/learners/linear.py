"""Linear nuisance learners: OLS, ridge, lasso, and the constant mean.

Ridge and lasso standardize features to unit standard deviation and center
the target; reported coefficients are on the original scale.  The lasso is
cyclic coordinate descent on the objective

    (1 / 2n) * ||y - Xb||^2 + penalty * ||b||_1

with, when no penalty is given, 5-fold cross-validation over a 50-point
geometric grid from lambda_max (the smallest penalty zeroing every
coefficient) down to lambda_max * 1e-4, picking the CV-error minimizer.
"""

from __future__ import annotations

import numpy as np

from ..data import make_folds


def fit_ols(X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Least squares with intercept; minimum-norm solution if rank-deficient."""
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(beta[0]), beta[1:]


def _standardize(X, y):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    return (X - mu) / sd, y - y.mean(), mu, sd, y.mean()


def fit_ridge(X: np.ndarray, y: np.ndarray, penalty: float) -> tuple[float, np.ndarray]:
    """Closed-form ridge on standardized features, intercept unpenalized."""
    if penalty < 0:
        raise ValueError("ridge penalty must be >= 0")
    Xs, yc, mu, sd, ybar = _standardize(X, y)
    p = X.shape[1]
    if penalty == 0.0:
        b, *_ = np.linalg.lstsq(Xs, yc, rcond=None)
    else:
        b = np.linalg.solve(Xs.T @ Xs + penalty * np.eye(p), Xs.T @ yc)
    coef = b / sd
    return float(ybar - mu @ coef), coef


def _cd_lasso(Xs, yc, penalty, b0=None, tol=1e-10, max_iter=100_000):
    n, p = Xs.shape
    cj = np.einsum("ij,ij->j", Xs, Xs) / n
    b = np.zeros(p) if b0 is None else b0.copy()
    r = yc - Xs @ b
    scale = max(1.0, float(np.max(np.abs(yc))) if n else 1.0)
    for _ in range(max_iter):
        delta = 0.0
        for j in range(p):
            if cj[j] == 0.0:
                continue
            old = b[j]
            z = old * cj[j] + (Xs[:, j] @ r) / n
            new = np.sign(z) * max(abs(z) - penalty, 0.0) / cj[j]
            if new != old:
                r += Xs[:, j] * (old - new)
                b[j] = new
                delta = max(delta, abs(new - old))
        if delta <= tol * scale:
            break
    return b


def fit_lasso(X: np.ndarray, y: np.ndarray, penalty: float | None,
              cv_folds: int, grid_size: int, seed: int) -> tuple[float, np.ndarray]:
    """Coordinate-descent lasso; CV-selected penalty when none is given."""
    if penalty is not None and penalty < 0:
        raise ValueError("lasso penalty must be >= 0")
    Xs, yc, mu, sd, ybar = _standardize(X, y)
    n = X.shape[0]
    if penalty is None:
        lam_max = float(np.max(np.abs(Xs.T @ yc)) / n) if X.shape[1] else 0.0
        if lam_max == 0.0:
            penalty = 0.0
        else:
            grid = np.geomspace(lam_max, lam_max * 1e-4, grid_size)
            folds = make_folds(n, min(cv_folds, n), seed)
            cv_err = np.zeros(grid.size)
            for k in range(1, folds.K + 1):
                tr = folds.complement_rows(k)
                te = folds.fold_rows(k)
                b = None
                for gi, lam in enumerate(grid):
                    b = _cd_lasso(Xs[tr], yc[tr] - yc[tr].mean(), lam, b0=b)
                    pred = yc[tr].mean() + Xs[te] @ b
                    cv_err[gi] += float(np.sum((yc[te] - pred) ** 2))
            penalty = float(grid[int(np.argmin(cv_err))])
    b = _cd_lasso(Xs, yc, penalty)
    coef = b / sd
    return float(ybar - mu @ coef), coef


def predict_linear(intercept: float, coef: np.ndarray, X: np.ndarray) -> np.ndarray:
    return intercept + X @ coef
