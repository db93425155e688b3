"""Out-of-fold prediction, cross-fitted fit metrics, and stacking.

``crossfit_predict`` is the workhorse of cross-fitting: for every fold k
it fits a learner on the complement of fold k (optionally restricted to a
training subset, e.g. treated rows only) and predicts for *all* rows of
fold k.  The model predicting row i therefore never saw row i.

Fold k's learner uses the RNG substream ``spec.seed ^ k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset, FoldPartition
from .base import FittedModel, LearnerSpec, fit


@dataclass(frozen=True)
class OofPredictions:
    """Per-observation out-of-fold predictions for one nuisance target."""

    target: str
    values: np.ndarray
    folds: FoldPartition | None
    clipped: int = 0

    def __post_init__(self):
        self.values.setflags(write=False)


def crossfit_predict_arrays(spec: LearnerSpec, X: np.ndarray, y: np.ndarray,
                            folds: FoldPartition, subset: np.ndarray | None = None,
                            probability: bool = False, clip: float = 0.01,
                            name: str = "") -> OofPredictions:
    """Array-level cross-fitting core.

    ``subset`` is a boolean training-row predicate; prediction still covers
    every row.  A fold complement with fewer than 2 training rows is an
    error naming the fold.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if folds.assignment.shape[0] != n:
        raise ValueError("fold partition does not match data length")
    out = np.empty(n, dtype=np.float64)
    clipped = 0
    for k in range(1, folds.K + 1):
        train = folds.assignment != k
        if subset is not None:
            train = train & subset
        rows = np.nonzero(train)[0]
        if rows.size < 2:
            raise ValueError(f"fold {k}: fewer than 2 training rows after subsetting")
        model = fit(spec.with_seed(spec.seed ^ k), X[rows], y[rows],
                    probability=probability, clip=clip)
        test = folds.fold_rows(k)
        raw = model.raw_predict(X[test])
        if probability:
            lo, hi = clip, 1.0 - clip
            clipped += int(np.sum((raw < lo) | (raw > hi)))
            raw = np.clip(raw, lo, hi)
        out[test] = raw
    return OofPredictions(target=name, values=out, folds=folds, clipped=clipped)


def fullsample_predict_arrays(spec: LearnerSpec, X: np.ndarray, y: np.ndarray,
                              subset: np.ndarray | None = None,
                              probability: bool = False, clip: float = 0.01,
                              name: str = "") -> OofPredictions:
    """No-cross-fitting counterpart: fit once on all (subset) rows, predict in-sample."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rows = np.nonzero(subset)[0] if subset is not None else np.arange(y.shape[0])
    if rows.size < 2:
        raise ValueError("fewer than 2 training rows after subsetting")
    model = fit(spec, X[rows], y[rows], probability=probability, clip=clip)
    raw = model.raw_predict(X)
    clipped = 0
    if probability:
        lo, hi = clip, 1.0 - clip
        clipped = int(np.sum((raw < lo) | (raw > hi)))
        raw = np.clip(raw, lo, hi)
    return OofPredictions(target=name, values=raw, folds=None, clipped=clipped)


def crossfit_predict(spec: LearnerSpec, ds: Dataset, target: str, features: str,
                     folds: FoldPartition, subset: np.ndarray | None = None,
                     probability: bool = False, clip: float = 0.01) -> OofPredictions:
    """Role-based wrapper: ``target`` is a role name, ``features`` a role
    whose columns form the design matrix (usually 'controls')."""
    y = ds.role_vector(target)
    X = ds.controls_matrix() if features == "controls" else ds.role_vector(features).reshape(-1, 1)
    return crossfit_predict_arrays(spec, X, y, folds, subset=subset,
                                   probability=probability, clip=clip, name=target)


def crossfit_r2(y: np.ndarray, oof: OofPredictions | np.ndarray) -> float:
    """1 - SSR/SST of out-of-fold predictions; negative when worse than y-bar."""
    pred = oof.values if isinstance(oof, OofPredictions) else np.asarray(oof)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != pred.shape:
        raise ValueError("length mismatch")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("constant target: cross-fitted R^2 undefined")
    return 1.0 - float(np.sum((y - pred) ** 2)) / sst


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def stack_weights(y: np.ndarray, candidate_oofs: list) -> np.ndarray:
    """Simplex-constrained least-squares stacking weights.

    Minimizes sum_i (y_i - sum_j w_j yhat_ij)^2 over w >= 0, sum w = 1 by
    projected gradient descent, stopping when the objective improves by
    less than 1e-8 (relative to its scale).
    """
    if not candidate_oofs:
        raise ValueError("need at least one candidate")
    cols = [c.values if isinstance(c, OofPredictions) else np.asarray(c, dtype=np.float64)
            for c in candidate_oofs]
    A = np.column_stack(cols)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite candidate predictions")
    m = A.shape[1]
    if m == 1:
        return np.ones(1)
    G = A.T @ A
    lip = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    if lip == 0.0:
        return np.full(m, 1.0 / m)
    w = np.full(m, 1.0 / m)
    obj = float(np.sum((y - A @ w) ** 2))
    scale = max(1.0, obj)
    for _ in range(100_000):
        grad = 2.0 * (G @ w - A.T @ y)
        w_new = _project_simplex(w - grad / lip)
        obj_new = float(np.sum((y - A @ w_new) ** 2))
        if obj - obj_new <= 1e-8 * scale:
            if obj_new <= obj:
                w = w_new
            break
        w, obj = w_new, obj_new
    return w
