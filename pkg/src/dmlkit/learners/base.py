"""Learner specifications, fitting, and prediction.

A LearnerSpec is a serializable description of one nuisance learner.
Supported kinds:

* ``mean``   constant y-bar
* ``ols``    least squares with intercept (minimum-norm when rank-deficient)
* ``ridge``  closed-form standardized ridge, fixed ``penalty``
* ``lasso``  coordinate descent; CV-chosen penalty unless ``penalty`` set
* ``tree``   single deterministic CART (no bootstrap, all features)
* ``forest`` bagged CART ensemble with per-split feature subsampling
* ``oracle`` programmatic only: ``func(features) -> predictions``; used to
  plug known nuisance functions into the estimation pipeline

Probability targets (0/1) are fit with the same regression machinery; their
predictions are clipped into [clip, 1 - clip] at predict time and the model
remembers the clip range.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import linear, trees

KINDS = ("mean", "ols", "ridge", "lasso", "tree", "forest", "oracle")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "ols"
    seed: int = 0
    # ridge / lasso
    penalty: float | None = None
    cv_folds: int = 5
    grid_size: int = 50
    # tree / forest
    n_trees: int = 500
    max_depth: int | None = None
    min_leaf: int = 5
    feature_frac: float = 1.0 / 3.0
    bootstrap: bool = True
    # oracle
    func: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind '{self.kind}'")
        if self.kind == "ridge" and (self.penalty is None or self.penalty < 0):
            raise ValueError("ridge requires penalty >= 0")
        if self.kind == "lasso" and self.penalty is not None and self.penalty < 0:
            raise ValueError("lasso penalty must be >= 0")
        if self.kind in ("tree", "forest"):
            if self.n_trees < 1:
                raise ValueError("n_trees must be >= 1")
            if self.min_leaf < 1:
                raise ValueError("min_leaf must be >= 1")
            if self.max_depth is not None and self.max_depth < 1:
                raise ValueError("max_depth must be >= 1 (or None)")
            if not 0.0 < self.feature_frac <= 1.0:
                raise ValueError("feature_frac must be in (0, 1]")
        if self.kind == "oracle" and self.func is None:
            raise ValueError("oracle learner requires func")

    def with_seed(self, seed: int) -> "LearnerSpec":
        return replace(self, seed=seed)

    def to_json(self) -> dict:
        if self.kind == "oracle":
            raise ValueError("oracle learners are programmatic-only and not serializable")
        out = {"kind": self.kind, "seed": self.seed}
        if self.kind in ("ridge", "lasso"):
            if self.penalty is not None:
                out["penalty"] = self.penalty
            if self.kind == "lasso":
                out["cv_folds"] = self.cv_folds
                out["grid_size"] = self.grid_size
        if self.kind in ("tree", "forest"):
            out.update(n_trees=self.n_trees, max_depth=self.max_depth,
                       min_leaf=self.min_leaf, feature_frac=self.feature_frac,
                       bootstrap=self.bootstrap)
        return out

    @staticmethod
    def from_json(doc: dict) -> "LearnerSpec":
        allowed = {"kind", "seed", "penalty", "cv_folds", "grid_size", "n_trees",
                   "max_depth", "min_leaf", "feature_frac", "bootstrap"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown learner field(s): {', '.join(sorted(unknown))}")
        return LearnerSpec(**doc)


@dataclass(frozen=True)
class FittedModel:
    """An immutable fitted nuisance model; predict is a pure function."""

    kind: str
    n_features: int
    payload: object
    clip: tuple[float, float] | None = None

    def raw_predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature column(s), got shape {X.shape}")
        if self.kind == "mean":
            return np.full(X.shape[0], self.payload)
        if self.kind in ("ols", "ridge", "lasso"):
            intercept, coef = self.payload
            return linear.predict_linear(intercept, coef, X)
        if self.kind in ("tree", "forest"):
            return trees.predict_forest(self.payload, X)
        if self.kind == "oracle":
            return np.asarray(self.payload(X), dtype=np.float64)
        raise ValueError(self.kind)

    def predict(self, X: np.ndarray) -> np.ndarray:
        pred = self.raw_predict(X)
        if self.clip is not None:
            pred = np.clip(pred, self.clip[0], self.clip[1])
        return pred


def fit(spec: LearnerSpec, X: np.ndarray, y: np.ndarray,
        probability: bool = False, clip: float = 0.01) -> FittedModel:
    """Fit one nuisance model.

    ``probability=True`` marks a 0/1 target whose predictions will be
    clipped into [clip, 1 - clip].
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")
    if spec.kind != "oracle":
        if y.shape[0] < 2:
            raise ValueError("need at least 2 training rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite values in training data")
        if probability and not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("probability target must be 0/1")
    clip_range = (clip, 1.0 - clip) if probability else None

    if spec.kind == "mean":
        payload: object = float(np.mean(y))
    elif spec.kind == "ols":
        payload = linear.fit_ols(X, y)
    elif spec.kind == "ridge":
        payload = linear.fit_ridge(X, y, spec.penalty)
    elif spec.kind == "lasso":
        payload = linear.fit_lasso(X, y, spec.penalty, spec.cv_folds, spec.grid_size, spec.seed)
    elif spec.kind == "tree":
        payload = trees.fit_forest(X, y, 1, spec.max_depth, spec.min_leaf,
                                   feature_frac=1.0, bootstrap=False, seed=spec.seed)
    elif spec.kind == "forest":
        payload = trees.fit_forest(X, y, spec.n_trees, spec.max_depth, spec.min_leaf,
                                   spec.feature_frac, spec.bootstrap, spec.seed)
    elif spec.kind == "oracle":
        payload = spec.func
    else:  # pragma: no cover
        raise ValueError(spec.kind)
    return FittedModel(kind=spec.kind, n_features=X.shape[1], payload=payload, clip=clip_range)
