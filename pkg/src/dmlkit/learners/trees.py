"""CART regression trees and bagged forests.

The split-search kernel has two interchangeable implementations: a compiled
Cython extension (``dmlkit._ctree``) and a pure-NumPy fallback
(``dmlkit.learners._tree_py``).  The compiled one is picked at import when
available; set ``DMLKIT_PURE_PYTHON=1`` to force the fallback.  Both
produce bit-identical trees (see the fallback module for the contract),
so the backend never changes numerical results, only speed.

Trees split on midpoints of sorted distinct values by variance reduction;
impurity ties keep the smallest feature index, then the smallest
threshold.  ``min_leaf`` is the minimum number of (bootstrap) rows each
child must keep.  Forest tree ``t`` draws its bootstrap sample and
per-split feature subsets from the SplitMix64 substream ``seed ^ t``.
"""

from __future__ import annotations

import os

import numpy as np

from ..rng import SplitMix64, substream
from . import _tree_py

if os.environ.get("DMLKIT_PURE_PYTHON"):
    _kernel = _tree_py
else:
    try:
        from .. import _ctree as _kernel  # type: ignore[no-redef]
    except ImportError:
        _kernel = _tree_py


def backend_name() -> str:
    """'compiled' when the Cython kernel is active, else 'python'."""
    return "compiled" if _kernel is not _tree_py else "python"


_UNLIMITED_DEPTH = 1_000_000


def _presort(X: np.ndarray) -> np.ndarray:
    """(p, n) row ids, each row stably sorted by one feature."""
    n, p = X.shape
    out = np.empty((p, n), dtype=np.int32)
    for j in range(p):
        out[j] = np.argsort(X[:, j], kind="stable").astype(np.int32)
    return out


def _resolve_mtry(p: int, feature_frac: float) -> int:
    return max(1, min(p, int(feature_frac * p + 0.5)))


def fit_forest(X, y, n_trees, max_depth, min_leaf, feature_frac, bootstrap, seed):
    """Fit a bagged CART ensemble; returns the list of node-array tuples."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    depth = _UNLIMITED_DEPTH if max_depth is None else int(max_depth)
    if p == 0:
        # Nothing to split on: every tree is the root leaf.
        leaf = (np.array([-1], dtype=np.int32), np.zeros(1), np.array([-1], dtype=np.int32),
                np.array([-1], dtype=np.int32), np.array([float(np.mean(y))]))
        return [leaf] * n_trees
    mtry = _resolve_mtry(p, feature_frac)
    glob = _presort(X)
    trees = []
    for t in range(n_trees):
        stream = SplitMix64(substream(seed, t))
        if bootstrap:
            rids = stream.integers(n, n)
            counts = np.bincount(rids, minlength=n)
            sidx = np.empty((p, n), dtype=np.int32)
            for j in range(p):
                sidx[j] = np.repeat(glob[j], counts[glob[j]])
        else:
            sidx = glob
        res = _kernel.build_tree(X, y, sidx, depth, int(min_leaf), mtry,
                                 stream.base, stream.counter)
        trees.append(res[:5])
    return trees


def predict_forest(trees, X) -> np.ndarray:
    """Average of per-tree predictions, accumulated in tree order."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for feature, threshold, left, right, value in trees:
        acc += _kernel.predict_tree(feature, threshold, left, right, value, X)
    return acc / len(trees)
