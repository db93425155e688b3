"""Pure-NumPy regression tree kernel.

Fallback used when the compiled extension (dmlkit._ctree) is unavailable or
disabled via DMLKIT_PURE_PYTHON=1.  Both kernels implement the identical
algorithm with identical floating-point operation order, so their outputs
are bit-for-bit equal:

* candidate thresholds are midpoints between distinct consecutive sorted
  values; split quality is sum(left)^2/n_left + sum(right)^2/n_right
  (equivalent to variance reduction), accepted only on strict improvement;
* ties are broken by the smallest feature index, then smallest threshold;
* prefix sums accumulate sequentially (np.cumsum here, a C loop there),
  and the extension is compiled with -ffp-contract=off;
* nodes are created in preorder (left subtree first) and per-split feature
  subsets consume SplitMix64 draws in the same order.

``sorted_idx`` carries row ids with multiplicity (bootstrap), one row per
feature, each stably sorted by that feature.
"""

from __future__ import annotations

import numpy as np

from ..rng import SplitMix64


def _draw_subset(stream: SplitMix64, p: int, mtry: int) -> np.ndarray:
    """Partial Fisher-Yates: mtry distinct feature indices, returned sorted."""
    arr = list(range(p))
    for i in range(mtry):
        j = i + stream.next_u64() % (p - i)
        arr[i], arr[j] = arr[j], arr[i]
    return np.sort(np.asarray(arr[:mtry], dtype=np.int64))


def build_tree(X, y, sorted_idx, max_depth, min_leaf, mtry, rng_base, rng_counter):
    """Grow one CART regression tree; returns node arrays and the RNG counter.

    Node arrays: (feature, threshold, left, right, value); feature == -1
    marks a leaf.
    """
    p, m = sorted_idx.shape
    idx = sorted_idx.copy()
    cap = 2 * m + 2
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    stream = SplitMix64(rng_base, rng_counter)

    n_nodes = 0
    # stack entries: (start, end, depth, parent, is_left)
    stack = [(0, m, 0, -1, 0)]
    while stack:
        start, end, depth, parent, is_left = stack.pop()
        nid = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left:
                left[parent] = nid
            else:
                right[parent] = nid
        seg0 = idx[0, start:end]
        ys0 = y[seg0]
        cs0 = np.cumsum(ys0)
        size = end - start
        value[nid] = cs0[-1] / size

        if depth >= max_depth or size < 2 * min_leaf or size < 2:
            continue
        if np.all(ys0 == ys0[0]):
            continue

        if mtry < p:
            feats = _draw_subset(stream, p, mtry)
        else:
            feats = np.arange(p, dtype=np.int64)

        best_gain = (cs0[-1] * cs0[-1]) / size
        best_feat = -1
        best_thr = 0.0
        best_nl = 0
        counts = np.arange(1, size, dtype=np.float64)
        for j in feats:
            seg = idx[j, start:end]
            xs = X[seg, j]
            cs = np.cumsum(y[seg])
            stot = cs[-1]
            sl = cs[:-1]
            valid = (xs[:-1] != xs[1:]) & (counts >= min_leaf) & ((size - counts) >= min_leaf)
            if not valid.any():
                continue
            gains = np.where(valid, sl * sl / counts + (stot - sl) * (stot - sl) / (size - counts), -np.inf)
            pos = int(np.argmax(gains))
            if gains[pos] > best_gain:
                best_gain = gains[pos]
                best_feat = int(j)
                # midpoint may round up to the right value for adjacent
                # floats; fall back to the left value so x <= thr keeps
                # exactly pos + 1 rows on the left
                best_thr = (xs[pos] + xs[pos + 1]) * 0.5
                if best_thr == xs[pos + 1]:
                    best_thr = xs[pos]
                best_nl = pos + 1
        if best_feat < 0:
            continue

        feature[nid] = best_feat
        threshold[nid] = best_thr
        lmask = X[:, best_feat] <= best_thr
        for j in range(p):
            seg = idx[j, start:end]
            go = lmask[seg]
            l_part, r_part = seg[go], seg[~go]  # copies; seg aliases idx
            idx[j, start:start + best_nl] = l_part
            idx[j, start + best_nl:end] = r_part
        mid = start + best_nl
        stack.append((mid, end, depth + 1, nid, 0))
        stack.append((start, mid, depth + 1, nid, 1))

    sl_ = slice(0, n_nodes)
    return (feature[sl_].copy(), threshold[sl_].copy(), left[sl_].copy(),
            right[sl_].copy(), value[sl_].copy(), stream.counter)


def predict_tree(feature, threshold, left, right, value, X):
    """Evaluate one tree on the rows of X."""
    q = X.shape[0]
    out = np.empty(q, dtype=np.float64)
    stack = [(0, np.arange(q, dtype=np.int64))]
    while stack:
        nid, rows = stack.pop()
        if rows.size == 0:
            continue
        if feature[nid] < 0:
            out[rows] = value[nid]
            continue
        go = X[rows, feature[nid]] <= threshold[nid]
        stack.append((left[nid], rows[go]))
        stack.append((right[nid], rows[~go]))
    return out
