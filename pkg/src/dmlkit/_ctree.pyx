# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled regression tree kernel.

Mirrors dmlkit.learners._tree_py operation-for-operation; see that module
for the algorithm contract.  Compiled with -ffp-contract=off so gain
arithmetic rounds exactly like the NumPy fallback.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint64_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef uint64_t MULT1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MULT2 = 0x94D049BB133111EBULL


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * MULT1
    z = (z ^ (z >> 27)) * MULT2
    return z ^ (z >> 31)


cdef inline uint64_t _draw(uint64_t base, uint64_t* counter) nogil:
    counter[0] += 1
    return _mix64(base + counter[0] * GAMMA)


def build_tree(double[:, ::1] X, double[::1] y, int32_t[:, ::1] sorted_idx,
               int max_depth, int min_leaf, int mtry,
               object rng_base, object rng_counter):
    cdef int p = sorted_idx.shape[0]
    cdef Py_ssize_t m = sorted_idx.shape[1]
    cdef uint64_t base = <uint64_t> rng_base
    cdef uint64_t counter = <uint64_t> rng_counter

    idx_arr = np.array(sorted_idx, dtype=np.int32, copy=True)
    cdef int32_t[:, ::1] idx = idx_arr
    cdef Py_ssize_t cap = 2 * m + 2
    feature_arr = np.full(cap, -1, dtype=np.int32)
    threshold_arr = np.zeros(cap, dtype=np.float64)
    left_arr = np.full(cap, -1, dtype=np.int32)
    right_arr = np.full(cap, -1, dtype=np.int32)
    value_arr = np.zeros(cap, dtype=np.float64)
    cdef int32_t[::1] feature = feature_arr
    cdef double[::1] threshold = threshold_arr
    cdef int32_t[::1] left = left_arr
    cdef int32_t[::1] right = right_arr
    cdef double[::1] value = value_arr

    stack_arr = np.zeros((m + 4, 5), dtype=np.int64)
    cdef int64_t[:, ::1] stack = stack_arr
    tmp_arr = np.zeros(m, dtype=np.int32)
    cdef int32_t[::1] tmp = tmp_arr
    feats_arr = np.zeros(p if p > 0 else 1, dtype=np.int64)
    cdef int64_t[::1] feats = feats_arr

    cdef Py_ssize_t sp = 0, n_nodes = 0
    cdef Py_ssize_t start, end, size, pos, mid, k, nl_best, i, jj, w_l, w_r
    cdef int64_t depth, parent, is_left, nid, j, jbest, swap_j
    cdef int n_feats
    cdef double s, total, sl, stot, gain, best_gain, best_thr, xv, xn, thr
    cdef Py_ssize_t nl
    cdef int32_t rid
    cdef bint pure

    stack[0, 0] = 0; stack[0, 1] = m; stack[0, 2] = 0
    stack[0, 3] = -1; stack[0, 4] = 0
    sp = 1
    with nogil:
        while sp > 0:
            sp -= 1
            start = stack[sp, 0]; end = stack[sp, 1]; depth = stack[sp, 2]
            parent = stack[sp, 3]; is_left = stack[sp, 4]
            nid = n_nodes
            n_nodes += 1
            if parent >= 0:
                if is_left:
                    left[parent] = <int32_t> nid
                else:
                    right[parent] = <int32_t> nid
            size = end - start
            total = 0.0
            for k in range(start, end):
                total += y[idx[0, k]]
            value[nid] = total / size

            if depth >= max_depth or size < 2 * min_leaf or size < 2:
                continue
            pure = True
            for k in range(start + 1, end):
                if y[idx[0, k]] != y[idx[0, start]]:
                    pure = False
                    break
            if pure:
                continue

            if mtry < p:
                for k in range(p):
                    feats[k] = k
                for k in range(mtry):
                    jj = k + <Py_ssize_t> (_draw(base, &counter) % <uint64_t> (p - k))
                    swap_j = feats[k]; feats[k] = feats[jj]; feats[jj] = swap_j
                # insertion sort of the first mtry entries
                for k in range(1, mtry):
                    swap_j = feats[k]
                    i = k - 1
                    while i >= 0 and feats[i] > swap_j:
                        feats[i + 1] = feats[i]
                        i -= 1
                    feats[i + 1] = swap_j
                n_feats = mtry
            else:
                for k in range(p):
                    feats[k] = k
                n_feats = p

            best_gain = (total * total) / size
            jbest = -1
            best_thr = 0.0
            nl_best = 0
            for i in range(n_feats):
                j = feats[i]
                stot = 0.0
                for k in range(start, end):
                    stot += y[idx[j, k]]
                sl = 0.0
                for k in range(start, end - 1):
                    rid = idx[j, k]
                    sl += y[rid]
                    nl = k - start + 1
                    xv = X[rid, j]
                    xn = X[idx[j, k + 1], j]
                    if xv != xn and nl >= min_leaf and (size - nl) >= min_leaf:
                        gain = sl * sl / nl + (stot - sl) * (stot - sl) / (size - nl)
                        if gain > best_gain:
                            best_gain = gain
                            jbest = j
                            best_thr = (xv + xn) * 0.5
                            if best_thr == xn:
                                best_thr = xv
                            nl_best = nl
            if jbest < 0:
                continue

            feature[nid] = <int32_t> jbest
            threshold[nid] = best_thr
            thr = best_thr
            for j in range(p):
                w_l = 0
                w_r = 0
                for k in range(start, end):
                    rid = idx[j, k]
                    if X[rid, jbest] <= thr:
                        idx[j, start + w_l] = rid
                        w_l += 1
                    else:
                        tmp[w_r] = rid
                        w_r += 1
                for k in range(w_r):
                    idx[j, start + w_l + k] = tmp[k]
            mid = start + nl_best
            stack[sp, 0] = mid; stack[sp, 1] = end; stack[sp, 2] = depth + 1
            stack[sp, 3] = nid; stack[sp, 4] = 0
            sp += 1
            stack[sp, 0] = start; stack[sp, 1] = mid; stack[sp, 2] = depth + 1
            stack[sp, 3] = nid; stack[sp, 4] = 1
            sp += 1

    return (feature_arr[:n_nodes].copy(), threshold_arr[:n_nodes].copy(),
            left_arr[:n_nodes].copy(), right_arr[:n_nodes].copy(),
            value_arr[:n_nodes].copy(), int(counter))


def predict_tree(int32_t[::1] feature, double[::1] threshold,
                 int32_t[::1] left, int32_t[::1] right, double[::1] value,
                 double[:, ::1] X):
    cdef Py_ssize_t q = X.shape[0]
    out_arr = np.empty(q, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r
    cdef int32_t v
    with nogil:
        for r in range(q):
            v = 0
            while feature[v] >= 0:
                if X[r, feature[v]] <= threshold[v]:
                    v = left[v]
                else:
                    v = right[v]
            out[r] = value[v]
    return out_arr
