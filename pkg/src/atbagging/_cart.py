"""Compiled CART kernels: greedy variance-reduction growth and routing.

Trees are stored as flat arrays: ``feature[k] == -1`` marks a leaf, otherwise
rows with ``x[feature[k]] <= threshold[k]`` go to ``left[k]``.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _best_split_on_column(X, y, idx, start, end, col, min_leaf, buf_x, buf_y):
    n = end - start
    for t in range(n):
        buf_x[t] = X[idx[start + t], col]
    order = np.argsort(buf_x[:n], kind="mergesort")
    xs = buf_x[:n][order]
    for t in range(n):
        buf_y[t] = y[idx[start + order[t]]]
    total = 0.0
    for t in range(n):
        total += buf_y[t]
    best_score = -np.inf
    best_pos = -1
    left_sum = 0.0
    for p in range(1, n):
        left_sum += buf_y[p - 1]
        if p < min_leaf or n - p < min_leaf:
            continue
        if xs[p - 1] == xs[p]:
            continue
        right_sum = total - left_sum
        score = left_sum * left_sum / p + right_sum * right_sum / (n - p)
        if score > best_score:
            best_score = score
            best_pos = p
    if best_pos < 0:
        return -np.inf, 0.0
    lo = xs[best_pos - 1]
    hi = xs[best_pos]
    thr = 0.5 * (lo + hi)
    if thr >= hi:
        thr = lo
    return best_score, thr


@njit(cache=True, nogil=True)
def grow_tree(X, y, sample_idx, col_start, col_width, mtry, max_depth, min_leaf, col_keys):
    """Grow one regression tree on the multiset ``sample_idx`` of rows of X.

    ``col_start``/``col_width`` describe how each original column maps onto
    the encoded columns of X (one-hot categoricals span several).
    ``col_keys[k]`` holds random keys used to pick the ``mtry`` candidate
    columns at the k-th node created.
    """
    n = sample_idx.shape[0]
    n_orig = col_start.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    depth_of = np.zeros(cap, dtype=np.int64)

    idx = sample_idx.copy()
    buf_x = np.empty(n)
    buf_y = np.empty(n)
    tmp = np.empty(n, dtype=np.int64)

    seg_start = np.zeros(cap, dtype=np.int64)
    seg_end = np.zeros(cap, dtype=np.int64)
    stack = np.zeros(cap, dtype=np.int64)
    sp = 0
    n_nodes = 1
    seg_start[0] = 0
    seg_end[0] = n
    stack[sp] = 0
    sp += 1

    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = seg_start[node]
        e = seg_end[node]
        m = e - s
        acc = 0.0
        ymin = np.inf
        ymax = -np.inf
        for t in range(s, e):
            v = y[idx[t]]
            acc += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = acc / m
        if ymin == ymax or m < 2 * min_leaf or (max_depth >= 0 and depth_of[node] >= max_depth):
            continue

        keys = col_keys[node]
        order = np.argsort(keys, kind="mergesort")
        best_score = -np.inf
        best_col = -1
        best_thr = 0.0
        # first pass: sampled candidates; second pass: everything else if nothing splits
        for pass_no in range(2):
            cand = np.zeros(n_orig, dtype=np.bool_)
            if pass_no == 0:
                for r in range(min(mtry, n_orig)):
                    cand[order[r]] = True
            else:
                for r in range(min(mtry, n_orig), n_orig):
                    cand[order[r]] = True
            for oc in range(n_orig):
                if not cand[oc]:
                    continue
                for c in range(col_start[oc], col_start[oc] + col_width[oc]):
                    sc, th = _best_split_on_column(X, y, idx, s, e, c, min_leaf, buf_x, buf_y)
                    if sc > best_score:
                        best_score = sc
                        best_col = c
                        best_thr = th
            if best_col >= 0:
                break
        if best_col < 0:
            continue

        # stable in-place partition of the segment
        nl = 0
        nr = 0
        for t in range(s, e):
            if X[idx[t], best_col] <= best_thr:
                idx[s + nl] = idx[t]
                nl += 1
            else:
                tmp[nr] = idx[t]
                nr += 1
        for t in range(nr):
            idx[s + nl + t] = tmp[t]

        feature[node] = best_col
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        depth_of[lc] = depth_of[node] + 1
        depth_of[rc] = depth_of[node] + 1
        seg_start[lc] = s
        seg_end[lc] = s + nl
        seg_start[rc] = s + nl
        seg_end[rc] = e
        # push right first so the left subtree is expanded first
        stack[sp] = rc
        sp += 1
        stack[sp] = lc
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        depth_of[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def route(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


@njit(cache=True, nogil=True)
def leaf_index(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = k
    return out
