"""Flat-array CART trees: the hot loops behind the seeded random forest.

Each tree is a set of parallel arrays (split feature, threshold, child ids,
per-node class counts) grown iteratively with an explicit stack.  The loops
JIT to native code when numba is available and run unchanged (slower) without
it; both routes consume the same pre-drawn random integers, so results are
bit-identical either way.

Split rule: Gini impurity via the equivalent "maximize sum of squared class
counts over child size" form, thresholds at midpoints between consecutive
distinct values, first-found best wins.  Candidate features per split are a
partial Fisher–Yates draw fed by the caller's random stream; a node whose
candidates are all constant becomes a leaf.
"""

from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly by which route runs
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _best_split(X, y, indices, start, end, f, node_counts, n_classes):
    """Best Gini boundary on feature ``f`` for the node slice.

    Returns (score, threshold); score < 0 means no distinct-value boundary
    exists.  Score is sum(c_l^2)/n_l + sum(c_r^2)/n_r, monotone inverse of
    the weighted child Gini, so bigger is better.
    """
    m = end - start
    vals = np.empty(m, np.float64)
    labs = np.empty(m, np.int64)
    for i in range(m):
        vals[i] = X[indices[start + i], f]
        labs[i] = y[indices[start + i]]
    order = np.argsort(vals)

    left_counts = np.zeros(n_classes, np.int64)
    right_counts = node_counts.copy()
    sq_l = 0.0
    sq_r = 0.0
    for c in range(n_classes):
        sq_r += float(right_counts[c]) * float(right_counts[c])

    best = -1.0
    best_thr = 0.0
    n_l = 0
    n_r = m
    for i in range(m - 1):
        c = labs[order[i]]
        sq_l += 2.0 * float(left_counts[c]) + 1.0
        sq_r -= 2.0 * float(right_counts[c]) - 1.0
        left_counts[c] += 1
        right_counts[c] -= 1
        n_l += 1
        n_r -= 1
        v = vals[order[i]]
        v_next = vals[order[i + 1]]
        if v_next > v:
            score = sq_l / n_l + sq_r / n_r
            if score > best:
                best = score
                best_thr = v + (v_next - v) / 2.0
    return best, best_thr


@njit(cache=True)
def grow_tree(X, y, n_classes, max_features, rand_ints):
    """Grow one tree to purity (or until no candidate feature splits).

    ``rand_ints`` supplies the feature-subset randomness: ``max_features``
    draws are consumed per split attempt, in node-creation order.  Returns
    (feature, threshold, left, right, counts, node_count); ``feature`` is -1
    at leaves.
    """
    n, d = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    counts = np.zeros((cap, n_classes), np.int64)

    indices = np.arange(n)
    tmp = np.empty(n, np.int64)
    order = np.empty(d, np.int64)

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    top = 1
    node_count = 1
    cursor = 0

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        m = end - start

        for i in range(start, end):
            counts[node, y[indices[i]]] += 1
        nonzero = 0
        for c in range(n_classes):
            if counts[node, c] > 0:
                nonzero += 1
        if nonzero <= 1 or m < 2:
            continue

        for j in range(d):
            order[j] = j
        k = max_features if max_features < d else d
        best_score = -1.0
        best_f = -1
        best_thr = 0.0
        for draw in range(k):
            r = rand_ints[cursor]
            cursor += 1
            j = draw + r % (d - draw)
            swap = order[draw]
            order[draw] = order[j]
            order[j] = swap
            f = order[draw]
            score, thr = _best_split(X, y, indices, start, end, f, counts[node], n_classes)
            if score > best_score:
                best_score = score
                best_f = f
                best_thr = thr
        if best_f < 0 or best_score < 0.0:
            continue  # all candidates constant: leaf with mixed counts

        lo = 0
        for i in range(start, end):
            if X[indices[i], best_f] <= best_thr:
                tmp[lo] = indices[i]
                lo += 1
        hi = lo
        for i in range(start, end):
            if X[indices[i], best_f] > best_thr:
                tmp[hi] = indices[i]
                hi += 1
        for i in range(m):
            indices[start + i] = tmp[i]

        feature[node] = best_f
        threshold[node] = best_thr
        left_id = node_count
        right_id = node_count + 1
        node_count += 2
        left[node] = left_id
        right[node] = right_id

        stack_node[top] = left_id
        stack_start[top] = start
        stack_end[top] = start + lo
        top += 1
        stack_node[top] = right_id
        stack_start[top] = start + lo
        stack_end[top] = end
        top += 1

    return feature, threshold, left, right, counts, node_count


@njit(cache=True)
def tree_votes(feature, threshold, left, right, counts, X, out):
    """Each row's vote: the majority class of its leaf (lowest id on ties)."""
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        best_c = 0
        best = counts[node, 0]
        for c in range(1, counts.shape[1]):
            if counts[node, c] > best:
                best = counts[node, c]
                best_c = c
        out[r] = best_c


def draws_needed(n_rows: int, max_features: int) -> int:
    """Upper bound on random ints grow_tree can consume for ``n_rows``."""
    return (2 * n_rows + 1) * max_features
