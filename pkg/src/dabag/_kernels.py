"""Hot numeric kernels: batched k-NN selection and CART growing/traversal.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback
that executes the same arithmetic in the same order, so the two paths agree
bit for bit on the quantities they report.  The active path is chosen at
import time: numba is used when importable unless the environment variable
``DABAG_DISABLE_NUMBA`` is set to a truthy value (``1``, ``true``, ``yes``).
``use_numba()`` flips the path at runtime (used by tests and the benchmark).

Distance convention: squared Euclidean, accumulated feature-by-feature in
ascending feature order.  Neighbor ranking is lexicographic on
``(squared distance, tie)`` where ``tie`` is a caller-supplied array of
uniform draws; equal pairs fall back to ascending row index.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but stay importable
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _env_disabled() -> bool:
    return os.environ.get("DABAG_DISABLE_NUMBA", "").strip().lower() in {
        "1",
        "true",
        "yes",
        "on",
    }


_use_numba = NUMBA_AVAILABLE and not _env_disabled()


def numba_enabled() -> bool:
    """True when the compiled path is active."""
    return _use_numba


def use_numba(flag: bool) -> None:
    """Select the compiled (True) or pure-numpy (False) path."""
    global _use_numba
    if flag and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not available")
    _use_numba = bool(flag)


# ---------------------------------------------------------------------------
# k-NN selection
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _knn_query_nb(queries, ref, k, tie):
    m, p = queries.shape
    n = ref.shape[0]
    idx = np.empty((m, k), np.int64)
    d2s = np.empty((m, k), np.float64)
    for j in range(m):
        best_d = np.empty(k, np.float64)
        best_t = np.empty(k, np.float64)
        best_i = np.empty(k, np.int64)
        count = 0
        for i in range(n):
            d = 0.0
            for f in range(p):
                t = queries[j, f] - ref[i, f]
                d += t * t
            ti = tie[j, i]
            if count < k:
                pos = count
                count += 1
            elif d < best_d[k - 1] or (d == best_d[k - 1] and ti < best_t[k - 1]):
                pos = k - 1
            else:
                continue
            while pos > 0 and (
                d < best_d[pos - 1] or (d == best_d[pos - 1] and ti < best_t[pos - 1])
            ):
                best_d[pos] = best_d[pos - 1]
                best_t[pos] = best_t[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_t[pos] = ti
            best_i[pos] = i
        for r in range(k):
            idx[j, r] = best_i[r]
            d2s[j, r] = best_d[r]
    return idx, d2s


def _knn_query_np(queries, ref, k, tie):
    m, p = queries.shape
    n = ref.shape[0]
    d2 = np.zeros((m, n), np.float64)
    # feature-by-feature accumulation matches the jit kernel's summation order
    for f in range(p):
        diff = queries[:, f, None] - ref[None, :, f]
        d2 += diff * diff
    order = np.lexsort((tie, d2), axis=1)[:, :k]
    rows = np.arange(m)[:, None]
    return order, d2[rows, order]


def knn_query(queries: np.ndarray, ref: np.ndarray, k: int, tie: np.ndarray):
    """Indices and squared distances of each query's k nearest reference rows.

    Rows come back ordered by (squared distance, tie) ascending.  ``k`` must
    not exceed ``ref.shape[0]``; callers clamp and flag.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    tie = np.ascontiguousarray(tie, dtype=np.float64)
    if _use_numba:
        return _knn_query_nb(queries, ref, k, tie)
    return _knn_query_np(queries, ref, k, tie)


# ---------------------------------------------------------------------------
# CART growing
# ---------------------------------------------------------------------------
#
# Node arrays: feature[i] == -1 marks a leaf (left/right self-loop);
# otherwise rows with x[feature] <= threshold go left.  dist[i] is the class
# distribution of the training rows reaching node i.
#
# Split search: per feature, sort the node's rows by value; candidate
# thresholds are midpoints between consecutive distinct values with both
# sides >= min_leaf.  Cost is the size-weighted Gini impurity, computed from
# integer label counts as (nl - lsq/nl) + (nr - rsq/nr) so both backends
# produce identical floats.  Strict < comparisons keep the first (lowest
# feature, lowest threshold) of any cost tie.


@njit(cache=True, nogil=True)
def _tree_build_nb(x, y, n_classes, max_depth, min_leaf):
    n = x.shape[0]
    p = x.shape[1]
    max_leaves = max(1, n // min_leaf)
    cap = 2 * max_leaves - 1 if max_leaves > 1 else 1
    cap = max(cap, 1)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.zeros(cap, np.int64)
    right = np.zeros(cap, np.int64)
    dist = np.zeros((cap, n_classes), np.float64)

    idx = np.arange(n)
    tmp = np.empty(n, np.int64)
    # stack rows: node, lo, hi, depth
    stack = np.empty((cap, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        depth = stack[top, 3]
        sz = hi - lo

        counts = np.zeros(n_classes, np.int64)
        for i in range(lo, hi):
            counts[y[idx[i]]] += 1
        for c in range(n_classes):
            dist[node, c] = counts[c] / sz

        pure = False
        for c in range(n_classes):
            if counts[c] == sz:
                pure = True
        if depth >= max_depth or sz < 2 * min_leaf or pure or n_nodes + 2 > cap:
            feature[node] = -1
            left[node] = node
            right[node] = node
            continue

        sq = 0
        for c in range(n_classes):
            sq += counts[c] * counts[c]
        parent_cost = sz - sq / sz

        best_cost = np.inf
        best_f = -1
        best_thr = 0.0
        vals = np.empty(sz, np.float64)
        labs = np.empty(sz, np.int64)
        for f in range(p):
            for i in range(sz):
                vals[i] = x[idx[lo + i], f]
            order = np.argsort(vals)
            lcnt = np.zeros(n_classes, np.int64)
            lsq = 0
            rsq = sq
            for i in range(sz):
                labs[i] = y[idx[lo + order[i]]]
            svals = vals[order]
            for i in range(sz - 1):
                c = labs[i]
                lsq += 2 * lcnt[c] + 1
                rsq += -2 * (counts[c] - lcnt[c]) + 1
                lcnt[c] += 1
                nl = i + 1
                nr = sz - nl
                if svals[i] < svals[i + 1] and nl >= min_leaf and nr >= min_leaf:
                    cost = (nl - lsq / nl) + (nr - rsq / nr)
                    if cost < best_cost:
                        best_cost = cost
                        best_f = f
                        best_thr = (svals[i] + svals[i + 1]) / 2.0
        if best_f < 0 or not best_cost < parent_cost:
            feature[node] = -1
            left[node] = node
            right[node] = node
            continue

        # stable partition of idx[lo:hi] by x <= threshold
        nl = 0
        for i in range(lo, hi):
            if x[idx[i], best_f] <= best_thr:
                tmp[lo + nl] = idx[i]
                nl += 1
        nr = 0
        for i in range(lo, hi):
            if not (x[idx[i], best_f] <= best_thr):
                tmp[lo + nl + nr] = idx[i]
                nr += 1
        for i in range(lo, hi):
            idx[i] = tmp[i]

        feature[node] = best_f
        threshold[node] = best_thr
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild
        # right pushed first so the left child pops next (matches the fallback)
        stack[top, 0] = rchild
        stack[top, 1] = lo + nl
        stack[top, 2] = hi
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lchild
        stack[top, 1] = lo
        stack[top, 2] = lo + nl
        stack[top, 3] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        dist[:n_nodes].copy(),
    )


def _tree_build_np(x, y, n_classes, max_depth, min_leaf):
    n = x.shape[0]
    p = x.shape[1]
    feature = [-1]
    threshold = [0.0]
    left = [0]
    right = [0]
    dist = [np.zeros(n_classes)]
    idx = np.arange(n)
    stack = [(0, 0, n, 0)]
    eye = np.eye(n_classes, dtype=np.int64)

    while stack:
        node, lo, hi, depth = stack.pop()
        sz = hi - lo
        seg = idx[lo:hi]
        counts = np.bincount(y[seg], minlength=n_classes).astype(np.int64)
        dist[node] = counts / sz
        if depth >= max_depth or sz < 2 * min_leaf or counts.max() == sz:
            feature[node] = -1
            left[node] = node
            right[node] = node
            continue

        sq = int(np.sum(counts * counts))
        parent_cost = sz - sq / sz

        best_cost = np.inf
        best_f = -1
        best_thr = 0.0
        nl = np.arange(1, sz, dtype=np.int64)
        nr = sz - nl
        for f in range(p):
            vals = x[seg, f]
            order = np.argsort(vals)
            svals = vals[order]
            onehot = eye[y[seg][order]]
            lcnt = np.cumsum(onehot, axis=0)[:-1]
            lsq = np.sum(lcnt * lcnt, axis=1)
            rcnt = counts[None, :] - lcnt
            rsq = np.sum(rcnt * rcnt, axis=1)
            cost = (nl - lsq / nl) + (nr - rsq / nr)
            valid = (svals[:-1] < svals[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
            if not valid.any():
                continue
            cost = np.where(valid, cost, np.inf)
            i = int(np.argmin(cost))
            if cost[i] < best_cost:
                best_cost = cost[i]
                best_f = f
                best_thr = (svals[i] + svals[i + 1]) / 2.0
        if best_f < 0 or not best_cost < parent_cost:
            feature[node] = -1
            left[node] = node
            right[node] = node
            continue

        go_left = x[seg, best_f] <= best_thr
        idx[lo:hi] = np.concatenate([seg[go_left], seg[~go_left]])
        n_left = int(go_left.sum())

        feature[node] = best_f
        threshold[node] = best_thr
        lchild = len(feature)
        rchild = lchild + 1
        left[node] = lchild
        right[node] = rchild
        for _ in range(2):
            feature.append(-1)
            threshold.append(0.0)
            left.append(0)
            right.append(0)
            dist.append(np.zeros(n_classes))
        left[lchild] = lchild
        right[lchild] = lchild
        left[rchild] = rchild
        right[rchild] = rchild
        stack.append((rchild, lo + n_left, hi, depth + 1))
        stack.append((lchild, lo, lo + n_left, depth + 1))

    return (
        np.asarray(feature, np.int64),
        np.asarray(threshold, np.float64),
        np.asarray(left, np.int64),
        np.asarray(right, np.int64),
        np.vstack(dist),
    )


def tree_build(x, y, n_classes, max_depth, min_leaf):
    """Grow a Gini CART over rows of x with 0-based labels y.

    Returns (feature, threshold, left, right, dist) node arrays.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if _use_numba:
        return _tree_build_nb(x, y, n_classes, max_depth, min_leaf)
    return _tree_build_np(x, y, n_classes, max_depth, min_leaf)


@njit(cache=True, nogil=True)
def _tree_apply_nb(feature, threshold, left, right, x):
    m = x.shape[0]
    out = np.empty(m, np.int64)
    for j in range(m):
        node = 0
        while feature[node] >= 0:
            if x[j, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[j] = node
    return out


def _tree_apply_np(feature, threshold, left, right, x):
    m = x.shape[0]
    node = np.zeros(m, np.int64)
    rows = np.arange(m)
    # leaves self-loop, so one hop per level of the deepest path suffices
    while True:
        f = feature[node]
        active = f >= 0
        if not active.any():
            return node
        fv = x[rows, np.maximum(f, 0)]
        nxt = np.where(fv <= threshold[node], left[node], right[node])
        node = np.where(active, nxt, node)


def tree_apply(feature, threshold, left, right, x) -> np.ndarray:
    """Leaf node index reached by each row of x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _use_numba:
        return _tree_apply_nb(feature, threshold, left, right, x)
    return _tree_apply_np(feature, threshold, left, right, x)


def warmup() -> None:
    """Trigger jit compilation of all kernels (no-op on the numpy path)."""
    if not _use_numba:
        return
    q = np.zeros((2, 2))
    r = np.array([[0.0, 0.0], [1.0, 1.0]])
    t = np.zeros((2, 2))
    knn_query(q, r, 1, t)
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([0, 1, 0, 1])
    nodes = tree_build(x, y, 2, 2, 1)
    tree_apply(*nodes[:4], x)
