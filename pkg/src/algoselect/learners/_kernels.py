"""Numba kernels for CART growth and prediction.

Trees are flat arrays: ``feature`` (-1 marks a leaf), ``threshold`` (go left
when ``x <= threshold``), ``left``, ``right`` and ``value`` with one row per
node (mean target for regression, weighted class counts for classification).

Randomness inside a tree (bootstrap draw, feature order per node) comes from
a splitmix64 sequence seeded by :func:`tree_seed`, so tree ``t`` of a forest
is the same whatever the total number of trees.
"""

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


@numba.njit(cache=True)
def _splitmix_next(state):
    """Advance ``state[0]`` and return the next 64-bit output."""
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _below(state, n):
    """Uniform integer in [0, n) from 53 random bits."""
    u = (_splitmix_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    k = int(u * n)
    return k if k < n else n - 1


def tree_seed(base: int, index: int) -> int:
    """splitmix64 finalizer of ``base + (index + 1) * golden``; pure Python, documented mixing."""
    z = (base + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@numba.njit(cache=True)
def presort(X):
    p = X.shape[1]
    order = np.empty((p, X.shape[0]), dtype=np.int64)
    for f in range(p):
        order[f] = np.argsort(X[:, f], kind="mergesort")
    return order


@numba.njit(cache=True)
def bootstrap_weights(m, seed):
    state = np.array([np.uint64(seed)], dtype=np.uint64)
    w = np.zeros(m)
    for _ in range(m):
        w[_below(state, m)] += 1.0
    return w


@numba.njit(cache=True)
def grow_tree(X, order, y, cls, n_classes, w, max_depth, min_leaf, n_try, seed):
    """Grow one CART tree.

    ``cls`` holds class indices (classification, ``n_classes > 0``) or is
    ignored (regression uses ``y``).  Rows with ``w == 0`` are left out.
    Returns ``(feature, threshold, left, right, value, n_nodes)``.
    """
    m, p = X.shape
    classify = n_classes > 0
    n_out = n_classes if classify else 1
    state = np.array([np.uint64(seed)], dtype=np.uint64)

    active = 0
    for i in range(m):
        if w[i] > 0:
            active += 1
    # per-feature sorted active rows; each node owns one segment in every row
    idx = np.empty((p, active), dtype=np.int64)
    for f in range(p):
        k = 0
        for j in range(m):
            r = order[f, j]
            if w[r] > 0:
                idx[f, k] = r
                k += 1

    cap = 2 * active + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, n_out))

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = active
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    goes_left = np.zeros(m, dtype=np.bool_)
    buf = np.empty(active, dtype=np.int64)
    perm = np.arange(p)
    counts_l = np.zeros(max(n_out, 1))
    counts_r = np.zeros(max(n_out, 1))

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]

        # node statistics
        W = 0.0
        S = 0.0
        for c in range(n_out):
            counts_r[c] = 0.0
        ymin = np.inf
        ymax = -np.inf
        for j in range(start, end):
            r = idx[0, j]
            W += w[r]
            if classify:
                counts_r[cls[r]] += w[r]
            else:
                S += w[r] * y[r]
                if y[r] < ymin:
                    ymin = y[r]
                if y[r] > ymax:
                    ymax = y[r]
        if classify:
            n_present = 0
            parent_score = 0.0
            for c in range(n_out):
                value[node, c] = counts_r[c]
                if counts_r[c] > 0:
                    n_present += 1
                parent_score += counts_r[c] * counts_r[c]
            parent_score /= W
            pure = n_present <= 1
        else:
            value[node, 0] = S / W
            parent_score = S * S / W
            pure = ymax == ymin

        if pure or (max_depth >= 0 and depth >= max_depth) or W < 2 * min_leaf:
            continue

        # feature order for this node: lazy Fisher-Yates over all features
        for f in range(p):
            perm[f] = f
        best_gain = 1e-12 * (abs(parent_score) + 1.0)
        best_f = -1
        best_thr = 0.0
        best_pos = -1
        tried = 0
        while tried < p:
            j = tried + _below(state, p - tried)
            tmp = perm[tried]
            perm[tried] = perm[j]
            perm[j] = tmp
            f = perm[tried]
            tried += 1

            WL = 0.0
            SL = 0.0
            sq_l = 0.0
            sq_r = 0.0
            if classify:
                for c in range(n_out):
                    counts_l[c] = 0.0
                    counts_r[c] = value[node, c]
                    sq_r += counts_r[c] * counts_r[c]
            for j in range(start, end - 1):
                r = idx[f, j]
                wr = w[r]
                WL += wr
                if classify:
                    c = cls[r]
                    sq_l += 2.0 * wr * counts_l[c] + wr * wr
                    sq_r += -2.0 * wr * counts_r[c] + wr * wr
                    counts_l[c] += wr
                    counts_r[c] -= wr
                else:
                    SL += wr * y[r]
                xa = X[r, f]
                xb = X[idx[f, j + 1], f]
                if xa == xb:
                    continue
                WR = W - WL
                if WL < min_leaf or WR < min_leaf:
                    continue
                if classify:
                    score = sq_l / WL + sq_r / WR
                else:
                    SR = S - SL
                    score = SL * SL / WL + SR * SR / WR
                gain = score - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_pos = j
                    thr = xa + (xb - xa) / 2.0
                    best_thr = thr if thr < xb else xa
            if best_f >= 0 and tried >= n_try:
                break

        if best_f < 0:
            continue

        # partition every feature's segment stably into left | right
        for j in range(start, end):
            r = idx[best_f, j]
            goes_left[r] = j <= best_pos
        n_left = best_pos - start + 1
        for f in range(p):
            a = start
            b = 0
            for j in range(start, end):
                r = idx[f, j]
                if goes_left[r]:
                    idx[f, a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for j in range(b):
                idx[f, a + j] = buf[j]

        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered first
        stack_node[top] = rnode
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lnode
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        n_nodes,
    )


@numba.njit(cache=True)
def grow_forest(X, order, y, cls, n_classes, max_depth, min_leaf, n_try, seeds, bootstrap):
    """Grow ``len(seeds)`` trees into padded ``(n_trees, cap)`` buffers."""
    m = X.shape[0]
    n_trees = seeds.size
    n_out = n_classes if n_classes > 0 else 1
    cap = 2 * m + 1
    F = np.full((n_trees, cap), -1, dtype=np.int64)
    T = np.zeros((n_trees, cap))
    L = np.full((n_trees, cap), -1, dtype=np.int64)
    R = np.full((n_trees, cap), -1, dtype=np.int64)
    V = np.zeros((n_trees, cap, n_out))
    sizes = np.zeros(n_trees, dtype=np.int64)
    for t in range(n_trees):
        if bootstrap:
            w = bootstrap_weights(m, seeds[t])
            tseed = np.uint64(seeds[t]) ^ _GOLDEN
        else:
            w = np.ones(m)
            tseed = np.uint64(seeds[t])
        f, th, l, r, v, k = grow_tree(X, order, y, cls, n_classes, w, max_depth, min_leaf, n_try, tseed)
        F[t, :k] = f
        T[t, :k] = th
        L[t, :k] = l
        R[t, :k] = r
        V[t, :k] = v
        sizes[t] = k
    return F, T, L, R, V, sizes


@numba.njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by every row of ``X``."""
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def forest_regress(X, F, T, L, R, V, n_use):
    out = np.zeros(X.shape[0])
    for t in range(n_use):
        leaves = apply_tree(X, F[t], T[t], L[t], R[t])
        for i in range(X.shape[0]):
            out[i] += V[t, leaves[i], 0]
    return out / n_use


@numba.njit(cache=True)
def forest_votes(X, F, T, L, R, V, n_use):
    """Hard votes per class; each tree votes its leaf's majority (lowest index on ties)."""
    n_classes = V.shape[2]
    votes = np.zeros((X.shape[0], n_classes))
    for t in range(n_use):
        leaves = apply_tree(X, F[t], T[t], L[t], R[t])
        for i in range(X.shape[0]):
            votes[i, np.argmax(V[t, leaves[i]])] += 1.0
    return votes
