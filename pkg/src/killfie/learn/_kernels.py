"""Compiled inner loops for CART and the linear SVM."""
from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1
_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True)
def _splitmix(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True)
def _choose_features(p, k, state, scratch):
    """Partial Fisher-Yates: ``k`` distinct features, returned ascending."""
    for i in range(p):
        scratch[i] = i
    for i in range(k):
        state, r = _splitmix(state)
        j = i + np.int64(r % np.uint64(p - i))
        tmp = scratch[i]
        scratch[i] = scratch[j]
        scratch[j] = tmp
    return state, np.sort(scratch[:k].copy())


@njit(cache=True)
def build_tree(X, y, rows, max_depth, min_leaf, max_features, seed):
    """Grow a binary Gini CART over ``rows`` (duplicates allowed).

    ``max_depth < 0`` means unlimited. Returns parallel node arrays
    (feature, threshold, left, right, n_pos, n_total); leaves have feature -1.
    Ties between equally good splits go to the lowest feature index, then the
    lowest threshold.
    """
    n_rows = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, LEAF, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    n_pos = np.zeros(cap, np.int64)
    n_tot = np.zeros(cap, np.int64)

    work = rows.copy()
    # stack of (node, start, end, depth) over slices of ``work``
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_rows
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    state = np.uint64(seed)
    scratch = np.empty(p, np.int64)
    vals = np.empty(n_rows)
    labs = np.empty(n_rows, np.int64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        n = end - start
        pos = 0
        for t in range(start, end):
            pos += y[work[t]]
        n_pos[node] = pos
        n_tot[node] = n
        if pos == 0 or pos == n or n < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        if max_features >= p:
            feats = np.arange(p)
        else:
            state, feats = _choose_features(p, max_features, state, scratch)

        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        tol = 1e-12 * n
        for fi in range(feats.shape[0]):
            f = feats[fi]
            for t in range(n):
                vals[t] = X[work[start + t], f]
            order = np.argsort(vals[:n], kind="mergesort")
            for t in range(n):
                labs[t] = y[work[start + order[t]]]
            lp = 0
            for t in range(n - 1):
                lp += labs[t]
                nl = t + 1
                if nl < min_leaf:
                    continue
                nr = n - nl
                if nr < min_leaf:
                    break
                a = vals[order[t]]
                b = vals[order[t + 1]]
                if not (a < b):
                    continue
                rp = pos - lp
                score = lp * (nl - lp) / nl + rp * (nr - rp) / nr
                if score < best_score - tol:
                    best_score = score
                    best_f = f
                    mid = 0.5 * (a + b)
                    best_thr = mid if mid < b else a
        if best_f < 0:
            continue

        # partition work[start:end] so rows with x <= thr come first
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[work[lo], best_f] <= best_thr:
                lo += 1
            else:
                tmp = work[lo]
                work[lo] = work[hi]
                work[hi] = tmp
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        # push right first so the left subtree is numbered/expanded first
        st_node[sp] = r_node
        st_start[sp] = lo
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = l_node
        st_start[sp] = start
        st_end[sp] = lo
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), n_pos[:n_nodes].copy(), n_tot[:n_nodes].copy())


@njit(cache=True)
def tree_leaf_positive(X, feature, threshold, left, right, n_pos, n_tot):
    """Per row: 1 if the reached leaf has a positive majority (ties -> 0)."""
    out = np.empty(X.shape[0], np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = 1 if 2 * n_pos[node] > n_tot[node] else 0
    return out


@njit(cache=True)
def pegasos(X, y_pm, lam, epochs, perms):
    """Pegasos stochastic subgradient descent on the L2-regularised hinge loss.

    ``perms[e]`` is the visiting order for epoch ``e``; step size is
    ``1 / (lam * t)``. The iterate with the lowest objective seen at an epoch
    boundary is kept, so the returned history (objective of the kept iterate
    after each epoch) never increases. ``raw`` holds the objective of the
    running iterate itself.
    """
    n, p = X.shape
    w = np.zeros(p)
    best_w = w.copy()
    best = hinge_objective(X, y_pm, w, lam)
    objective = np.empty(epochs)
    raw = np.empty(epochs)
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for e in range(epochs):
        for s in range(n):
            i = perms[e, s]
            t += 1
            eta = 1.0 / (lam * t)
            margin = 0.0
            for j in range(p):
                margin += w[j] * X[i, j]
            shrink = 1.0 - eta * lam
            if y_pm[i] * margin < 1.0:
                for j in range(p):
                    w[j] = shrink * w[j] + eta * y_pm[i] * X[i, j]
            else:
                for j in range(p):
                    w[j] = shrink * w[j]
            norm = 0.0
            for j in range(p):
                norm += w[j] * w[j]
            norm = np.sqrt(norm)
            if norm > radius:
                for j in range(p):
                    w[j] *= radius / norm
        raw[e] = hinge_objective(X, y_pm, w, lam)
        if raw[e] <= best:
            best = raw[e]
            best_w[:] = w
        objective[e] = best
    return best_w, objective, raw


@njit(cache=True)
def hinge_objective(X, y_pm, w, lam):
    n, p = X.shape
    loss = 0.0
    for i in range(n):
        m = 0.0
        for j in range(p):
            m += w[j] * X[i, j]
        m = 1.0 - y_pm[i] * m
        if m > 0:
            loss += m
    sq = 0.0
    for j in range(p):
        sq += w[j] * w[j]
    return 0.5 * lam * sq + loss / n
