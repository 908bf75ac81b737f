"""Compiled kernels for the regression forest and the lasso path.

All randomness is pre-drawn by the caller into fixed pools, so the kernels
are pure functions and a reference implementation can replay the exact same
trees from the recorded pools.
"""

import numpy as np
from numba import njit

# Sentinel for "no depth limit"; any real tree is far shallower.
UNLIMITED_DEPTH = 1 << 30


def max_nodes_for(n, min_leaf):
    # Every leaf holds >= min_leaf bootstrap rows, so a tree on n rows has
    # at most n // min_leaf leaves and 2 * leaves - 1 nodes total.
    return 2 * max(n // max(min_leaf, 1), 1) + 1


@njit(cache=True)
def grow_trees(x, y, boot_pool, feat_pool, min_leaf, max_depth,
               feature, threshold, left, right, value):
    """Grow all trees of a forest into preallocated node arrays.

    x: (n, p) covariates; y: (n,) response.
    boot_pool: (T, n) bootstrap row indices per tree.
    feat_pool: (T, max_nodes, mtry) candidate feature ids per node slot;
        slot index equals the node id, which is assigned in creation order
        (a split creates left = next_id, right = next_id + 1, and the left
        subtree is processed before the right one).
    Outputs feature/threshold/left/right/value: (T, max_nodes); feature -1
    marks a leaf. Returns the per-tree node counts.
    """
    n_trees = boot_pool.shape[0]
    n = boot_pool.shape[1]
    counts = np.zeros(n_trees, np.int64)
    idx = np.empty(n, np.int64)
    tmp = np.empty(n, np.int64)
    vals = np.empty(n, np.float64)
    max_nodes = feature.shape[1]
    stack_id = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_dep = np.empty(max_nodes, np.int64)
    mtry = feat_pool.shape[2]

    for t in range(n_trees):
        for i in range(n):
            idx[i] = boot_pool[t, i]
        n_nodes = 1
        top = 0
        stack_id[0] = 0
        stack_lo[0] = 0
        stack_hi[0] = n
        stack_dep[0] = 0
        while top >= 0:
            nid = stack_id[top]
            lo = stack_lo[top]
            hi = stack_hi[top]
            dep = stack_dep[top]
            top -= 1
            m = hi - lo
            s = 0.0
            for i in range(lo, hi):
                s += y[idx[i]]
            value[t, nid] = s / m
            feature[t, nid] = -1
            if dep >= max_depth or m < 2 * min_leaf:
                continue
            sse = 0.0
            for i in range(lo, hi):
                d = y[idx[i]] - value[t, nid]
                sse += d * d
            if sse <= 0.0:
                continue
            # Variance-reduction split search over the node's feature draw.
            # Strictly-greater comparison keeps the first best candidate in
            # (feature slot order, ascending split position).
            best_gain = 0.0
            best_f = -1
            best_thr = 0.0
            base = s * s / m
            for fpos in range(mtry):
                f = feat_pool[t, nid, fpos]
                for i in range(m):
                    vals[i] = x[idx[lo + i], f]
                order = np.argsort(vals[:m])
                s1 = 0.0
                for j in range(1, m):
                    s1 += y[idx[lo + order[j - 1]]]
                    if j < min_leaf or m - j < min_leaf:
                        continue
                    vl = vals[order[j - 1]]
                    vr = vals[order[j]]
                    if vr <= vl:
                        continue
                    gain = s1 * s1 / j + (s - s1) * (s - s1) / (m - j) - base
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = vl + 0.5 * (vr - vl)
            if best_f < 0:
                continue
            # Partition the node's rows in place: left gets x[.,f] <= thr.
            nl = 0
            nr = 0
            for i in range(lo, hi):
                if x[idx[i], best_f] <= best_thr:
                    idx[lo + nl] = idx[i]
                    nl += 1
                else:
                    tmp[nr] = idx[i]
                    nr += 1
            for i in range(nr):
                idx[lo + nl + i] = tmp[i]
            feature[t, nid] = best_f
            threshold[t, nid] = best_thr
            lid = n_nodes
            rid = n_nodes + 1
            n_nodes += 2
            left[t, nid] = lid
            right[t, nid] = rid
            # Push right first so the left child is processed (and creates
            # its children) before the right child.
            top += 1
            stack_id[top] = rid
            stack_lo[top] = lo + nl
            stack_hi[top] = hi
            stack_dep[top] = dep + 1
            top += 1
            stack_id[top] = lid
            stack_lo[top] = lo
            stack_hi[top] = lo + nl
            stack_dep[top] = dep + 1
        counts[t] = n_nodes
    return counts


@njit(cache=True)
def forest_predict(xq, feature, threshold, left, right, value):
    """Average the per-tree leaf means for each query row."""
    n_trees = feature.shape[0]
    nq = xq.shape[0]
    out = np.zeros(nq, np.float64)
    for t in range(n_trees):
        for i in range(nq):
            nid = 0
            while feature[t, nid] >= 0:
                if xq[i, feature[t, nid]] <= threshold[t, nid]:
                    nid = left[t, nid]
                else:
                    nid = right[t, nid]
            out[i] += value[t, nid]
    inv = 1.0 / n_trees
    for i in range(nq):
        out[i] *= inv
    return out


@njit(cache=True)
def lasso_path(xs, yc, colsq, lambdas, tol, max_sweeps):
    """Cyclic coordinate descent over a decreasing lambda grid.

    xs: (n, p) centered/scaled covariates; yc: (n,) centered response;
    colsq[j] = x_j' x_j / n (0 marks a constant column, which stays at 0).
    Objective per lambda: (1/2n) ||yc - xs b||^2 + lambda * ||b||_1.
    Warm-started along the grid; a sweep stops when the largest coefficient
    change is below tol or after max_sweeps sweeps.
    Returns (L, p) coefficients on the scaled covariates.
    """
    n, p = xs.shape
    n_lam = lambdas.shape[0]
    out = np.zeros((n_lam, p), np.float64)
    beta = np.zeros(p, np.float64)
    r = yc.copy()
    for li in range(n_lam):
        lam = lambdas[li]
        for _ in range(max_sweeps):
            max_delta = 0.0
            for j in range(p):
                if colsq[j] <= 0.0:
                    continue
                bj = beta[j]
                s = 0.0
                for i in range(n):
                    s += xs[i, j] * r[i]
                rho = s / n + colsq[j] * bj
                if rho > lam:
                    nb = (rho - lam) / colsq[j]
                elif rho < -lam:
                    nb = (rho + lam) / colsq[j]
                else:
                    nb = 0.0
                d = nb - bj
                if d != 0.0:
                    for i in range(n):
                        r[i] -= d * xs[i, j]
                    beta[j] = nb
                    ad = abs(d)
                    if ad > max_delta:
                        max_delta = ad
            if max_delta < tol:
                break
        for j in range(p):
            out[li, j] = beta[j]
    return out
