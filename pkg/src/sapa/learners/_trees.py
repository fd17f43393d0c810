"""Level-wise exact-greedy tree growth shared by the boosted and bagged learners.

Each feature keeps its own presorted list of active rows, partitioned so that
every open node owns one contiguous, still-sorted segment in every list.  A
node is split by sweeping its segment once per candidate feature and testing
every boundary between distinct values; the winning partition is then
applied stably to all lists.  Ties are resolved by the first candidate seen:
lowest feature index, then lowest threshold.

Two split criteria are supported:

* ``MODE_NEWTON`` - second-order boosting gain on (gradient, hessian) sums.
* ``MODE_GINI``   - weighted Gini decrease on (class-1 weight, total weight).
"""
import numpy as np
from numba import njit

MODE_NEWTON = 0
MODE_GINI = 1

# node arrays are stored column-wise in one float matrix to keep the numba
# return signature simple: feature, threshold, left, right, value, gain, cover
_FEAT, _THR, _LEFT, _RIGHT, _VALUE, _GAIN, _COVER = range(7)


def presort(X):
    """Per-feature stable row order and the matching sorted values, both (d, n)."""
    order = np.argsort(X, axis=0, kind="stable").T
    values = np.take_along_axis(X.T, order, axis=1)
    return np.ascontiguousarray(order.astype(np.int32)), np.ascontiguousarray(values)


@njit(cache=True)
def _score(mode, s1, s2, lam):
    if mode == MODE_NEWTON:
        return s1 * s1 / (s2 + lam)
    if s2 <= 0.0:
        return 0.0
    # negative weighted gini: sum_c w_c^2 / w  (larger is purer)
    return (s1 * s1 + (s2 - s1) * (s2 - s1)) / s2


@njit(cache=True)
def _leaf_value(mode, s1, s2, lam):
    if mode == MODE_NEWTON:
        return -s1 / (s2 + lam)
    if s2 <= 0.0 or s1 <= 1e-12 * s2:
        return 0.0
    # right-child sums come from subtraction; pure nodes snap to 0/1
    if s2 - s1 <= 1e-12 * s2:
        return 1.0
    return min(1.0, max(0.0, s1 / s2))


@njit(cache=True)
def _is_terminal(s1, s2, count):
    return count < 2 or s1 <= 1e-12 * s2 or (s2 - s1) <= 1e-12 * s2


@njit(cache=True, nogil=True)
def grow_tree(sorted_idx, sorted_x, stat1, stat2, active, feat_allowed, mode,
              max_depth, lam, min_child_weight, per_node_features, seed):
    """Grow one tree from presorted data (see ``presort``).

    ``stat1``/``stat2`` are per-row sufficient statistics already multiplied
    by the row weight; ``active`` flags rows taking part in this tree.
    ``feat_allowed`` masks features usable anywhere in the tree; when
    ``per_node_features`` > 0 each node draws that many of them at random.
    """
    d, n = sorted_x.shape
    stats = np.empty((n, 2))
    for r in range(n):
        stats[r, 0] = stat1[r]
        stats[r, 1] = stat2[r]
    if seed >= 0:
        np.random.seed(seed)

    n_active = 0
    tot1 = 0.0
    tot2 = 0.0
    for r in range(n):
        if active[r]:
            n_active += 1
            tot1 += stat1[r]
            tot2 += stat2[r]
    cap = 2 * n_active + 1
    nodes = np.zeros((cap, 7))
    for i in range(cap):
        nodes[i, _FEAT] = -1.0
        nodes[i, _LEFT] = -1.0
        nodes[i, _RIGHT] = -1.0
    nodes[0, _VALUE] = _leaf_value(mode, tot1, tot2, lam)
    nodes[0, _COVER] = tot2
    if n_active == 0:
        return nodes[:1].copy()

    allowed_idx = np.empty(d, dtype=np.int64)
    n_allowed = 0
    for f in range(d):
        if feat_allowed[f]:
            allowed_idx[n_allowed] = f
            n_allowed += 1

    idx = np.empty((d, n_active), dtype=np.int32)
    sx = np.empty((d, n_active))
    for a in range(n_allowed):
        f = allowed_idx[a]
        j = 0
        for t in range(n):
            r = sorted_idx[f, t]
            if active[r]:
                idx[f, j] = r
                sx[f, j] = sorted_x[f, t]
                j += 1
    tmp_idx = np.empty(n_active, dtype=np.int32)
    tmp_x = np.empty(n_active)
    goes_left = np.zeros(n, dtype=np.bool_)

    # frontier: node id, segment start, segment end, stat sums
    f_node = np.zeros(1, dtype=np.int64)
    f_start = np.zeros(1, dtype=np.int64)
    f_end = np.full(1, n_active, dtype=np.int64)
    f_s1 = np.array([tot1])
    f_s2 = np.array([tot2])
    n_nodes = 1
    use_subset = per_node_features > 0 and per_node_features < n_allowed
    n_try = per_node_features if use_subset else n_allowed
    cand = np.empty(n_allowed, dtype=np.int64)

    depth = 0
    while f_node.shape[0] > 0 and depth < max_depth:
        nf = f_node.shape[0]
        nxt_node = np.empty(2 * nf, dtype=np.int64)
        nxt_start = np.empty(2 * nf, dtype=np.int64)
        nxt_end = np.empty(2 * nf, dtype=np.int64)
        nxt_s1 = np.empty(2 * nf)
        nxt_s2 = np.empty(2 * nf)
        n_next = 0
        for k in range(nf):
            start = f_start[k]
            end = f_end[k]
            t1 = f_s1[k]
            t2 = f_s2[k]
            if end - start < 2:
                continue
            if mode == MODE_GINI and _is_terminal(t1, t2, end - start):
                # pure nodes stay leaves
                continue
            if use_subset:
                perm = np.random.permutation(n_allowed)
                for j in range(n_try):
                    cand[j] = allowed_idx[perm[j]]
                cand[:n_try].sort()
            else:
                for j in range(n_allowed):
                    cand[j] = allowed_idx[j]
            parent = _score(mode, t1, t2, lam)
            best_gain = -np.inf
            best_f = -1
            best_thr = 0.0
            best_nl = 0
            best_l1 = 0.0
            best_l2 = 0.0
            for c in range(n_try):
                f = cand[c]
                a1 = 0.0
                a2 = 0.0
                prev = sx[f, start]
                for t in range(start, end):
                    x = sx[f, t]
                    if x != prev:
                        r1 = t1 - a1
                        r2 = t2 - a2
                        if mode == MODE_NEWTON:
                            ok = a2 >= min_child_weight and r2 >= min_child_weight
                        else:
                            ok = a2 > 0.0 and r2 > 0.0
                        if ok:
                            gain = _score(mode, a1, a2, lam) + _score(mode, r1, r2, lam) - parent
                            if mode == MODE_NEWTON:
                                gain *= 0.5
                            if gain > best_gain:
                                thr = prev + (x - prev) * 0.5
                                if thr >= x:
                                    thr = prev
                                best_gain = gain
                                best_f = f
                                best_thr = thr
                                best_nl = t - start
                                best_l1 = a1
                                best_l2 = a2
                        prev = x
                    r = idx[f, t]
                    a1 += stats[r, 0]
                    a2 += stats[r, 1]
            if best_f < 0:
                continue
            if mode == MODE_NEWTON and best_gain <= 0.0:
                continue
            if mode == MODE_GINI and best_gain < 0.0:
                continue

            node = f_node[k]
            left = n_nodes
            right = n_nodes + 1
            n_nodes += 2
            nodes[node, _FEAT] = best_f
            nodes[node, _THR] = best_thr
            nodes[node, _GAIN] = best_gain
            nodes[node, _LEFT] = left
            nodes[node, _RIGHT] = right
            r1 = t1 - best_l1
            r2 = t2 - best_l2
            nodes[left, _VALUE] = _leaf_value(mode, best_l1, best_l2, lam)
            nodes[left, _COVER] = best_l2
            nodes[right, _VALUE] = _leaf_value(mode, r1, r2, lam)
            nodes[right, _COVER] = r2

            mid = start + best_nl
            nxt_node[n_next] = left
            nxt_start[n_next] = start
            nxt_end[n_next] = mid
            nxt_s1[n_next] = best_l1
            nxt_s2[n_next] = best_l2
            nxt_node[n_next + 1] = right
            nxt_start[n_next + 1] = mid
            nxt_end[n_next + 1] = end
            nxt_s1[n_next + 1] = r1
            nxt_s2[n_next + 1] = r2
            n_next += 2
            # children that can never split do not need sorted segments
            if depth + 1 >= max_depth:
                continue
            if mode == MODE_GINI and _is_terminal(best_l1, best_l2, best_nl) and _is_terminal(r1, r2, end - mid):
                continue
            for t in range(start, end):
                goes_left[idx[best_f, t]] = t < mid
            for a in range(n_allowed):
                f = allowed_idx[a]
                if f == best_f:
                    continue
                jl = start
                jr = 0
                for t in range(start, end):
                    r = idx[f, t]
                    if goes_left[r]:
                        idx[f, jl] = r
                        sx[f, jl] = sx[f, t]
                        jl += 1
                    else:
                        tmp_idx[jr] = r
                        tmp_x[jr] = sx[f, t]
                        jr += 1
                for j in range(jr):
                    idx[f, jl + j] = tmp_idx[j]
                    sx[f, jl + j] = tmp_x[j]
        f_node = nxt_node[:n_next]
        f_start = nxt_start[:n_next]
        f_end = nxt_end[:n_next]
        f_s1 = nxt_s1[:n_next]
        f_s2 = nxt_s2[:n_next]
        depth += 1

    return nodes[:n_nodes].copy()


@njit(cache=True, nogil=True)
def predict_tree(nodes, X, out, scale):
    """Add ``scale * leaf_value`` for every row of ``X`` into ``out``."""
    for i in range(X.shape[0]):
        node = 0
        while nodes[node, _LEFT] >= 0:
            if X[i, int(nodes[node, _FEAT])] <= nodes[node, _THR]:
                node = int(nodes[node, _LEFT])
            else:
                node = int(nodes[node, _RIGHT])
        out[i] += scale * nodes[node, _VALUE]


@njit(cache=True)
def apply_tree(nodes, X):
    leaves = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while nodes[node, _LEFT] >= 0:
            if X[i, int(nodes[node, _FEAT])] <= nodes[node, _THR]:
                node = int(nodes[node, _LEFT])
            else:
                node = int(nodes[node, _RIGHT])
        leaves[i] = node
    return leaves
