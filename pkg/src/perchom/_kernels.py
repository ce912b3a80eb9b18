"""Compiled connectivity kernels on flattened cubes.

A cube of side ``t`` in dimension ``d`` is flattened in C order; ``open_``
has shape ``(d, t**d)`` and ``open_[j, i]`` tells whether the edge from
vertex ``i`` to its ``+e_j`` neighbour is open.  Edges leaving the cube must
already be closed.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True, nogil=True)
def _union(parent, size, i, j):
    ri = _find(parent, i)
    rj = _find(parent, j)
    if ri == rj:
        return
    if size[ri] < size[rj]:
        ri, rj = rj, ri
    parent[rj] = ri
    size[ri] += size[rj]


@njit(cache=True, nogil=True)
def component_labels(open_, side, dim):
    """Label of each vertex = smallest flat index in its open component, -1 if isolated."""
    n = side ** dim
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    has_edge = np.zeros(n, dtype=np.bool_)
    for j in range(dim):
        stride = side ** (dim - 1 - j)
        for i in range(n):
            if open_[j, i]:
                _union(parent, size, i, i + stride)
                has_edge[i] = True
                has_edge[i + stride] = True
    smallest = np.full(n, n, dtype=np.int64)
    for i in range(n):
        r = _find(parent, i)
        if i < smallest[r]:
            smallest[r] = i
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        if has_edge[i]:
            labels[i] = smallest[_find(parent, i)]
        else:
            labels[i] = -1
    return labels


@njit(cache=True, nogil=True)
def _unflatten(flat, k, dim, out):
    for ax in range(dim - 1, -1, -1):
        out[ax] = flat % k
        flat //= k


@njit(cache=True, nogil=True)
def crossing_roots(labels, side, dim):
    """Labels (>= 0) of components touching all 2d faces of the cube; sentinel -1 ignored.

    A cube of side 1 is its own crossing cluster, reported with label 0 even
    though the vertex carries no edge.
    """
    n = side ** dim
    if side == 1:
        return np.zeros(1, dtype=np.int64)
    faces = np.zeros(n, dtype=np.int64)
    c = np.empty(dim, dtype=np.int64)
    for i in range(n):
        lab = labels[i]
        if lab < 0:
            continue
        _unflatten(i, side, dim, c)
        for ax in range(dim):
            if c[ax] == 0:
                faces[lab] |= 1 << (2 * ax)
            if c[ax] == side - 1:
                faces[lab] |= 1 << (2 * ax + 1)
    full = (1 << (2 * dim)) - 1
    count = 0
    for i in range(n):
        if faces[i] == full:
            count += 1
    out = np.empty(count, dtype=np.int64)
    count = 0
    for i in range(n):
        if faces[i] == full:
            out[count] = i
            count += 1
    return out


@njit(cache=True, nogil=True)
def _subcube_scan(open_, t, dim, origin, k, in_c, parent, size, lo, hi, mark, check_conn):
    """Crossability of the sub-cube of side ``k`` at ``origin``; optionally condition (2).

    Returns 0 if not crossable, 1 if crossable but some large component misses
    the reference cluster ``in_c``, 2 if both conditions hold.
    """
    nk = k ** dim
    c = np.empty(dim, dtype=np.int64)
    gidx = np.empty(nk, dtype=np.int64)
    for l in range(nk):
        parent[l] = l
        size[l] = 1
        _unflatten(l, k, dim, c)
        g = 0
        for ax in range(dim):
            g = g * t + origin[ax] + c[ax]
        gidx[l] = g
    for j in range(dim):
        lstride = k ** (dim - 1 - j)
        for l in range(nk):
            _unflatten(l, k, dim, c)
            if c[j] < k - 1 and open_[j, gidx[l]]:
                _union(parent, size, l, l + lstride)
    # crossability along each axis
    for ax in range(dim):
        for l in range(nk):
            mark[l] = 0
        for l in range(nk):
            _unflatten(l, k, dim, c)
            if c[ax] == 0:
                mark[_find(parent, l)] = 1
        crossed = False
        for l in range(nk):
            _unflatten(l, k, dim, c)
            if c[ax] == k - 1 and mark[_find(parent, l)] == 1:
                crossed = True
                break
        if not crossed:
            return 0
    if not check_conn:
        return 2
    # condition (2): every component of sup-diameter >= t/10 meets the reference cluster
    for l in range(nk):
        mark[l] = 0
        for ax in range(dim):
            lo[l, ax] = k
            hi[l, ax] = -1
    for l in range(nk):
        r = _find(parent, l)
        _unflatten(l, k, dim, c)
        for ax in range(dim):
            if c[ax] < lo[r, ax]:
                lo[r, ax] = c[ax]
            if c[ax] > hi[r, ax]:
                hi[r, ax] = c[ax]
        if in_c[gidx[l]]:
            mark[r] = 1
    for l in range(nk):
        if parent[l] != l:
            continue
        diam = 0
        for ax in range(dim):
            e = hi[l, ax] - lo[l, ax]
            if e > diam:
                diam = e
        if 10 * diam >= t and mark[l] == 0:
            return 1
    return 2


@njit(cache=True, nogil=True)
def well_connected(open_, t, dim):
    """Exhaustive well-connectedness test of a cube of side ``t``."""
    labels = component_labels(open_, t, dim)
    roots = crossing_roots(labels, t, dim)
    if roots.shape[0] == 0:
        return False
    kmin = (t + 9) // 10
    kmax = t // 2
    if kmin < 1:
        kmin = 1
    if kmax < kmin:
        return True
    nmax = kmax ** dim
    parent = np.empty(nmax, dtype=np.int64)
    size = np.empty(nmax, dtype=np.int64)
    lo = np.empty((nmax, dim), dtype=np.int64)
    hi = np.empty((nmax, dim), dtype=np.int64)
    mark = np.empty(nmax, dtype=np.int64)
    origin = np.empty(dim, dtype=np.int64)
    n = t ** dim
    # (3/4) of the convex hull [0, t-1]^d, kept in doubled coordinates to stay integral
    center2 = t - 1
    for r in range(roots.shape[0]):
        in_c = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            in_c[i] = labels[i] == roots[r]
        ok = True
        for k in range(kmin, kmax + 1):
            span = t - k + 1
            for flat in range(span ** dim):
                _unflatten(flat, span, dim, origin)
                hits = True
                for ax in range(dim):
                    # sub-cube [o, o+k-1] meets [c - h, c + h] with h = 3(t-1)/8
                    if 8 * (2 * (origin[ax] + k - 1) - center2) < -3 * 2 * (t - 1):
                        hits = False
                    if 8 * (2 * origin[ax] - center2) > 3 * 2 * (t - 1):
                        hits = False
                if not hits:
                    continue
                res = _subcube_scan(open_, t, dim, origin, k, in_c, parent, size, lo, hi,
                                    mark, True)
                if res == 0:
                    return False
                if res == 1:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return True
    return False
