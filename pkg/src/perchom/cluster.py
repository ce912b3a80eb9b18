"""Open clusters, good cubes and the partition of good cubes.

Connectivity is computed with a union-find (path compression, union by
size).  Goodness of a triadic cube is checked exhaustively: every mid-scale
sub-cube of each successor is enumerated, so the check is capped at cubes of
side 81.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from .lattice import CubeDomain, TriadicCube, interior_boundary
from .percolation import ConductanceField

__all__ = [
    "ClusterLabels",
    "Partition",
    "SubcriticalSampleError",
    "GOOD",
    "BAD",
    "UNCHECKED",
    "GOODNESS_CAP",
    "union_find_clusters",
    "bfs_clusters",
    "restrict",
    "is_crossable",
    "is_crossing_cluster",
    "label_components",
    "partition_sets",
    "is_well_connected",
    "is_good_cube",
    "cube_maximal_cluster",
    "goodness_table",
    "build_partition",
    "partition_violations",
    "coarsen",
    "small_clusters",
]

GOOD, BAD, UNCHECKED = "good", "bad", "unchecked"
GOODNESS_CAP = 81


class SubcriticalSampleError(RuntimeError):
    """No good triadic cube exists in the domain."""


@dataclass(frozen=True, eq=False)
class ClusterLabels:
    """Per-vertex component labels; ``-1`` marks vertices without an open edge.

    A label is the smallest C-order flat index in its component.
    ``maximal_id`` is ``None`` when no open edge exists.
    """

    domain: CubeDomain
    labels: np.ndarray
    maximal_id: Optional[int]

    def maximal_mask(self) -> np.ndarray:
        if self.maximal_id is None:
            return np.zeros(self.domain.shape, dtype=bool)
        return self.labels == self.maximal_id

    @property
    def is_crossing(self) -> bool:
        """Does the maximal cluster touch all 2d faces of the domain?"""
        if self.maximal_id is None:
            return False
        mask = self.maximal_mask()
        d = self.domain.dim
        for ax in range(d):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[ax] = 0
            hi[ax] = -1
            if not (mask[tuple(lo)].any() and mask[tuple(hi)].any()):
                return False
        return True

    @property
    def maximal_size(self) -> int:
        return int(self.maximal_mask().sum())

    def component_ids(self) -> np.ndarray:
        return np.unique(self.labels[self.labels >= 0])

    @property
    def n_components(self) -> int:
        """Open components plus isolated vertices (each its own singleton)."""
        return int(self.component_ids().size + np.count_nonzero(self.labels < 0))

    def partition_sets(self) -> set:
        """Components as a set of frozensets of flat indices (singletons included)."""
        return partition_sets(self.labels)


def partition_sets(labels: np.ndarray) -> set:
    """Vertex partition encoded by a label array, as frozensets of flat indices."""
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    groups = {}
    for i in order:
        lab = flat[i]
        key = ("iso", int(i)) if lab < 0 else int(lab)
        groups.setdefault(key, []).append(int(i))
    return {frozenset(v) for v in groups.values()}


def label_components(values: np.ndarray) -> np.ndarray:
    """Union-find labels for an edge array on any box of equal sides (not only 3^m).

    Edges leaving the box are ignored.
    """
    values = np.asarray(values)
    d = values.shape[0]
    side = values.shape[1]
    if values.shape[1:] != (side,) * d:
        raise ValueError(f"expected a cube of edges, got shape {values.shape}")
    open_ = values > 0
    for j in range(d):
        idx = [j] + [slice(None)] * d
        idx[1 + j] = -1
        open_[tuple(idx)] = False
    flat = np.ascontiguousarray(open_.reshape(d, -1))
    return _kernels.component_labels(flat, side, d).reshape(values.shape[1:])


def _open_flat(values: np.ndarray) -> np.ndarray:
    d = values.shape[0]
    return np.ascontiguousarray((values > 0).reshape(d, -1))


def _choose_maximal(labels: np.ndarray, side: int, dim: int) -> Optional[int]:
    flat = labels.ravel()
    if not np.any(flat >= 0):
        return None
    ids, counts = np.unique(flat[flat >= 0], return_counts=True)
    crossing = set(_kernels.crossing_roots(flat, side, dim).tolist()) if side > 1 else set()
    best = None
    for lab, cnt in zip(ids.tolist(), counts.tolist()):
        key = (lab in crossing, cnt, -lab)
        if best is None or key > best[0]:
            best = (key, lab)
    return best[1]


def union_find_clusters(a: Union[ConductanceField, np.ndarray],
                        domain: Optional[CubeDomain] = None) -> ClusterLabels:
    """Components of the open subgraph; the maximal one is the largest crossing cluster.

    When no component touches all ``2d`` faces the largest component is used.
    """
    values = a.values if isinstance(a, ConductanceField) else np.asarray(a)
    if domain is None:
        domain = a.domain
    side, dim = domain.side, domain.dim
    labels = _kernels.component_labels(_open_flat(values), side, dim).reshape(domain.shape)
    return ClusterLabels(domain, labels, _choose_maximal(labels, side, dim))


def bfs_clusters(values: np.ndarray) -> set:
    """Breadth-first search reference for :func:`union_find_clusters` (partition sets)."""
    from collections import deque

    d = values.shape[0]
    shape = values.shape[1:]
    n = int(np.prod(shape))
    strides = [int(np.prod(shape[j + 1:])) for j in range(d)]
    open_ = (values > 0).reshape(d, -1)
    seen = np.zeros(n, dtype=bool)
    out = set()
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        comp = [s]
        queue = deque([s])
        while queue:
            x = queue.popleft()
            for j in range(d):
                pos = (x // strides[j]) % shape[j]
                nb = x + strides[j]
                if pos < shape[j] - 1 and open_[j, x] and not seen[nb]:
                    seen[nb] = True
                    comp.append(nb)
                    queue.append(nb)
                nb = x - strides[j]
                if pos > 0 and open_[j, nb] and not seen[nb]:
                    seen[nb] = True
                    comp.append(nb)
                    queue.append(nb)
        out.add(frozenset(comp))
    return out


CubeLike = Union[TriadicCube, Tuple[Sequence[int], int]]


def _cube_bounds(cube: CubeLike) -> Tuple[Tuple[int, ...], int]:
    if isinstance(cube, TriadicCube):
        return cube.base, cube.size
    base, size = cube
    return tuple(int(b) for b in base), int(size)


def restrict(values: np.ndarray, cube: CubeLike) -> np.ndarray:
    """Conductances of the edges with both endpoints in ``cube``, in the cube's own layout."""
    base, size = _cube_bounds(cube)
    d = values.shape[0]
    sl = tuple(slice(b, b + size) for b in base)
    if any(b < 0 or b + size > n for b, n in zip(base, values.shape[1:])):
        raise ValueError("cube does not lie inside the domain")
    out = np.array(values[(slice(None),) + sl])
    for j in range(d):
        idx = [j] + [slice(None)] * d
        idx[1 + j] = -1
        out[tuple(idx)] = 0.0
    return out


def _values(a) -> np.ndarray:
    return a.values if isinstance(a, ConductanceField) else np.asarray(a)


def _cube_labels(a, cube: CubeLike) -> Tuple[np.ndarray, int, int]:
    sub = restrict(_values(a), cube)
    d = sub.shape[0]
    size = sub.shape[1]
    return _kernels.component_labels(_open_flat(sub), size, d), size, d


def is_crossable(a, cube: CubeLike) -> bool:
    """Every pair of opposite faces of ``cube`` is joined by an open path inside it."""
    labels, size, d = _cube_labels(a, cube)
    if size == 1:
        return True
    c = np.stack(np.unravel_index(np.arange(size ** d), (size,) * d))
    for ax in range(d):
        low = set(labels[(c[ax] == 0) & (labels >= 0)].tolist())
        high = set(labels[(c[ax] == size - 1) & (labels >= 0)].tolist())
        if not low & high:
            return False
    return True


def is_crossing_cluster(a, cube: CubeLike, component: np.ndarray) -> bool:
    """``component`` (a vertex mask over the cube) is an open cluster meeting all 2d faces."""
    labels, size, d = _cube_labels(a, cube)
    comp = np.asarray(component, dtype=bool).ravel()
    if size == 1:
        return bool(comp.all())
    labs = np.unique(labels[comp])
    if labs.size != 1 or labs[0] < 0 or not np.array_equal(labels == labs[0], comp):
        return False
    return int(labs[0]) in set(_kernels.crossing_roots(labels, size, d).tolist())


def is_well_connected(a, cube: CubeLike, cap: int = GOODNESS_CAP) -> str:
    base, size = _cube_bounds(cube)
    if size > cap:
        return UNCHECKED
    sub = restrict(_values(a), (base, size))
    return GOOD if _kernels.well_connected(_open_flat(sub), size, sub.shape[0]) else BAD


def is_good_cube(a, cube: CubeLike, cap: int = GOODNESS_CAP) -> str:
    """``'good'``, ``'bad'`` or ``'unchecked'`` (side above ``cap``).

    Good means: side >= 3, a crossing cluster exists, and all 3^d successors
    are well-connected.
    """
    base, size = _cube_bounds(cube)
    if size < 3:
        return BAD
    if size > cap:
        return UNCHECKED
    values = _values(a)
    labels, _, d = _cube_labels(values, (base, size))
    if _kernels.crossing_roots(labels, size, d).size == 0:
        return BAD
    s = size // 3
    if s == 1:
        return GOOD
    for offs in itertools.product(range(3), repeat=d):
        sb = tuple(b + o * s for b, o in zip(base, offs))
        if is_well_connected(values, (sb, s), cap) != GOOD:
            return BAD
    return GOOD


def cube_maximal_cluster(a, cube: CubeLike) -> np.ndarray:
    """Vertex mask (over the cube) of its largest crossing cluster, or largest cluster."""
    labels, size, d = _cube_labels(a, cube)
    lab = _choose_maximal(labels.reshape((size,) * d), size, d)
    if lab is None:
        return np.zeros((size,) * d, dtype=bool)
    return (labels == lab).reshape((size,) * d)


def goodness_table(a: ConductanceField, cap: int = GOODNESS_CAP,
                   workers: int = 1) -> Dict[Tuple[int, Tuple[int, ...]], str]:
    """Goodness status of every triadic cube of level >= 1 in the domain."""
    domain = a.domain
    cubes = [c for n in range(1, domain.level + 1) for c in TriadicCube.all_at_level(domain, n)]

    def status(c):
        return is_good_cube(a.values, c, cap)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(status, cubes))
    else:
        results = [status(c) for c in cubes]
    return {(c.level, c.base): r for c, r in zip(cubes, results)}


@dataclass(eq=False)
class Partition:
    """Partition of the domain into good triadic cubes.

    ``levels[x]`` is the level ``n`` such that the partition cube containing
    ``x`` is the triadic cube of side ``3**n`` through ``x``.
    """

    domain: CubeDomain
    levels: np.ndarray
    goodness: Dict[Tuple[int, Tuple[int, ...]], str]
    flags: List[str] = field(default_factory=list)
    anchors: Optional[np.ndarray] = None

    def sizes(self) -> np.ndarray:
        return 3 ** self.levels

    def cube_at(self, x: Sequence[int]) -> TriadicCube:
        n = int(self.levels[tuple(x)])
        s = 3 ** n
        return TriadicCube(n, tuple((xi // s) * s for xi in x))

    def cubes(self) -> Iterator[TriadicCube]:
        """Distinct partition cubes, in C order of their base corner."""
        seen = set()
        for x in np.ndindex(*self.domain.shape):
            c = self.cube_at(x)
            if c not in seen:
                seen.add(c)
                yield c

    def is_good(self, cube: TriadicCube) -> bool:
        return self.goodness.get((cube.level, cube.base)) in (GOOD, UNCHECKED)


def _block_any(mask: np.ndarray, s: int) -> np.ndarray:
    """Per block of side ``s``: does any entry of ``mask`` hold?  Expanded back to full shape."""
    d = mask.ndim
    n = mask.shape[0] // s
    shaped = mask.reshape(sum(((n, s) for _ in range(d)), ()))
    red = shaped.any(axis=tuple(range(1, 2 * d, 2)))
    for ax in range(d):
        red = np.repeat(red, s, axis=ax)
    return red


def _neighbor_offsets(d: int) -> List[Tuple[int, ...]]:
    return [o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)]


def _shifted(arr: np.ndarray, off: Tuple[int, ...], fill) -> np.ndarray:
    """``out[x] = arr[x + off]`` with ``fill`` outside."""
    out = np.full_like(arr, fill)
    src, dst = [], []
    for o, n in zip(off, arr.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def build_partition(a: ConductanceField, labels: Optional[ClusterLabels] = None,
                    cap: int = GOODNESS_CAP, workers: int = 1) -> Partition:
    """Finest tiling by triadic cubes whose ancestors are all good, then smoothed.

    A cube is refined into its successors only when all of them are good.
    Afterwards, partition cubes adjacent (sup-distance 1) to a cube more than
    three times larger are merged into their predecessor until neighbouring
    sizes differ by at most a factor 3.  Cubes above ``cap`` cannot be checked
    and are assumed good; this is recorded in ``flags``.
    """
    domain = a.domain
    m, d = domain.level, domain.dim
    table = goodness_table(a, cap, workers)
    flags: List[str] = []
    if not any(v in (GOOD, UNCHECKED) for v in table.values()):
        raise SubcriticalSampleError("subcritical-looking sample: no good cube in the domain")
    top = table[(m, (0,) * d)]
    if top == UNCHECKED:
        flags.append("top-unchecked")
    levels = np.full(domain.shape, m, dtype=np.int64)
    if top == BAD:
        flags.append("top-bad")
    else:
        if any(v == UNCHECKED for (n, _), v in table.items() if n < m):
            flags.append("assumed-good-below-top")
        admissible = {(m, (0,) * d)}
        for n in range(m, 1, -1):
            s = 3 ** (n - 1)
            for cube in TriadicCube.all_at_level(domain, n):
                if (n, cube.base) not in admissible:
                    continue
                succ = list(cube.successors())
                if all(table[(c.level, c.base)] in (GOOD, UNCHECKED) for c in succ):
                    levels[cube.slices] = n - 1
                    admissible.update((c.level, c.base) for c in succ)
        _smooth_levels(levels, m)
    part = Partition(domain, levels, table, flags)
    part.anchors = _anchors(a, part, labels if labels is not None else union_find_clusters(a))
    return part


def _smooth_levels(levels: np.ndarray, m: int) -> None:
    offsets = _neighbor_offsets(levels.ndim)
    while True:
        too_small = np.zeros(levels.shape, dtype=bool)
        for off in offsets:
            too_small |= _shifted(levels, off, -1) >= levels + 2
        if not too_small.any():
            return
        for n in range(0, m):
            hit = too_small & (levels == n)
            if hit.any():
                grow = _block_any(hit, 3 ** (n + 1))
                levels[grow] = np.maximum(levels[grow], n + 1)


def _anchors(a: ConductanceField, part: Partition, labels: ClusterLabels) -> np.ndarray:
    """Flat index of the near-center vertex of each partition cube's maximal cluster.

    Candidates are restricted to the domain's maximal cluster; ties go to the
    lexicographically smallest vertex.  ``-1`` marks cubes with no candidate.
    """
    domain = part.domain
    big = labels.maximal_mask()
    anchors = np.full(domain.shape, -1, dtype=np.int64)
    flat_index = np.arange(domain.size).reshape(domain.shape)
    for cube in part.cubes():
        local = cube_maximal_cluster(a.values, cube) & big[cube.slices]
        if not local.any():
            continue
        idx = np.argwhere(local)
        center = (cube.size - 1) / 2.0
        dist2 = np.sum((idx - center) ** 2, axis=1)
        best = np.flatnonzero(dist2 == dist2.min())
        pick = idx[best[0]]
        anchors[cube.slices] = flat_index[cube.slices][tuple(pick)]
    return anchors


def partition_violations(part: Partition) -> List[str]:
    """Human-readable list of broken partition invariants (empty when all hold)."""
    out = []
    lv = part.levels
    d = lv.ndim
    for cube in part.cubes():
        if not np.all(lv[cube.slices] == cube.level):
            out.append(f"cube {cube} is not tiled consistently")
        c = cube
        while c.level <= part.domain.level:
            if not part.is_good(c):
                out.append(f"cube {cube} has a bad ancestor {c}")
                break
            if c.level == part.domain.level:
                break
            c = c.predecessor()
    for off in _neighbor_offsets(d):
        other = _shifted(lv, off, -1)
        bad = (other >= 0) & (np.abs(other - lv) > 1)
        if bad.any():
            out.append(f"neighbour sizes differ by more than 3 across offset {off}")
    return out


def coarsen(u: np.ndarray, part: Partition, boundary_zero: bool = False) -> np.ndarray:
    """``[u]_P``: constant on each partition cube, equal to ``u`` at the cube's anchor.

    With ``boundary_zero`` the cubes touching the domain boundary are set to 0.
    """
    if part.anchors is None:
        raise ValueError("partition carries no anchors")
    part.domain.check(u)
    anchors = part.anchors
    out = np.zeros(part.domain.shape)
    keep = np.ones(part.domain.shape, dtype=bool)
    if boundary_zero:
        _, bdry = interior_boundary(part.domain)
        for cube in part.cubes():
            if bdry[cube.slices].any():
                keep[cube.slices] = False
    if np.any(anchors[keep] < 0):
        raise ValueError("a partition cube has an empty maximal cluster")
    out[keep] = u.ravel()[anchors[keep]]
    return out


def small_clusters(a: ConductanceField, labels: ClusterLabels,
                   part: Optional[Partition] = None) -> Tuple[np.ndarray, bool]:
    """Union of open clusters touching the boundary other than the maximal one.

    Returns the vertex mask and whether it lies inside the union of partition
    cubes that touch the boundary (always ``True`` without a partition).
    """
    _, bdry = interior_boundary(labels.domain)
    labs = labels.labels
    touching = np.unique(labs[bdry & (labs >= 0)])
    if labels.maximal_id is not None:
        touching = touching[touching != labels.maximal_id]
    mask = np.isin(labs, touching)
    if part is None:
        return mask, True
    layer = np.zeros(labels.domain.shape, dtype=bool)
    for cube in part.cubes():
        if bdry[cube.slices].any():
            layer[cube.slices] = True
    return mask, bool(np.all(layer[mask]))
