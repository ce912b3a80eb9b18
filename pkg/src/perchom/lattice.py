"""Cube domains of Z^d and the two discrete calculus systems.

Fields are dense numpy arrays indexed by local vertex coordinates, axis 0
first (C order).  A vertex with local index ``i`` sits at the lattice point
``center + i - (side - 1) // 2``.

Edge fields and vector fields share one storage layout: an array of shape
``(d, side, ..., side)`` whose entry ``[j, x]`` belongs to the edge
``(x, x + e_j)``.  For an edge field this is the value ``F(x, x + e_j)``
(antisymmetry gives ``F(x + e_j, x)``); for a vector field it is the
``j``-th component at ``x``.  Entries whose edge leaves the domain are 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

__all__ = [
    "CubeDomain",
    "TriadicCube",
    "interior_boundary",
    "distance_to_boundary",
    "linear_function",
    "translate",
    "gradient",
    "finite_difference",
    "finite_difference_conj",
    "fd_gradient",
    "fd_divergence",
    "edge_divergence",
    "laplacian",
    "edge_mask",
    "inner",
    "edge_inner",
    "norm",
    "lp_norm",
    "edge_modulus",
    "grad_norm",
    "edge_mask_for",
    "heat_kernel_1d",
    "convolve_separable",
    "heat_kernel_convolve",
    "TRACE_CONSTANT",
    "trace_sides",
]

# C(d) in the boundary-layer trace bound; the constant field is extremal and
# approaches 2d from below (empirical sweep over d = 2, 3 and m <= 4)
TRACE_CONSTANT = {2: 4.0, 3: 6.0}


@dataclass(frozen=True)
class CubeDomain:
    """The lattice cube ``center + (-3^m/2, 3^m/2)^d``."""

    dim: int
    level: int
    center: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        if self.level < 1:
            raise ValueError(f"level must be >= 1, got {self.level}")
        if not self.center:
            object.__setattr__(self, "center", (0,) * self.dim)
        if len(self.center) != self.dim:
            raise ValueError("center has the wrong number of coordinates")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def side(self) -> int:
        return 3 ** self.level

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def size(self) -> int:
        return self.side ** self.dim

    @property
    def half(self) -> int:
        return (self.side - 1) // 2

    def coords(self, axis: int) -> np.ndarray:
        """Absolute lattice coordinate along ``axis``, broadcastable to ``shape``."""
        c = np.arange(self.side) - self.half + self.center[axis]
        view = [1] * self.dim
        view[axis] = self.side
        return c.reshape(view)

    def vertices(self) -> np.ndarray:
        """All absolute vertex coordinates, shape ``(size, d)``, row-major."""
        grids = np.meshgrid(*[np.arange(self.side) - self.half + c for c in self.center],
                            indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def check(self, u: np.ndarray, *, vector: bool = False) -> None:
        expected = ((self.dim,) + self.shape) if vector else self.shape
        if u.shape != expected:
            raise ValueError(f"field shape {u.shape} does not match domain {expected}")


@dataclass(frozen=True)
class TriadicCube:
    """A triadic sub-cube of a :class:`CubeDomain`, in local coordinates.

    ``base`` is the local index of the lowest corner and is a multiple of
    ``3**level`` on every axis.
    """

    level: int
    base: Tuple[int, ...]

    @property
    def size(self) -> int:
        return 3 ** self.level

    @property
    def slices(self) -> Tuple[slice, ...]:
        return tuple(slice(b, b + self.size) for b in self.base)

    def predecessor(self) -> "TriadicCube":
        s = 3 ** (self.level + 1)
        return TriadicCube(self.level + 1, tuple((b // s) * s for b in self.base))

    def successors(self) -> Iterator["TriadicCube"]:
        if self.level == 0:
            return
        s = 3 ** (self.level - 1)
        for offs in np.ndindex(*(3,) * len(self.base)):
            yield TriadicCube(self.level - 1, tuple(b + o * s for b, o in zip(self.base, offs)))

    def contains(self, other: "TriadicCube") -> bool:
        if other.level > self.level:
            return False
        return all(b <= ob < b + self.size for b, ob in zip(self.base, other.base))

    def disjoint(self, other: "TriadicCube") -> bool:
        return not (self.contains(other) or other.contains(self))

    @staticmethod
    def all_at_level(domain: CubeDomain, level: int) -> Iterator["TriadicCube"]:
        s = 3 ** level
        n = domain.side // s
        for idx in np.ndindex(*(n,) * domain.dim):
            yield TriadicCube(level, tuple(i * s for i in idx))


def interior_boundary(domain: CubeDomain) -> Tuple[np.ndarray, np.ndarray]:
    """Masks of ``int(V)`` (all 2d neighbours in V) and ``V \\ int(V)``."""
    interior = np.zeros(domain.shape, dtype=bool)
    interior[(slice(1, -1),) * domain.dim] = True
    return interior, ~interior


def distance_to_boundary(domain: CubeDomain) -> np.ndarray:
    """Sup-norm distance from each vertex to the boundary vertex set."""
    i = np.arange(domain.side)
    d1 = np.minimum(i, domain.side - 1 - i)
    out = np.full(domain.shape, domain.side, dtype=np.int64)
    for axis in range(domain.dim):
        view = [1] * domain.dim
        view[axis] = domain.side
        out = np.minimum(out, d1.reshape(view))
    return out


def linear_function(domain: CubeDomain, p: Sequence[float]) -> np.ndarray:
    """``l_p(x) = p . x`` in absolute coordinates."""
    out = np.zeros(domain.shape)
    for axis, pj in enumerate(p):
        if pj:
            out = out + pj * domain.coords(axis)
    return np.broadcast_to(out, domain.shape).copy()


def _shift(u: np.ndarray, axis: int, step: int) -> np.ndarray:
    """``(T_{step e_axis} u)(x) = u(x + step e_axis)`` with zero extension."""
    out = np.zeros_like(u)
    n = u.shape[axis]
    src = [slice(None)] * u.ndim
    dst = [slice(None)] * u.ndim
    if step >= 0:
        src[axis] = slice(step, n)
        dst[axis] = slice(0, n - step)
    else:
        src[axis] = slice(0, n + step)
        dst[axis] = slice(-step, n)
    out[tuple(dst)] = u[tuple(src)]
    return out


def translate(u: np.ndarray, h: Sequence[int]) -> np.ndarray:
    """``T_h u`` with ``u`` extended by zero outside the domain."""
    out = u
    for axis, step in enumerate(h):
        if step:
            out = _shift(out, axis, int(step))
    return out.copy() if out is u else out


def edge_mask(domain: CubeDomain) -> np.ndarray:
    """Boolean ``(d, ...)`` array marking the edges ``(x, x+e_j)`` inside the domain."""
    m = np.ones((domain.dim,) + domain.shape, dtype=bool)
    for j in range(domain.dim):
        idx = [j] + [slice(None)] * domain.dim
        idx[1 + j] = -1
        m[tuple(idx)] = False
    return m


def gradient(u: np.ndarray) -> np.ndarray:
    """Edge gradient ``u(y) - u(x)`` on every in-domain edge ``(x, x+e_j)``."""
    d = u.ndim
    out = np.zeros((d,) + u.shape)
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, -1)
        hi[j] = slice(1, None)
        out[(j,) + tuple(lo)] = u[tuple(hi)] - u[tuple(lo)]
    return out


def finite_difference(u: np.ndarray, j: int) -> np.ndarray:
    """``D_{e_j} u = T_{e_j} u - u`` with zero extension."""
    return _shift(u, j, 1) - u


def finite_difference_conj(u: np.ndarray, j: int) -> np.ndarray:
    """``D*_{e_j} u = T_{-e_j} u - u`` with zero extension."""
    return _shift(u, j, -1) - u


def fd_gradient(u: np.ndarray) -> np.ndarray:
    return np.stack([finite_difference(u, j) for j in range(u.ndim)])


def fd_divergence(F: np.ndarray) -> np.ndarray:
    """``D* . F = sum_j D*_{e_j} F_j``."""
    out = np.zeros(F.shape[1:])
    for j in range(F.shape[0]):
        out += finite_difference_conj(F[j], j)
    return out


def edge_divergence(F: np.ndarray) -> np.ndarray:
    """``(div F)(x) = sum_{y ~ x} F(x, y)`` for an antisymmetric edge field."""
    out = np.zeros(F.shape[1:])
    for j in range(F.shape[0]):
        out += F[j] - _shift(F[j], j, -1)
    return out


def laplacian(u: np.ndarray) -> np.ndarray:
    """``Delta u(x) = sum_{y ~ x} (u(y) - u(x))`` over in-domain neighbours only."""
    return edge_divergence(gradient(u))


def inner(u: np.ndarray, v: np.ndarray, region: Optional[np.ndarray] = None) -> float:
    """``<u, v>_V``; ``region`` is a vertex mask (whole domain by default)."""
    if u.shape != v.shape:
        raise ValueError(f"mismatched fields {u.shape} vs {v.shape}")
    prod = u * v
    if region is not None:
        prod = prod[region]
    return float(np.sum(prod))


def edge_inner(F: np.ndarray, G: np.ndarray, edges: Optional[np.ndarray] = None) -> float:
    """``<F, G>_E`` summed once per unoriented edge."""
    if F.shape != G.shape:
        raise ValueError(f"mismatched fields {F.shape} vs {G.shape}")
    prod = F * G
    if edges is not None:
        prod = prod[edges]
    return float(np.sum(prod))


def norm(u: np.ndarray, region: Optional[np.ndarray] = None) -> float:
    return math.sqrt(inner(u, u, region))


def edge_modulus(F: np.ndarray) -> np.ndarray:
    """``|F|(x) = (1/2 sum_{y~x} F(x,y)^2)^(1/2)`` for an edge field."""
    sq = F * F
    out = np.zeros(F.shape[1:])
    for j in range(F.shape[0]):
        out += sq[j] + _shift(sq[j], j, -1)
    return np.sqrt(0.5 * out)


def lp_norm(f: np.ndarray, p: float = 2.0, region: Optional[np.ndarray] = None, *,
            kind: str = "scalar", average: bool = False) -> float:
    """L^p norm of a scalar, vector (``kind='vector'``) or edge field (``kind='edge'``)."""
    if kind == "scalar":
        mod = np.abs(f)
    elif kind == "vector":
        mod = np.sqrt(np.sum(f * f, axis=0))
    elif kind == "edge":
        mod = edge_modulus(f)
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    if region is not None:
        mod = mod[region]
    total = float(np.sum(mod ** p))
    if average:
        total /= mod.size
    return total ** (1.0 / p)


def grad_norm(v: np.ndarray, a: Optional[np.ndarray] = None,
              region: Optional[np.ndarray] = None) -> float:
    """``||grad v 1_{a != 0}||_{L^2(V)}``: the sum runs over edges with both ends in V.

    ``a`` is a conductance array in edge layout; without it every edge counts.
    """
    g = gradient(v)
    keep = edge_mask_for(v.shape, region)
    if a is not None:
        keep &= a != 0
    return math.sqrt(float(np.sum(g[keep] ** 2)))


def edge_mask_for(shape: Tuple[int, ...], region: Optional[np.ndarray]) -> np.ndarray:
    """Edges ``(x, x+e_j)`` inside the domain with both endpoints in ``region``."""
    d = len(shape)
    keep = np.zeros((d,) + tuple(shape), dtype=bool)
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, -1)
        hi[j] = slice(1, None)
        if region is None:
            keep[(j,) + tuple(lo)] = True
        else:
            keep[(j,) + tuple(lo)] = region[tuple(lo)] & region[tuple(hi)]
    return keep


def heat_kernel_1d(R: float) -> np.ndarray:
    """Sampled 1D factor of ``Phi_R(x) ~ exp(-|x|^2 / 4R^2)`` on ``[-ceil(6R), ceil(6R)]``.

    The d-dimensional kernel is the outer product of this factor with
    itself, so normalising the factor to unit sum gives unit mass.
    """
    if R < 0.5:
        raise ValueError(f"heat kernel scale must be >= 0.5, got {R}")
    r = int(math.ceil(6.0 * R))
    x = np.arange(-r, r + 1, dtype=float)
    w = np.exp(-x * x / (4.0 * R * R))
    return w / w.sum()


def convolve_separable(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Convolve every axis of ``u`` with the symmetric 1D weights ``w``, zero extension."""
    out = np.asarray(u, dtype=float)
    for axis in range(out.ndim):
        out = ndimage.convolve1d(out, w, axis=axis, mode="constant", cval=0.0)
    return out


def heat_kernel_convolve(u: np.ndarray, R: float) -> np.ndarray:
    """``Phi_R * u`` with the truncated, renormalised discrete kernel."""
    return convolve_separable(u, heat_kernel_1d(R))


def trace_sides(u: np.ndarray, K: int) -> Tuple[float, float]:
    """Both sides of the trace bound for the layer ``dist(x, boundary) <= K``.

    Returns ``(||u 1_layer||^2, C(d) (K+1) (3^-m ||u||^2 + ||u|| ||grad u||))``.
    """
    domain = CubeDomain(u.ndim, int(round(math.log(u.shape[0], 3))))
    domain.check(u)
    layer = distance_to_boundary(domain) <= K
    nu = norm(u)
    rhs = TRACE_CONSTANT[u.ndim] * (K + 1) * (nu * nu / domain.side + nu * grad_norm(u))
    return norm(u, layer) ** 2, rhs
