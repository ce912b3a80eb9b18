"""I.i.d. random conductances and the local mask operations."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .lattice import CubeDomain, edge_mask

if TYPE_CHECKING:
    from .cluster import ClusterLabels

__all__ = [
    "PercolationLaw",
    "ConductanceField",
    "sample",
    "mask_to_cluster",
    "field_lambda",
    "ell",
    "ell_width",
    "hash_uniform",
]

# Rough bond-percolation thresholds used only to warn.
_PC_WARN = {2: 0.5, 3: 0.2488}


@dataclass(frozen=True)
class PercolationLaw:
    """Law of one conductance: open with probability ``p_open``.

    Open edges carry 1 (``kind='bernoulli'``) or a uniform value in
    ``[1/lambda_ell, 1]`` (``kind='uniform'``).
    """

    p_open: float
    lambda_ell: float = 2.0
    kind: str = "bernoulli"

    def __post_init__(self):
        if not 0.0 <= self.p_open <= 1.0:
            raise ValueError(f"p_open must lie in [0, 1], got {self.p_open}")
        if self.lambda_ell <= 1.0:
            raise ValueError(f"ellipticity must exceed 1, got {self.lambda_ell}")
        if self.kind not in ("bernoulli", "uniform"):
            raise ValueError(f"unknown conductance law {self.kind!r}")

    def warn_if_subcritical(self, dim: int) -> None:
        if self.p_open == 0.0:
            warnings.warn("p_open = 0: every edge is closed", RuntimeWarning, stacklevel=3)
        elif self.p_open <= _PC_WARN.get(dim, 0.0):
            warnings.warn(f"p_open = {self.p_open} is not above the critical value in d={dim}",
                          RuntimeWarning, stacklevel=3)


@dataclass(frozen=True, eq=False)
class ConductanceField:
    """Conductances ``a(x, x+e_j)`` stored in edge layout ``values[j, x]``."""

    domain: CubeDomain
    values: np.ndarray
    law: PercolationLaw
    seed: int

    def __post_init__(self):
        self.domain.check(self.values, vector=True)
        self.values.setflags(write=False)

    @property
    def open(self) -> np.ndarray:
        return self.values > 0

    def with_values(self, values: np.ndarray) -> "ConductanceField":
        return ConductanceField(self.domain, np.asarray(values, dtype=float), self.law, self.seed)


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_OFFSET = np.uint64(1 << 40)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, coords: np.ndarray, stream: int = 0) -> np.ndarray:
    """Uniform [0, 1) numbers that are a pure function of ``(seed, stream, coords)``.

    ``coords`` has shape ``(k, ...)``; one number is produced per trailing index.
    """
    with np.errstate(over="ignore"):
        h = _mix(np.full(coords.shape[1:], np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        h = _mix(h ^ np.uint64(stream))
        for c in coords:
            h = _mix(h ^ (c.astype(np.int64).astype(np.uint64) + _OFFSET))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def sample(domain: CubeDomain, law: PercolationLaw, seed: int) -> ConductanceField:
    """Draw every in-domain edge independently from a hash of its absolute coordinates.

    Because the draw for edge ``(x, x+e_j)`` depends only on ``(seed, j, x)``,
    a sub-cube sampled with the same seed agrees with the parent's sample.
    """
    law.warn_if_subcritical(domain.dim)
    d = domain.dim
    grids = np.meshgrid(*[np.arange(domain.side) - domain.half + c for c in domain.center],
                        indexing="ij")
    values = np.zeros((d,) + domain.shape)
    inside = edge_mask(domain)
    for j in range(d):
        coords = np.stack([np.full(domain.shape, j)] + list(grids))
        u = hash_uniform(seed, coords, stream=0)
        is_open = u < law.p_open
        if law.kind == "bernoulli":
            vals = np.where(is_open, 1.0, 0.0)
        else:
            w = hash_uniform(seed, coords, stream=1)
            lo = 1.0 / law.lambda_ell
            vals = np.where(is_open, lo + (1.0 - lo) * w, 0.0)
        values[j] = np.where(inside[j], vals, 0.0)
    return ConductanceField(domain, values, law, int(seed))


def mask_to_cluster(a: ConductanceField, labels: "ClusterLabels",
                    which: str = "maximal") -> ConductanceField:
    """``a_C(x, y) = a(x, y)`` if both endpoints lie in the maximal cluster, else 0.

    In a finite cube the maximal cluster also serves as the proxy for the
    infinite cluster, so ``which='infinite-proxy'`` gives the same field.
    """
    if which not in ("maximal", "infinite-proxy"):
        raise ValueError(f"unknown cluster choice {which!r}")
    if labels.domain != a.domain:
        raise ValueError("labels and conductances live on different domains")
    inside = labels.maximal_mask()
    d = a.domain.dim
    out = np.array(a.values)
    for j in range(d):
        both = inside & np.roll(inside, -1, axis=j)
        out[j] = np.where(both, out[j], 0.0)
    return a.with_values(out)


def field_lambda(labels: "ClusterLabels", lam: float) -> np.ndarray:
    """``lambda`` on the maximal cluster, 0 elsewhere."""
    m = labels.domain.level
    if lam != 0 and not (3.0 ** (-m) < lam < 0.5):
        warnings.warn(f"lambda = {lam} lies outside (3^-m, 1/2)", RuntimeWarning, stacklevel=2)
    return np.where(labels.maximal_mask(), float(lam), 0.0)


def ell(lam: float, dim: int) -> float:
    """Boundary-layer width: ``sqrt(log(1 + 1/lambda))`` in d = 2, 1 above."""
    if dim == 2:
        return math.sqrt(math.log1p(1.0 / lam))
    return 1.0


def ell_width(lam: float, dim: int) -> int:
    """:func:`ell` rounded up to an integer lattice width >= 1."""
    return max(1, math.ceil(ell(lam, dim) - 1e-12))
