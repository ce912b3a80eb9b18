"""Discrete elliptic operators and their solvers.

Two operator kinds act on fields over a cube, always with zero Dirichlet
data on the boundary:

* heterogeneous: ``lam(x)^2 u(x) + sum_y a(x,y) (u(x) - u(y))``;
* homogenized:   ``lam(x)^2 u(x) - abar * Delta u(x)`` on the full lattice.

Only interior rows carry the equation; boundary rows act as the identity.
Conjugate gradient handles the heterogeneous kind, a factor-3 geometric
multigrid the constant-coefficient Laplacian, and a dense LU solve serves as
the test oracle.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .lattice import CubeDomain, interior_boundary, laplacian

__all__ = [
    "OperatorSpec",
    "SolveReport",
    "heterogeneous",
    "homogenized",
    "apply",
    "neg_div_a_grad",
    "operator_matrix",
    "active_mask",
    "cg_solve",
    "multigrid_poisson",
    "dense_direct",
    "MAX_DENSE",
]

MAX_DENSE = 10_000


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    kind: str
    domain: CubeDomain
    lam_field: np.ndarray
    conductance: Optional[np.ndarray] = None
    abar: float = 1.0

    def __post_init__(self):
        if self.kind not in ("heterogeneous", "homogenized"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        self.domain.check(self.lam_field)
        if self.kind == "heterogeneous":
            if self.conductance is None:
                raise ValueError("heterogeneous operator needs conductances")
            self.domain.check(self.conductance, vector=True)
        elif not self.abar > 0:
            raise ValueError(f"effective conductance must be positive, got {self.abar}")


def heterogeneous(a, lam_field=None) -> OperatorSpec:
    """``(lam^2 - div a grad)`` from a :class:`ConductanceField` or raw edge array."""
    values = getattr(a, "values", a)
    domain = a.domain if hasattr(a, "domain") else None
    if domain is None:
        raise ValueError("pass a ConductanceField or use OperatorSpec directly")
    lam = np.zeros(domain.shape) if lam_field is None else np.asarray(lam_field, dtype=float)
    return OperatorSpec("heterogeneous", domain, lam, np.asarray(values, dtype=float))


def homogenized(domain: CubeDomain, abar: float, lam_field=None) -> OperatorSpec:
    lam = np.zeros(domain.shape) if lam_field is None else np.asarray(lam_field, dtype=float)
    return OperatorSpec("homogenized", domain, lam, abar=float(abar))


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float
    history: List[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "wall_time": self.wall_time,
        }


def neg_div_a_grad(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``-div(a grad u)(x) = sum_y a(x,y) (u(x) - u(y))`` at every vertex, in-domain edges only."""
    a = np.asarray(getattr(a, "values", a))
    out = np.zeros(u.shape)
    d = u.ndim
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, -1)
        hi[j] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        flux = a[(j,) + lo] * (u[hi] - u[lo])
        out[lo] -= flux
        out[hi] += flux
    return out


def _edge_part(spec: OperatorSpec, u: np.ndarray) -> np.ndarray:
    if spec.kind == "homogenized":
        return -spec.abar * laplacian(u)
    return neg_div_a_grad(spec.conductance, u)


def apply(spec: OperatorSpec, u: np.ndarray) -> np.ndarray:
    """Stencil application: the operator on interior rows, identity on the boundary."""
    spec.domain.check(u)
    out = spec.lam_field ** 2 * u + _edge_part(spec, u)
    _, bdry = interior_boundary(spec.domain)
    out[bdry] = u[bdry]
    return out


def operator_matrix(spec: OperatorSpec) -> sp.csr_matrix:
    """Sparse matrix of :func:`apply` (C-order vertex numbering)."""
    domain = spec.domain
    n = domain.size
    d = domain.dim
    idx = np.arange(n).reshape(domain.shape)
    rows, cols, vals = [], [], []
    diag = (spec.lam_field ** 2).ravel().copy()
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, -1)
        hi[j] = slice(1, None)
        i0 = idx[tuple(lo)].ravel()
        i1 = idx[tuple(hi)].ravel()
        if spec.kind == "homogenized":
            w = np.full(i0.size, spec.abar)
        else:
            w = spec.conductance[(j,) + tuple(lo)].ravel()
        np.add.at(diag, i0, w)
        np.add.at(diag, i1, w)
        rows += [i0, i1]
        cols += [i1, i0]
        vals += [-w, -w]
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    _, bdry = interior_boundary(domain)
    b = bdry.ravel()
    keep = sp.diags((~b).astype(float))
    A = keep @ A + sp.diags(b.astype(float))
    A.eliminate_zeros()
    return A.tocsr()


def active_mask(spec: OperatorSpec) -> np.ndarray:
    """Interior vertices where the operator is nondegenerate (unknowns of the solve)."""
    interior, _ = interior_boundary(spec.domain)
    if spec.kind == "homogenized":
        return interior
    a = spec.conductance
    touched = np.zeros(spec.domain.shape, dtype=bool)
    d = spec.domain.dim
    for j in range(d):
        openj = a[j] > 0
        touched |= openj
        shifted = np.zeros_like(openj)
        sl_dst = [slice(None)] * d
        sl_src = [slice(None)] * d
        sl_dst[j] = slice(1, None)
        sl_src[j] = slice(0, -1)
        shifted[tuple(sl_dst)] = openj[tuple(sl_src)]
        touched |= shifted
    return interior & (touched | (spec.lam_field > 0))


def _active_system(spec: OperatorSpec) -> Tuple[np.ndarray, sp.csr_matrix]:
    act = active_mask(spec).ravel()
    A = operator_matrix(spec)
    return act, A[act][:, act].tocsr()


def cg_solve(spec: OperatorSpec, rhs: np.ndarray, tol: float = 1e-8,
             max_iter: Optional[int] = None, x0: Optional[np.ndarray] = None,
             diagonal_scaling: bool = False,
             callback: Optional[Callable[[np.ndarray], None]] = None,
             ) -> Tuple[np.ndarray, SolveReport]:
    """Conjugate gradient on the active unknowns with zero boundary values.

    Inactive vertices (boundary, and interior vertices the operator does not
    see) are set to 0.  ``rhs`` is read on the active set only.  The stopping
    test is ``||b - A x|| <= tol * ||b||`` on that set.  Exceeding
    ``max_iter`` returns a non-converged report; a non-positive curvature
    ``p.Ap`` raises :class:`numpy.linalg.LinAlgError`.

    ``callback`` receives the full-domain iterate after every step.
    """
    t0 = time.perf_counter()
    domain = spec.domain
    domain.check(rhs)
    if max_iter is None:
        max_iter = 20 * domain.side
    act, A = _active_system(spec)
    b = rhs.ravel()[act]
    x = np.zeros(b.size) if x0 is None else x0.ravel()[act].astype(float)
    out = np.zeros(domain.size)

    def full(v):
        out[:] = 0.0
        out[act] = v
        return out.reshape(domain.shape).copy()

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        rep = SolveReport(0, 0.0, True, time.perf_counter() - t0)
        return np.zeros(domain.shape), rep
    minv = None
    if diagonal_scaling:
        dg = A.diagonal()
        minv = np.where(dg > 0, 1.0 / np.where(dg > 0, dg, 1.0), 1.0)
    r = b - A @ x
    z = r * minv if minv is not None else r
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / bnorm]
    it = 0
    converged = history[-1] <= tol
    while not converged and it < max_iter:
        Ap = A @ p
        curv = float(p @ Ap)
        if curv <= 0.0:
            raise np.linalg.LinAlgError("conjugate gradient breakdown: operator is not positive")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if callback is not None:
            callback(full(x))
        if rel <= tol:
            converged = True
            break
        z = r * minv if minv is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    final = float(np.linalg.norm(b - A @ x)) / bnorm
    rep = SolveReport(it, final, converged and final <= tol * 1.0001 + 1e-15,
                      time.perf_counter() - t0, history)
    return full(x), rep


# --- geometric multigrid ---------------------------------------------------------------

def _prolong_1d(fine_pos: np.ndarray, coarse_pos: np.ndarray, wall: int) -> sp.csr_matrix:
    """Linear interpolation from coarse nodes (plus zero walls at 0 and ``wall``)."""
    pts = np.concatenate(([0], coarse_pos, [wall]))
    rows, cols, vals = [], [], []
    for i, x in enumerate(fine_pos):
        k = np.searchsorted(pts, x, side="right") - 1
        k = min(k, len(pts) - 2)
        x0, x1 = pts[k], pts[k + 1]
        t = (x - x0) / (x1 - x0)
        for node, w in ((k, 1.0 - t), (k + 1, t)):
            if 1 <= node <= len(coarse_pos) and w != 0.0:
                rows.append(i)
                cols.append(node - 1)
                vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(fine_pos), len(coarse_pos)))


def _laplacian_matrix_1d(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def _kron_all(mats) -> sp.csr_matrix:
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M)
    return out.tocsr()


@dataclass
class _Level:
    A: sp.csr_matrix
    dinv: np.ndarray
    P: Optional[sp.csr_matrix]  # prolongation from the next coarser level


@lru_cache(maxsize=8)
def _hierarchy(dim: int, m: int) -> Tuple[List[_Level], Tuple]:
    """Galerkin hierarchy for ``-Delta`` on the interior of a cube of side ``3^m``."""
    N = 3 ** m
    wall = N - 1
    positions = [np.arange(1, N - 1)]
    for k in range(m - 1, 0, -1):
        s = 3 ** (m - k)
        positions.append(s * np.arange(3 ** k) + (s - 1) // 2)
    n0 = N - 2
    L1 = _laplacian_matrix_1d(n0)
    eye = sp.identity(n0, format="csr")
    A = None
    for j in range(dim):
        term = _kron_all([L1 if i == j else eye for i in range(dim)])
        A = term if A is None else A + term
    levels = []
    for idx in range(len(positions)):
        P = None
        if idx + 1 < len(positions):
            P1 = _prolong_1d(positions[idx], positions[idx + 1], wall)
            P = _kron_all([P1] * dim)
        A = A.tocsr()
        levels.append(_Level(A, 1.0 / A.diagonal(), P))
        if P is not None:
            A = (P.T @ A @ P).tocsr()
    coarse = scipy.linalg.cho_factor(levels[-1].A.toarray())
    return levels, coarse


def _vcycle(levels, coarse, k: int, b: np.ndarray, x: np.ndarray,
            nu: int, omega: float) -> np.ndarray:
    lev = levels[k]
    if k == len(levels) - 1:
        return scipy.linalg.cho_solve(coarse, b)
    A = lev.A
    for _ in range(nu):
        x = x + omega * lev.dinv * (b - A @ x)
    r = b - A @ x
    ec = _vcycle(levels, coarse, k + 1, lev.P.T @ r, np.zeros(lev.P.shape[1]), nu, omega)
    x = x + lev.P @ ec
    for _ in range(nu):
        x = x + omega * lev.dinv * (b - A @ x)
    return x


def multigrid_poisson(abar: float, rhs: np.ndarray, tol: float = 1e-8, max_cycles: int = 50,
                      domain: Optional[CubeDomain] = None, nu: int = 3,
                      omega: float = 0.8, accelerate: bool = True) -> Tuple[np.ndarray, SolveReport]:
    """Solve ``-abar Delta u = rhs`` on the interior, ``u = 0`` on the boundary.

    V-cycles on the triadic hierarchy: every coarse node sits at the centre of
    a block of 3^d fine cells; prolongation is d-linear interpolation with
    zero walls, restriction its transpose, coarse operators are Galerkin
    products, smoothing is damped Jacobi and the 3^d coarsest system is
    factorised once.  With ``accelerate`` (default) each V-cycle serves as
    the preconditioner of one conjugate-gradient step; otherwise plain
    stationary V-cycles are run.  ``SolveReport.iterations`` counts V-cycles.
    """
    t0 = time.perf_counter()
    if not abar > 0:
        raise ValueError(f"effective conductance must be positive, got {abar}")
    rhs = np.asarray(rhs, dtype=float)
    dim = rhs.ndim
    N = rhs.shape[0]
    m = int(round(math.log(N, 3)))
    if 3 ** m != N or any(s != N for s in rhs.shape):
        raise ValueError(f"multigrid needs a cube of side 3^m, got shape {rhs.shape}")
    if domain is not None:
        domain.check(rhs)
    inner = (slice(1, -1),) * dim
    b = rhs[inner].ravel() / abar
    u = np.zeros(rhs.shape)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return u, SolveReport(0, 0.0, True, time.perf_counter() - t0)
    if m == 1:
        u[inner] = (b / (2.0 * dim)).reshape((1,) * dim)
        return u, SolveReport(1, 0.0, True, time.perf_counter() - t0, [0.0])
    levels, coarse = _hierarchy(dim, m)
    A = levels[0].A

    def vcycle(r):
        return _vcycle(levels, coarse, 0, r, np.zeros(r.size), nu, omega)

    x = np.zeros(b.size)
    history = [1.0]
    cycles = 0
    rel = 1.0
    if accelerate:
        # the V-cycle is symmetric positive, so it preconditions conjugate gradient
        r = b.copy()
        z = vcycle(r)
        p = z.copy()
        rz = float(r @ z)
        while rel > tol and cycles < max_cycles:
            Ap = A @ p
            alpha = rz / float(p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            cycles += 1
            rel = float(np.linalg.norm(r)) / bnorm
            history.append(rel)
            if rel <= tol or cycles == max_cycles:
                break
            z = vcycle(r)
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        rel = float(np.linalg.norm(b - A @ x)) / bnorm
    else:
        while rel > tol and cycles < max_cycles:
            x = x + vcycle(b - A @ x)
            cycles += 1
            rel = float(np.linalg.norm(b - A @ x)) / bnorm
            history.append(rel)
    u[inner] = x.reshape((N - 2,) * dim)
    return u, SolveReport(cycles, rel, rel <= tol, time.perf_counter() - t0, history)


def dense_direct(spec: OperatorSpec, rhs: np.ndarray) -> np.ndarray:
    """Test oracle: LU solve of the active block, zero elsewhere."""
    domain = spec.domain
    domain.check(rhs)
    if domain.size > MAX_DENSE:
        raise ValueError(f"dense oracle limited to {MAX_DENSE} vertices")
    act, A = _active_system(spec)
    M = A.toarray()
    if M.shape[0] == 0:
        return np.zeros(domain.shape)
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise np.linalg.LinAlgError("singular active block")
    x = scipy.linalg.solve(M, rhs.ravel()[act])
    out = np.zeros(domain.size)
    out[act] = x
    return out.reshape(domain.shape)
