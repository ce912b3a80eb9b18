"""Effective conductance, correctors, two-scale expansion and flux diagnostics.

Everything here is finite-volume: the corrector in direction ``p`` is the
localized one, ``phi in C_0(cube)`` with ``-div a grad (phi + l_p) = 0`` on
the interior of the maximal cluster.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from .cluster import ClusterLabels, Partition, coarsen, union_find_clusters
from .elliptic import OperatorSpec, SolveReport, cg_solve, neg_div_a_grad
from .lattice import (CubeDomain, distance_to_boundary, finite_difference, grad_norm,
                      heat_kernel_convolve, interior_boundary, laplacian, linear_function,
                      norm, _shift)
from .percolation import (ConductanceField, PercolationLaw, ell_width, mask_to_cluster,
                          sample)

__all__ = [
    "EffectiveTensor",
    "CorrectorSet",
    "TwoScaleReport",
    "FluxCorrector",
    "dirichlet_energy",
    "effective_conductance",
    "localized_corrector",
    "eta_smooth",
    "modified_corrector",
    "build_correctors",
    "cutoff",
    "two_scale_expansion",
    "two_scale_error",
    "centered_flux",
    "probe_grid",
    "flux_spatial_average",
    "lazy_walk_step",
    "flux_corrector_gradient",
]


def _unit(d: int, k: int) -> np.ndarray:
    p = np.zeros(d)
    p[k] = 1.0
    return p


def _values(a) -> np.ndarray:
    return np.asarray(getattr(a, "values", a), dtype=float)


def _keep_components(a: np.ndarray, labels: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Zero every edge whose endpoints are not both in a kept component."""
    inside = np.isin(labels, keep)
    out = a.copy()
    for j in range(a.shape[0]):
        out[j] = np.where(inside & _shift(inside, j, 1), out[j], 0.0)
    return out


# --- effective conductance ---------------------------------------------------------------

def dirichlet_energy(a: ConductanceField, labels: Optional[ClusterLabels], p: Sequence[float],
                     tol: float = 1e-10, which: str = "boundary",
                     return_minimizer: bool = False):
    """``nu(cube, p) = 1/(2|cube|) min <grad v, a grad v>`` over ``v in l_p + C_0``.

    Components that never reach the boundary carry no boundary condition and
    relax to constants, so they drop out of the energy.  With
    ``which='boundary'`` every boundary-touching component takes part; with
    ``which='maximal'`` only the maximal cluster does.

    Returns the energy, or ``(energy, phi, conductance used)`` when
    ``return_minimizer`` is set, where ``phi = v - l_p``.
    """
    domain = a.domain
    if labels is None:
        labels = union_find_clusters(a)
    vals = _values(a)
    labs = labels.labels
    if which == "boundary":
        _, bdry = interior_boundary(domain)
        keep = np.unique(labs[bdry & (labs >= 0)])
    elif which == "maximal":
        keep = np.array([] if labels.maximal_id is None else [labels.maximal_id])
    else:
        raise ValueError(f"unknown component choice {which!r}")
    if keep.size == 0:
        raise ValueError("empty cluster: no open component meets the boundary")
    ab = _keep_components(vals, labs, keep)
    p = np.asarray(p, dtype=float)
    lp = linear_function(domain, p)
    spec = OperatorSpec("heterogeneous", domain, np.zeros(domain.shape), ab)
    phi, rep = cg_solve(spec, -neg_div_a_grad(ab, lp), tol=tol,
                        max_iter=50 * domain.side ** max(1, domain.dim - 1))
    if not rep.converged:
        warnings.warn(f"energy minimiser not converged ({rep.final_residual:.2e})",
                      RuntimeWarning, stacklevel=2)
    v = phi + lp
    g = np.zeros_like(ab)
    for j in range(domain.dim):
        g[j] = _shift(v, j, 1) - v
    energy = 0.5 * float(np.sum(ab * g * g)) / domain.size
    if return_minimizer:
        return energy, phi, ab
    return energy


@dataclass
class EffectiveTensor:
    """Monte-Carlo estimate of the scalar effective conductance."""

    abar: float
    stderr: float
    per_direction: np.ndarray
    flux_abar: float
    flux_stderr: float
    flux_per_direction: np.ndarray
    m_used: int
    samples_used: int
    seeds_used: List[int] = field(default_factory=list)
    energy_samples: Optional[np.ndarray] = None  # (samples, d)
    flux_samples: Optional[np.ndarray] = None

    @property
    def isotropy_gap(self) -> float:
        return float(np.max(self.per_direction) - np.min(self.per_direction))

    def as_dict(self) -> dict:
        return {
            "abar": self.abar,
            "stderr": self.stderr,
            "per_direction": [float(x) for x in self.per_direction],
            "isotropy_gap": self.isotropy_gap,
            "flux_abar": self.flux_abar,
            "flux_stderr": self.flux_stderr,
            "flux_per_direction": [float(x) for x in self.flux_per_direction],
            "m_used": self.m_used,
            "samples_used": self.samples_used,
            "seeds_used": list(self.seeds_used),
        }


def _flux_estimate(ac: np.ndarray, phi: np.ndarray, k: int) -> float:
    """``|cube|^-1 sum_x a_C(x, x+e_k) (D_k phi(x) + 1)``."""
    dk = _shift(phi, k, 1) - phi
    return float(np.sum(ac[k] * (dk + 1.0))) / phi.size


def _one_sample(dim, m, law, seed, tol):
    domain = CubeDomain(dim, m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = sample(domain, law, seed)
    labels = union_find_clusters(a)
    if labels.maximal_id is None or not labels.is_crossing:
        return None
    ac = mask_to_cluster(a, labels).values
    energy, flux = [], []
    for k in range(dim):
        nu = dirichlet_energy(a, labels, _unit(dim, k), tol=tol)
        energy.append(2.0 * nu)
        phi = localized_corrector(a, labels, _unit(dim, k), tol=tol)
        flux.append(_flux_estimate(ac, phi, k))
    return energy, flux


def _mean_err(x: np.ndarray) -> Tuple[float, float]:
    mean = float(np.mean(x))
    err = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return mean, err


def effective_conductance(law: PercolationLaw, m: int, samples: int,
                          seeds: Optional[Sequence[int]] = None, dim: int = 2,
                          tol: float = 1e-10, workers: int = 1) -> EffectiveTensor:
    """Average ``2 nu(cube_m, e_k)`` over samples and directions.

    The same samples also give the flux estimate
    ``|cube|^-1 sum a_C (D_k phi_k + 1)`` from the localized correctors.
    Samples whose maximal cluster does not cross the cube are skipped with a
    warning.
    """
    if m < 1 or samples < 1:
        raise ValueError("need m >= 1 and at least one sample")
    seeds = list(range(samples)) if seeds is None else [int(s) for s in seeds][:samples]
    if len(seeds) < samples:
        raise ValueError(f"{samples} samples requested but only {len(seeds)} seeds given")
    law.warn_if_subcritical(dim)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda s: _one_sample(dim, m, law, s, tol), seeds))
    else:
        results = [_one_sample(dim, m, law, s, tol) for s in seeds]
    used, energy, flux = [], [], []
    for s, r in zip(seeds, results):
        if r is None:
            warnings.warn(f"seed {s}: no crossing cluster, sample skipped",
                          RuntimeWarning, stacklevel=2)
            continue
        used.append(s)
        energy.append(r[0])
        flux.append(r[1])
    if not used:
        raise ValueError("every sample looked subcritical")
    E = np.array(energy)
    F = np.array(flux)
    abar, err = _mean_err(E.ravel())
    fabar, ferr = _mean_err(F.ravel())
    return EffectiveTensor(abar, err, E.mean(axis=0), fabar, ferr, F.mean(axis=0), m,
                           len(used), used, E, F)


# --- correctors --------------------------------------------------------------------------

def localized_corrector(a: ConductanceField, labels: ClusterLabels, p: Sequence[float],
                        tol: float = 1e-10, max_iter: Optional[int] = None,
                        return_report: bool = False):
    """``phi in C_0`` with ``-div a_C grad (phi + l_p) = 0`` on the cluster interior."""
    domain = a.domain
    ac = mask_to_cluster(a, labels).values
    if not ac.any():
        raise ValueError("empty cluster")
    lp = linear_function(domain, np.asarray(p, dtype=float))
    spec = OperatorSpec("heterogeneous", domain, np.zeros(domain.shape), ac)
    if max_iter is None:
        max_iter = 50 * domain.side ** max(1, domain.dim - 1)
    phi, rep = cg_solve(spec, -neg_div_a_grad(ac, lp), tol=tol, max_iter=max_iter)
    if not rep.converged:
        warnings.warn(f"corrector not converged ({rep.final_residual:.2e})",
                      RuntimeWarning, stacklevel=2)
    return (phi, rep) if return_report else phi


def eta_smooth(u: np.ndarray) -> np.ndarray:
    """Convolution with the unit-mass kernel: 1/2 at the centre, 1/(4d) per neighbour."""
    d = u.ndim
    out = 0.5 * u
    for j in range(d):
        out = out + (_shift(u, j, 1) + _shift(u, j, -1)) / (4.0 * d)
    return out


def modified_corrector(phi: np.ndarray, partition: Partition, lam: float) -> np.ndarray:
    """``phi - ([phi]_P * eta) * Phi_{1/lam}`` with the boundary-zero coarsening."""
    m = partition.domain.level
    if not 3.0 ** (-m) < lam < 0.5:
        warnings.warn(f"lambda = {lam} lies outside (3^-m, 1/2)", RuntimeWarning, stacklevel=2)
    coarse = coarsen(phi, partition, boundary_zero=True)
    return phi - heat_kernel_convolve(eta_smooth(coarse), 1.0 / lam)


@dataclass
class CorrectorSet:
    phi: List[np.ndarray]
    modified: List[np.ndarray]
    lam: float
    side: int
    seed: Optional[int] = None
    reports: List[SolveReport] = field(default_factory=list)


def build_correctors(a: ConductanceField, labels: ClusterLabels, partition: Partition,
                     lam: float, tol: float = 1e-10) -> CorrectorSet:
    d = a.domain.dim
    phis, mods, reps = [], [], []
    for k in range(d):
        phi, rep = localized_corrector(a, labels, _unit(d, k), tol=tol, return_report=True)
        phis.append(phi)
        mods.append(modified_corrector(phi, partition, lam))
        reps.append(rep)
    return CorrectorSet(phis, mods, lam, a.domain.side, a.seed, reps)


# --- two-scale expansion -----------------------------------------------------------------

def cutoff(domain: CubeDomain, lam: float) -> np.ndarray:
    """``min(1, ((dist - l)/l)_+)`` with ``l`` the integer boundary-layer width."""
    w = ell_width(lam, domain.dim)
    if 2 * w >= domain.side / 2:
        warnings.warn(f"cutoff width {w} swallows the cube of side {domain.side}",
                      RuntimeWarning, stacklevel=2)
    dist = distance_to_boundary(domain).astype(float)
    return np.minimum(1.0, np.maximum(0.0, (dist - w) / w))


def two_scale_expansion(vbar: np.ndarray, correctors, upsilon: np.ndarray) -> np.ndarray:
    """``w = vbar + sum_k (Upsilon D_k vbar) phi^(lam)_k``.

    ``correctors`` is a :class:`CorrectorSet` (its modified correctors are
    used) or a sequence of d fields.
    """
    mods = correctors.modified if isinstance(correctors, CorrectorSet) else list(correctors)
    if len(mods) != vbar.ndim:
        raise ValueError(f"expected {vbar.ndim} correctors, got {len(mods)}")
    w = np.array(vbar, dtype=float)
    for k, phik in enumerate(mods):
        if phik.shape != vbar.shape:
            raise ValueError("corrector and vbar live on different domains")
        w += upsilon * finite_difference(vbar, k) * phik
    return w


@dataclass
class TwoScaleReport:
    error: float
    grad_vbar: float
    lap_vbar: float
    mixed: float

    @property
    def relative(self) -> float:
        return self.error / self.grad_vbar if self.grad_vbar > 0 else math.inf


def two_scale_error(v: np.ndarray, vbar: np.ndarray, w: np.ndarray, labels: ClusterLabels,
                    a) -> TwoScaleReport:
    """``||grad(w - v) 1_{a != 0}||`` on the maximal cluster, with the budget norms.

    The budget norms are ``||grad vbar||`` on the cube, ``||Delta vbar||`` on
    its interior and their geometric mean.
    """
    if not (v.shape == vbar.shape == w.shape):
        raise ValueError("fields live on different domains")
    cl = labels.maximal_mask()
    err = grad_norm(w - v, _values(a), cl)
    gv = grad_norm(vbar)
    interior, _ = interior_boundary(labels.domain)
    lv = norm(laplacian(vbar), interior)
    return TwoScaleReport(err, gv, lv, math.sqrt(gv * lv))


# --- flux diagnostics --------------------------------------------------------------------

def centered_flux(a: ConductanceField, labels: ClusterLabels, phi: np.ndarray, abar: float,
                  p: Sequence[float]) -> np.ndarray:
    """``g_p = a_C (D phi + p) - abar p`` as a ``(d, ...)`` vector field."""
    ac = mask_to_cluster(a, labels).values
    p = np.asarray(p, dtype=float)
    g = np.empty(ac.shape)
    for j in range(ac.shape[0]):
        g[j] = ac[j] * (finite_difference(phi, j) + p[j]) - abar * p[j]
    return g


def _radius(R: float) -> int:
    return int(math.ceil(6.0 * R))


def probe_grid(domain: CubeDomain, R: float, count: int) -> np.ndarray:
    """``count^d`` evenly spaced probe vertices at distance ``>= ceil(6R)`` from the boundary."""
    r = _radius(R)
    lo, hi = r, domain.side - 1 - r
    if hi < lo:
        raise ValueError(f"no vertex is {r} away from the boundary of a cube of side {domain.side}")
    axis = np.unique(np.round(np.linspace(lo, hi, count)).astype(int))
    grids = np.meshgrid(*([axis] * domain.dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _heat_cell_weights(R: float) -> np.ndarray:
    """1D weights ``int_{z-1/2}^{z+1/2} Phi_R`` per unit cell, truncated at 6R and renormalised."""
    r = _radius(R)
    z = np.arange(-r, r + 1, dtype=float)
    s = 2.0 * R
    w = 0.5 * (erf((z + 0.5) / s) - erf((z - 0.5) / s))
    return w / w.sum()


def flux_spatial_average(g: np.ndarray, R: float, probes: np.ndarray,
                         kernel: Union[str, np.ndarray] = "heat") -> np.ndarray:
    """``(K_R * [g])(x)`` at each probe vertex; returns shape ``(n_probes, d)``.

    ``[g]`` is constant on the unit cells around vertices, so the convolution
    is a weighted sum with cell-integrated kernel weights.  ``kernel='heat'``
    uses ``Phi_R``; an array of shape ``(2r+1,)*d`` gives custom cell weights
    (applied as given).  Probes must sit at distance ``>= 6R`` from the boundary.
    """
    d = g.shape[0]
    shape = g.shape[1:]
    if isinstance(kernel, str):
        if kernel != "heat":
            raise ValueError(f"unknown kernel {kernel!r}")
        w1 = _heat_cell_weights(R)
        r = (w1.size - 1) // 2
        W = w1
        for _ in range(d - 1):
            W = np.multiply.outer(W, w1)
    else:
        W = np.asarray(kernel, dtype=float)
        if W.ndim != d or len(set(W.shape)) != 1 or W.shape[0] % 2 == 0:
            raise ValueError("custom kernel must be a centred cube of odd side")
        r = (W.shape[0] - 1) // 2
    need = _radius(R)
    probes = np.atleast_2d(np.asarray(probes, dtype=int))
    out = np.empty((probes.shape[0], d))
    for n, x in enumerate(probes):
        dist = min(min(int(xi), s - 1 - int(xi)) for xi, s in zip(x, shape))
        if dist < need:
            raise ValueError(f"probe {tuple(int(v) for v in x)} is closer than {need} to the boundary")
        sl = tuple(slice(int(xi) - r, int(xi) + r + 1) for xi in x)
        # [g] * K at x sums g(z) K(x - z); the heat weights are symmetric, custom ones are flipped
        Wf = W[(slice(None, None, -1),) * d]
        for i in range(d):
            out[n, i] = float(np.sum(g[i][sl] * Wf))
    return out


def lazy_walk_step(u: np.ndarray) -> np.ndarray:
    """One step of the lazy walk: keep half, move to each neighbour with 1/(4d)."""
    return eta_smooth(u)


@dataclass
class FluxCorrector:
    """Truncated ``D_k S_ij`` on a zero-padded grid.

    ``DS[i, j, k]`` holds ``D_k S_ij``; ``window`` selects the original
    domain inside the padded arrays.
    """

    DS: np.ndarray
    pad: int
    terms: int
    last_term: float

    @property
    def window(self) -> Tuple[slice, ...]:
        n = self.DS.shape[3:]
        return tuple(slice(self.pad, s - self.pad) for s in n)

    def divergence(self) -> np.ndarray:
        """``sum_j D*_j S_ij`` on the padded grid, using ``D*_j S(x) = -(D_j S)(x - e_j)``."""
        d = self.DS.shape[0]
        out = np.zeros((d,) + self.DS.shape[3:])
        for i in range(d):
            for j in range(d):
                out[i] -= _shift(self.DS[i, j, j], j, -1)
        return out


def _second_difference(u: np.ndarray, k: int, j: int) -> np.ndarray:
    return finite_difference(finite_difference(u, j), k)


def flux_corrector_gradient(g: np.ndarray, T_max: int, tol: float = 0.0,
                            pad: Optional[int] = None) -> FluxCorrector:
    """``D_k S_ij = 1/(4d) sum_{t<=T} [D_k D_j P_t g_i - D_k D_i P_t g_j]``.

    ``g`` is extended by zero and padded by ``T_max + 2`` so that the walk
    never feels the edge of the array.  With ``tol > 0`` the sum stops after
    the first term whose largest second difference falls below ``tol``.
    """
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    d = g.shape[0]
    pad = T_max + 2 if pad is None else int(pad)
    padded = np.pad(g, [(0, 0)] + [(pad, pad)] * d)
    acc = np.zeros_like(padded)
    cur = padded.copy()
    terms = 0
    last = math.inf
    for t in range(T_max + 1):
        acc += cur
        terms += 1
        if tol > 0:
            last = max(float(np.max(np.abs(_second_difference(cur[i], k, j))))
                       for i in range(d) for j in range(d) for k in range(d))
            if last < tol:
                break
        if t < T_max:
            cur = np.stack([lazy_walk_step(c) for c in cur])
    if tol <= 0:
        last = max(float(np.max(np.abs(_second_difference(cur[i], k, j))))
                   for i in range(d) for j in range(d) for k in range(d))
    DS = np.zeros((d, d, d) + acc.shape[1:])
    for i in range(d):
        for j in range(i + 1, d):
            for k in range(d):
                val = (_second_difference(acc[i], k, j) - _second_difference(acc[j], k, i)) / (4.0 * d)
                DS[i, j, k] = val
                DS[j, i, k] = -val
    return FluxCorrector(DS, pad, terms, last)
