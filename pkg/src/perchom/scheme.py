"""The homogenization-preconditioned iteration for Dirichlet problems on the cluster.

One round maps an approximation ``u0`` to ``u_hat = u0 + u1 + u2`` where, all
with zero boundary values,

    (lam_C^2 - div a_C grad) u1 = f_C + div a_C grad u0   on the cluster interior,
    -abar Delta ubar            = lam_C^2 u1              on the cube interior,
    (lam_C^2 - div a_C grad) u2 = (lam_C^2 - abar Delta) ubar  on the cluster interior.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .cluster import ClusterLabels
from .elliptic import OperatorSpec, SolveReport, cg_solve, multigrid_poisson, neg_div_a_grad
from .lattice import grad_norm, interior_boundary, laplacian, linear_function, norm
from .percolation import ConductanceField, mask_to_cluster

__all__ = [
    "IterationConfig",
    "RoundRecord",
    "IterationTrace",
    "RoundResult",
    "corrector_problem",
    "iterate_once",
    "run",
    "residual",
    "energy_error",
    "reference_solution",
    "default_lambda",
    "LAMBDA_CONSTANTS",
]

# c and s_hat in default_lambda, per dimension (calibrated, see README)
LAMBDA_CONSTANTS = {2: (400.0, 1.0), 3: (400.0, 1.0)}


@dataclass
class IterationConfig:
    """Inputs of a run.  ``g`` supplies the boundary values; ``u0`` defaults to ``g``."""

    lam: float
    abar: float
    f: np.ndarray
    g: Optional[np.ndarray] = None
    u0: Optional[np.ndarray] = None
    rounds: int = 8
    cg_tol: float = 1e-8
    mg_tol: float = 1e-8
    cg_max_iter: Optional[int] = None
    mg_max_cycles: int = 50
    reference: Optional[np.ndarray] = None
    stop_below: float = 1e-12

    def initial(self) -> np.ndarray:
        if self.u0 is not None:
            return np.array(self.u0, dtype=float)
        if self.g is not None:
            return np.array(self.g, dtype=float)
        return np.zeros(self.f.shape)


@dataclass
class RoundRecord:
    res: float
    ratio: Optional[float]
    cg1_iters: int
    mg_cycles: int
    cg2_iters: int
    wall_ms: float
    energy_error: Optional[float] = None
    flagged: bool = False

    def as_dict(self) -> dict:
        return {
            "res": self.res,
            "ratio": self.ratio,
            "cg1_iters": self.cg1_iters,
            "mg_cycles": self.mg_cycles,
            "cg2_iters": self.cg2_iters,
            "wall_ms": self.wall_ms,
        }


@dataclass
class IterationTrace:
    lam: float
    abar: float
    initial_res: float
    rounds: List[RoundRecord] = field(default_factory=list)
    seed: Optional[int] = None
    m: Optional[int] = None
    p: Optional[List[float]] = None
    initial_energy_error: Optional[float] = None
    diverged: bool = False

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.res for r in self.rounds])

    @property
    def contraction(self) -> np.ndarray:
        """Per-round ratios ``res_{n+1} / res_n`` from round 2 on."""
        return np.array([r.ratio for r in self.rounds[1:]])

    @property
    def energy_ratios(self) -> np.ndarray:
        errs = [self.initial_energy_error] + [r.energy_error for r in self.rounds]
        if any(e is None for e in errs):
            return np.array([])
        errs = np.array(errs, dtype=float)
        return errs[1:] / errs[:-1]

    @property
    def flagged(self) -> bool:
        return self.diverged or any(r.flagged for r in self.rounds)

    def as_dict(self) -> dict:
        return {
            "rounds": [r.as_dict() for r in self.rounds],
            "lambda": self.lam,
            "abar": self.abar,
            "seed": self.seed,
            "m": self.m,
            "p": self.p,
        }


@dataclass
class RoundResult:
    u_hat: np.ndarray
    u1: np.ndarray
    ubar: np.ndarray
    u2: np.ndarray
    reports: List[SolveReport]

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.reports)


def _masked(a: ConductanceField, labels: ClusterLabels):
    ac = mask_to_cluster(a, labels).values
    cl = labels.maximal_mask()
    interior, _ = interior_boundary(a.domain)
    return ac, cl, cl & interior


def corrector_problem(a: ConductanceField, labels: ClusterLabels, p: Sequence[float]) -> np.ndarray:
    """Right-hand side ``f = div a_C grad l_p`` whose solution in ``C_0`` is the corrector."""
    ac = mask_to_cluster(a, labels).values
    return neg_div_a_grad(ac, -linear_function(a.domain, np.asarray(p, dtype=float)))


def iterate_once(u0: np.ndarray, f: np.ndarray, a: ConductanceField, labels: ClusterLabels,
                 lam: float, abar: float, cg_tol: float = 1e-8, mg_tol: float = 1e-8,
                 cg_max_iter: Optional[int] = None, mg_max_cycles: int = 50) -> RoundResult:
    """One round of the scheme; the boundary values of ``u0`` are kept."""
    domain = a.domain
    domain.check(u0)
    domain.check(f)
    ac, cl, act = _masked(a, labels)
    lam_field = np.where(cl, float(lam), 0.0)
    het = OperatorSpec("heterogeneous", domain, lam_field, ac)

    rhs1 = np.where(act, f - neg_div_a_grad(ac, u0), 0.0)
    u1, rep1 = cg_solve(het, rhs1, tol=cg_tol, max_iter=cg_max_iter)

    ubar, rep_mg = multigrid_poisson(abar, lam_field ** 2 * u1, tol=mg_tol,
                                     max_cycles=mg_max_cycles)

    rhs2 = np.where(act, lam_field ** 2 * ubar - abar * laplacian(ubar), 0.0)
    u2, rep2 = cg_solve(het, rhs2, tol=cg_tol, max_iter=cg_max_iter)
    return RoundResult(u0 + u1 + u2, u1, ubar, u2, [rep1, rep_mg, rep2])


def residual(u: np.ndarray, f: np.ndarray, a: ConductanceField, labels: ClusterLabels) -> float:
    """``|cube|^-1 ||f + div a grad u||`` on the interior of the maximal cluster.

    With ``f = div a grad l_p`` this is ``|cube|^-1 ||-div a grad (u + l_p)||``.
    """
    ac, _, act = _masked(a, labels)
    r = f - neg_div_a_grad(ac, u)
    return norm(r, act) / u.size


def energy_error(u: np.ndarray, reference: np.ndarray, a: ConductanceField,
                 labels: ClusterLabels) -> float:
    """``||grad(u - reference) 1_{a != 0}||`` on the maximal cluster."""
    ac = mask_to_cluster(a, labels).values
    return grad_norm(u - reference, ac, labels.maximal_mask())


def reference_solution(f: np.ndarray, a: ConductanceField, labels: ClusterLabels,
                       g: Optional[np.ndarray] = None, tol: float = 1e-10) -> np.ndarray:
    """Unregularized CG solution ``u`` of ``-div a_C grad u = f`` with ``u = g`` on the boundary."""
    domain = a.domain
    ac, _, act = _masked(a, labels)
    base = np.zeros(domain.shape) if g is None else np.array(g, dtype=float)
    interior, _ = interior_boundary(domain)
    base[interior] = 0.0 if g is None else base[interior]
    spec = OperatorSpec("heterogeneous", domain, np.zeros(domain.shape), ac)
    rhs = np.where(act, f - neg_div_a_grad(ac, np.where(interior, 0.0, base)), 0.0)
    w, rep = cg_solve(spec, rhs, tol=tol, max_iter=200 * domain.side ** max(1, domain.dim - 1))
    if not rep.converged:
        warnings.warn(f"reference solve not converged ({rep.final_residual:.2e})",
                      RuntimeWarning, stacklevel=2)
    out = np.where(interior, 0.0, base)
    out[act] = w[act]
    if g is not None:
        keep = interior & ~act
        out[keep] = base[keep]
    return out


def run(config: IterationConfig, a: ConductanceField, labels: ClusterLabels,
        seed: Optional[int] = None, p: Optional[Sequence[float]] = None):
    """Apply :func:`iterate_once` for ``config.rounds`` rounds.

    Stops early when the residual drops below ``config.stop_below``, and
    after three consecutive rounds with ratio > 1 (the trace is then flagged
    as diverged).  Returns ``(u_hat, trace)``.
    """
    m = a.domain.level
    if not 3.0 ** (-m) < config.lam < 0.5:
        warnings.warn(f"lambda = {config.lam} lies outside (3^-m, 1/2)",
                      RuntimeWarning, stacklevel=2)
    if config.rounds < 1:
        raise ValueError("need at least one round")
    u = config.initial()
    f = config.f
    ref = config.reference
    trace = IterationTrace(config.lam, config.abar, residual(u, f, a, labels), seed=seed, m=m,
                           p=None if p is None else [float(x) for x in p])
    if ref is not None:
        trace.initial_energy_error = energy_error(u, ref, a, labels)
    prev = None
    rising = 0
    for _ in range(config.rounds):
        t0 = time.perf_counter()
        step = iterate_once(u, f, a, labels, config.lam, config.abar, config.cg_tol,
                            config.mg_tol, config.cg_max_iter, config.mg_max_cycles)
        u = step.u_hat
        res = residual(u, f, a, labels)
        wall = 1000.0 * (time.perf_counter() - t0)
        ratio = None if prev is None or prev == 0.0 else res / prev
        rec = RoundRecord(res, ratio, step.reports[0].iterations, step.reports[1].iterations,
                          step.reports[2].iterations, wall, flagged=not step.converged)
        if ref is not None:
            rec.energy_error = energy_error(u, ref, a, labels)
        trace.rounds.append(rec)
        prev = res
        rising = rising + 1 if ratio is not None and ratio > 1.0 else 0
        if rising >= 3:
            trace.diverged = True
            break
        if res < config.stop_below:
            break
    return u, trace


def default_lambda(m: int, d: int) -> float:
    """``c m^{-2(1/s + d)}`` clipped into ``(3^-m, 1/2)``.

    ``c`` and ``s`` are implementation constants fixed by a calibration
    sweep (see :data:`LAMBDA_CONSTANTS`).
    """
    if m < 2:
        raise ValueError("default lambda needs m >= 2")
    c, s = LAMBDA_CONSTANTS.get(d, LAMBDA_CONSTANTS[3])
    lam = c * float(m) ** (-2.0 * (1.0 / s + d))
    lo = 2.0 * 3.0 ** (-m)
    hi = 0.45
    return float(min(hi, max(lo, lam)))
