"""The ten acceptance criteria, each printing one PASS/FAIL line."""
import json
import time
import warnings

import numpy as np
import pytest

from perchom.cli import main
from perchom.cluster import (
    bfs_clusters,
    build_partition,
    label_components,
    partition_sets,
    union_find_clusters,
)
from perchom.elliptic import (
    active_mask,
    cg_solve,
    dense_direct,
    heterogeneous,
    homogenized,
    multigrid_poisson,
)
from perchom.homogenization import (
    build_correctors,
    centered_flux,
    cutoff,
    effective_conductance,
    flux_corrector_gradient,
    flux_spatial_average,
    localized_corrector,
    probe_grid,
    two_scale_error,
    two_scale_expansion,
)
from perchom.lattice import (
    CubeDomain,
    fd_divergence,
    finite_difference,
    finite_difference_conj,
    grad_norm,
    interior_boundary,
    laplacian,
    norm,
    trace_sides,
)
from perchom.percolation import PercolationLaw, mask_to_cluster, sample
from perchom.scheme import (
    IterationConfig,
    corrector_problem,
    default_lambda,
    energy_error,
    iterate_once,
    reference_solution,
    residual,
    run,
)

E1 = np.array([1.0, 0.0])


def quiet(fn, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fn(*args, **kwargs)


# --- shared m = 5, p = 0.7 samples (criteria 4 and 8) -------------------------------------

M5_SEEDS = list(range(8))


@pytest.fixture(scope="module")
def m5_estimate():
    t0 = time.perf_counter()
    est = quiet(effective_conductance, PercolationLaw(0.7), 5, len(M5_SEEDS), seeds=M5_SEEDS)
    return est, time.perf_counter() - t0


def test_criterion_01_fixed_point(verdict):
    worst, slowest = 0.0, 0.0
    for m in (3, 4):
        for p in (0.6, 1.0):
            t0 = time.perf_counter()
            a = sample(CubeDomain(2, m), PercolationLaw(p), 7)
            labels = union_find_clusters(a)
            f = corrector_problem(a, labels, E1)
            if p == 1.0:
                # the corrector problem is trivial here, so use a bump source instead
                x = np.linspace(0, np.pi, a.domain.side)
                f = np.outer(np.sin(x), np.sin(x))
            u = quiet(reference_solution, f, a, labels, tol=1e-13)
            step = quiet(iterate_once, u, f, a, labels, 0.2, 0.3, cg_tol=1e-12, mg_tol=1e-12)
            worst = max(worst, energy_error(step.u_hat, u, a, labels))
            slowest = max(slowest, time.perf_counter() - t0)
    ok = worst <= 1e-7 and slowest < 5.0
    assert verdict(1, ok, f"max cluster-H1 error {worst:.2e}, slowest case {slowest:.2f}s")


def test_criterion_02_contraction(verdict):
    t0 = time.perf_counter()
    law = PercolationLaw(0.6)
    abar = quiet(effective_conductance, law, 4, 4).abar
    monotone, last = True, []
    for seed in range(100, 105):
        a = sample(CubeDomain(2, 4), law, seed)
        labels = union_find_clusters(a)
        f = corrector_problem(a, labels, E1)
        _, trace = run(IterationConfig(0.1, abar, f, rounds=8), a, labels, seed=seed)
        res = np.concatenate(([trace.initial_res], trace.residuals))
        monotone &= len(trace.rounds) == 8 and bool(np.all(np.diff(res) < 0))
        last.append(trace.rounds[-1].ratio)
    wall = time.perf_counter() - t0
    med = float(np.median(last))
    ok = monotone and med <= 0.85 and wall < 120
    assert verdict(2, ok, f"abar {abar:.4f}, strictly decreasing {monotone}, "
                          f"median res8/res7 {med:.3f}, {wall:.1f}s")


def test_criterion_03_homogeneous_limit(verdict):
    m = 4
    a = sample(CubeDomain(2, m), PercolationLaw(1.0), 0)
    labels = union_find_clusters(a)
    phi = localized_corrector(a, labels, E1)
    phi_max = float(np.max(np.abs(phi)))
    est = effective_conductance(PercolationLaw(1.0), m, 2)
    gap = abs(est.abar - 1.0)
    interior, _ = interior_boundary(a.domain)
    x = np.linspace(0, np.pi, a.domain.side)
    vbar = np.outer(np.sin(x), np.sin(x))
    f = np.where(interior, -laplacian(vbar), 0.0)
    u0 = np.zeros(a.domain.shape)
    step = iterate_once(u0, f, a, labels, 0.1, 1.0, cg_tol=1e-12, mg_tol=1e-12)
    gain = residual(u0, f, a, labels) / residual(step.u_hat, f, a, labels)
    ok = phi_max <= 1e-8 and gap <= 3 * 3.0 ** -m and gain >= 10
    assert verdict(3, ok, f"|phi|_inf {phi_max:.1e}, |abar-1| {gap:.4f}, "
                          f"one-round gain {gain:.1e}")


def test_criterion_04_energy_vs_flux(verdict, m5_estimate):
    est, wall = m5_estimate
    rel = np.abs(est.per_direction - est.flux_per_direction) / est.per_direction
    ok = bool(np.all(rel <= 0.05)) and est.samples_used == 8 and wall < 300
    assert verdict(4, ok, f"energy {np.round(est.per_direction, 5).tolist()} vs flux "
                          f"{np.round(est.flux_per_direction, 5).tolist()}, max rel "
                          f"{rel.max():.2e}, {wall:.1f}s")


def _crossing_specs(n, lam):
    out, s = [], 0
    while len(out) < n:
        a = sample(CubeDomain(2, 2), PercolationLaw(0.7), 500 + s)
        labels = union_find_clusters(a)
        s += 1
        if not labels.is_crossing:
            continue
        lam_field = np.where(labels.maximal_mask(), lam, 0.0)
        out.append(heterogeneous(mask_to_cluster(a, labels), lam_field))
    return out


def test_criterion_05_solver_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(55)
    worst = {}
    for lam in (0.0, 0.1):
        err = 0.0
        for spec in _crossing_specs(30, lam):
            rhs = np.where(active_mask(spec), rng.standard_normal(spec.domain.shape), 0.0)
            u, _ = cg_solve(spec, rhs, tol=1e-13, max_iter=1000)
            err = max(err, float(np.max(np.abs(u - dense_direct(spec, rhs)))))
        worst[f"cg lam={lam}"] = err
    dom = CubeDomain(2, 2)
    interior, _ = interior_boundary(dom)
    err = 0.0
    for _ in range(30):
        abar = rng.uniform(0.1, 1.0)
        rhs = np.where(interior, rng.standard_normal(dom.shape), 0.0)
        u, _ = multigrid_poisson(abar, rhs, tol=1e-13)
        err = max(err, float(np.max(np.abs(u - dense_direct(homogenized(dom, abar), rhs)))))
    worst["multigrid"] = err
    wall = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-8 and wall < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert verdict(5, ok, f"{detail}, {wall:.1f}s")


def test_criterion_06_connectivity(verdict):
    rng = np.random.default_rng(66)
    mismatches = 0
    for p in (0.3, 0.5, 0.7):
        for _ in range(1000):
            v = (rng.random((2, 16, 16)) < p).astype(float)
            mismatches += partition_sets(label_components(v)) != bfs_clusters(v)
    assert verdict(6, mismatches == 0, f"{mismatches} mismatches in 3000 samples")


def test_criterion_07_inequalities(verdict):
    d = 2
    rng = np.random.default_rng(77)
    counts = {"poincare": 0, "naive": 0, "h2": 0, "trace": 0}
    for m in (2, 3, 4):
        dom = CubeDomain(d, m)
        interior, bdry = interior_boundary(dom)
        for _ in range(100):
            v = rng.standard_normal(dom.shape)
            counts["naive"] += grad_norm(v) ** 2 > 2 * d * norm(v) ** 2 * (1 + 1e-12)
            for K in sorted({0, 1, 2, dom.side // 4}):
                lhs, rhs = trace_sides(v, K)
                counts["trace"] += lhs > rhs
            v0 = np.where(bdry, 0.0, v)
            counts["poincare"] += norm(v0) > 3 ** m * grad_norm(v0) * (1 + 1e-12)
            f = np.where(interior, -laplacian(v0), 0.0)
            h2 = sum(norm(finite_difference_conj(finite_difference(v0, j), i), interior) ** 2
                     for i in range(d) for j in range(d))
            counts["h2"] += h2 > d * norm(f, interior) ** 2 * (1 + 1e-12)
    ok = sum(counts.values()) == 0
    assert verdict(7, ok, "violations " + ", ".join(f"{k} {v}" for k, v in counts.items()))


def _flux_residual(g, T, half=13):
    """``|D* . S - g|`` on the central ``(2 half + 1)^d`` window."""
    fc = flux_corrector_gradient(g, T)
    c = g.shape[1] // 2
    win = tuple(slice(c - half, c + half + 1) for _ in range(g.ndim - 1))
    padded = tuple(slice(fc.pad + s.start, fc.pad + s.stop) for s in win)
    r = fc.divergence()[(slice(None),) + padded] - g[(slice(None),) + win]
    return float(np.linalg.norm(r))


def test_criterion_08_flux_diagnostics(verdict, m5_estimate):
    est, _ = m5_estimate
    abar = est.abar
    means, divs, k3, k9, halving = [], [], [], [], []
    for seed in M5_SEEDS:
        a = sample(CubeDomain(2, 5), PercolationLaw(0.7), seed)
        labels = union_find_clusters(a)
        phi = localized_corrector(a, labels, E1)
        g = centered_flux(a, labels, phi, abar, E1)
        means.append(float(np.linalg.norm(g.reshape(2, -1).mean(axis=1))))
        interior, _ = interior_boundary(a.domain)
        divs.append(float(np.max(np.abs(fd_divergence(g)[interior]))))
        for R, store in ((3.0, k3), (9.0, k9)):
            vals = flux_spatial_average(g, R, probe_grid(a.domain, R, 3))
            store.append(float(np.median(np.linalg.norm(vals, axis=1))))
        halving.append(_flux_residual(g, 256) / _flux_residual(g, 128))
    parts = {
        "mean": float(np.median(means)) <= 0.05,
        "div": float(np.median(divs)) <= 1e-6,
        "decay": float(np.median(k9)) < float(np.median(k3)),
        "halving": 0.375 <= float(np.median(halving)) <= 0.625,
    }
    detail = (f"|avg g| {np.median(means):.4f}, |D*.g| {np.median(divs):.1e}, "
              f"|K*g| R=3 {np.median(k3):.4f} R=9 {np.median(k9):.4f}, "
              f"flux-corrector residual ratio {np.median(halving):.3f} "
              f"(failing parts: {[k for k, v in parts.items() if not v] or 'none'})")
    assert verdict(8, all(parts.values()), detail)


def _bump(domain, labels):
    interior, _ = interior_boundary(domain)
    n = domain.side
    t = np.arange(n) / (n - 1)
    F = (2 * np.pi ** 2 / n ** 2) * np.outer(np.sin(np.pi * t), np.sin(np.pi * t))
    return np.where(interior & labels.maximal_mask(), F, 0.0)


def _two_scale_relative(a, labels, abar, lam):
    F = _bump(a.domain, labels)
    vbar, _ = multigrid_poisson(abar, F, tol=1e-12)
    ac = mask_to_cluster(a, labels).values
    spec = heterogeneous(mask_to_cluster(a, labels))
    v, _ = cg_solve(spec, F, tol=1e-12, max_iter=50 * a.domain.side)
    part = quiet(build_partition, a, labels)
    cs = quiet(build_correctors, a, labels, part, lam)
    w = two_scale_expansion(vbar, cs, quiet(cutoff, a.domain, lam))
    return two_scale_error(v, vbar, w, labels, ac)


def test_criterion_09_two_scale(verdict):
    a = sample(CubeDomain(2, 4), PercolationLaw(1.0), 0)
    labels = union_find_clusters(a)
    rep = _two_scale_relative(a, labels, 1.0, default_lambda(4, 2))
    full_ok = rep.error <= 1e-6 * rep.grad_vbar
    medians = {}
    for m in (3, 4):
        abar = quiet(effective_conductance, PercolationLaw(0.7), m, 4,
                     seeds=range(1000, 1004)).abar
        rels = []
        for seed in range(10):
            b = sample(CubeDomain(2, m), PercolationLaw(0.7), 200 + seed)
            lb = union_find_clusters(b)
            rels.append(_two_scale_relative(b, lb, abar, default_lambda(m, 2)).relative)
        medians[m] = float(np.median(rels))
    ok = full_ok and medians[4] < medians[3]
    assert verdict(9, ok, f"p=1 error/|grad vbar| {rep.error / rep.grad_vbar:.1e}, "
                          f"median relative error m=3 {medians[3]:.3f}, m=4 {medians[4]:.3f}")


def test_criterion_10_determinism(verdict, tmp_path):
    outputs = []
    for k, threads in enumerate(("1", "1", "8")):
        d = tmp_path / f"run{k}"
        d.mkdir()
        cond, phi = str(d / "a.cond"), str(d / "phi.field")
        u, trace, ab = str(d / "u.field"), str(d / "t.json"), str(d / "abar.json")
        codes = [
            main(["sample", "--m", "4", "--p", "0.6", "--seed", "12", "--out", cond,
                  "--threads", threads]),
            main(["corrector", "--in", cond, "--out", phi, "--threads", threads]),
            main(["abar", "--m", "3", "--p", "0.7", "--samples", "4", "--json", ab,
                  "--threads", threads]),
            main(["solve", "--in", cond, "--corrector-dir", "e1", "--lambda", "auto",
                  "--abar", "auto", "--rounds", "4", "--out", u, "--trace", trace,
                  "--threads", threads]),
        ]
        doc = json.load(open(trace))
        for r in doc["rounds"]:
            r.pop("wall_ms")
        blobs = [open(p, "rb").read() for p in (cond, phi, u, ab)]
        outputs.append((codes, blobs, doc))
    same = outputs[0] == outputs[1] == outputs[2]
    ok = same and all(c == 0 for c in outputs[0][0])
    assert verdict(10, ok, "sample, corrector, abar and solve outputs byte-identical "
                           f"across reruns and --threads 1/8: {same}")
