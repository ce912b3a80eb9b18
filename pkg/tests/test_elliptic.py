import numpy as np
import pytest

from perchom.cluster import union_find_clusters
from perchom.elliptic import (
    OperatorSpec,
    active_mask,
    apply,
    cg_solve,
    dense_direct,
    heterogeneous,
    homogenized,
    multigrid_poisson,
    neg_div_a_grad,
    operator_matrix,
)
from perchom.lattice import CubeDomain, grad_norm, interior_boundary, linear_function, norm
from perchom.percolation import PercolationLaw, mask_to_cluster, sample


def cluster_spec(seed, lam, m=2, p=0.7, d=2):
    a = sample(CubeDomain(d, m), PercolationLaw(p), seed)
    labels = union_find_clusters(a)
    ac = mask_to_cluster(a, labels)
    lam_field = np.where(labels.maximal_mask(), lam, 0.0)
    return OperatorSpec("heterogeneous", a.domain, lam_field, np.array(ac.values)), labels


def crossing_seeds(n, m=2, p=0.7):
    out, s = [], 0
    while len(out) < n:
        if union_find_clusters(sample(CubeDomain(2, m), PercolationLaw(p), s)).is_crossing:
            out.append(s)
        s += 1
    return out


def test_apply_trivial_examples():
    dom = CubeDomain(2, 3)
    spec = heterogeneous(sample(dom, PercolationLaw(1.0), 0))
    interior, _ = interior_boundary(dom)
    assert np.all(apply(spec, np.full(dom.shape, 4.0))[interior] == 0.0)
    lin = apply(spec, linear_function(dom, [2.0, -1.0]))
    assert np.max(np.abs(lin[interior])) < 1e-12


def test_apply_matches_dense_matrix():
    rng = np.random.default_rng(0)
    for kind in ("heterogeneous", "homogenized"):
        dom = CubeDomain(2, 2)
        a = rng.random((2,) + dom.shape)
        lam = rng.random(dom.shape)
        spec = OperatorSpec(kind, dom, lam, a if kind == "heterogeneous" else None, abar=0.7)
        u = rng.standard_normal(dom.shape)
        dense = operator_matrix(spec).toarray() @ u.ravel()
        np.testing.assert_allclose(apply(spec, u).ravel(), dense, atol=1e-14, rtol=0)


def test_apply_rejects_mismatched_domain():
    spec = homogenized(CubeDomain(2, 2), 1.0)
    with pytest.raises(ValueError):
        apply(spec, np.zeros((27, 27)))
    with pytest.raises(ValueError):
        homogenized(CubeDomain(2, 2), 0.0)


def test_symmetry_and_energy_identity():
    rng = np.random.default_rng(1)
    spec, labels = cluster_spec(3, 0.2, m=3)
    interior, _ = interior_boundary(spec.domain)
    u, v = (np.where(interior, rng.standard_normal(spec.domain.shape), 0.0) for _ in range(2))
    Au, Av = apply(spec, u), apply(spec, v)
    assert abs(np.sum(u * Av) - np.sum(Au * v)) < 1e-12 * np.sum(np.abs(u * Av))
    # energy identity for C0 fields: <u, (lam^2 - div a grad) u> over the whole cube
    lhs = np.sum(u * (spec.lam_field ** 2 * u + neg_div_a_grad(spec.conductance, u)))
    a = spec.conductance
    edge_energy = sum(np.sum(a[j] * (np.roll(u, -1, j) - u) ** 2) for j in range(2))
    rhs = norm(spec.lam_field * u) ** 2 + edge_energy
    assert lhs == pytest.approx(rhs, rel=1e-12)
    # positive semidefinite, bounded below by lam^2 on the cluster
    cl = labels.maximal_mask() & interior
    uc = np.where(cl, u, 0.0)
    assert np.sum(uc * apply(spec, uc)) >= 0.2 ** 2 * norm(uc) ** 2 - 1e-12


def test_cg_recovers_manufactured_solution():
    rng = np.random.default_rng(2)
    for seed in crossing_seeds(3, m=3):
        spec, _ = cluster_spec(seed, 0.0, m=3)
        act = active_mask(spec)
        v = np.where(act, rng.standard_normal(spec.domain.shape), 0.0)
        rhs = np.where(act, apply(spec, v), 0.0)
        u, rep = cg_solve(spec, rhs, tol=1e-12, max_iter=2000)
        assert rep.converged
        assert np.max(np.abs(u - v)) < 1e-8


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_cg_matches_dense_oracle(lam):
    rng = np.random.default_rng(int(lam * 10))
    for seed in crossing_seeds(30):
        spec, _ = cluster_spec(seed, lam)
        rhs = np.where(active_mask(spec), rng.standard_normal(spec.domain.shape), 0.0)
        u, rep = cg_solve(spec, rhs, tol=1e-13, max_iter=500)
        assert np.max(np.abs(u - dense_direct(spec, rhs))) < 1e-8


def test_regularization_speeds_cg():
    rng = np.random.default_rng(4)
    seed = crossing_seeds(1, m=4, p=0.6)[0]
    spec0, labels = cluster_spec(seed, 0.0, m=4, p=0.6)
    spec1, _ = cluster_spec(seed, 0.1, m=4, p=0.6)
    rhs = np.where(active_mask(spec0), rng.standard_normal(spec0.domain.shape), 0.0)
    _, rep0 = cg_solve(spec0, rhs, tol=1e-8, max_iter=5000)
    _, rep1 = cg_solve(spec1, rhs, tol=1e-8, max_iter=5000)
    assert rep0.converged and rep1.converged
    assert rep1.iterations < rep0.iterations


def test_cg_energy_error_is_monotone():
    rng = np.random.default_rng(5)
    spec, _ = cluster_spec(crossing_seeds(1, m=3)[0], 0.05, m=3)
    act = active_mask(spec)
    rhs = np.where(act, rng.standard_normal(spec.domain.shape), 0.0)
    exact, _ = cg_solve(spec, rhs, tol=1e-14, max_iter=5000)
    errors = []

    def record(x):
        e = x - exact
        errors.append(float(np.sum(e * apply(spec, e))))

    cg_solve(spec, rhs, tol=1e-10, max_iter=5000, callback=record)
    assert len(errors) > 5
    assert np.all(np.diff(errors) <= 1e-12 * errors[0])


def test_cg_reports_non_convergence():
    spec, _ = cluster_spec(crossing_seeds(1, m=3)[0], 0.0, m=3)
    rhs = np.where(active_mask(spec), 1.0, 0.0)
    _, rep = cg_solve(spec, rhs, tol=1e-12, max_iter=3)
    assert not rep.converged and rep.iterations == 3


def test_cg_zero_rhs():
    spec, _ = cluster_spec(0, 0.1)
    u, rep = cg_solve(spec, np.zeros(spec.domain.shape))
    assert rep.converged and not u.any()


def test_cg_indefinite_breakdown_raises():
    dom = CubeDomain(2, 1)
    a = np.zeros((2, 3, 3))
    a[0, 0, 1] = 1.0
    a[0, 1, 1] = -2.0  # the centre's diagonal becomes 1 - 2 < 0
    spec = OperatorSpec("heterogeneous", dom, np.zeros(dom.shape), a)
    rhs = np.zeros(dom.shape)
    rhs[1, 1] = 1.0
    with pytest.raises(np.linalg.LinAlgError):
        cg_solve(spec, rhs)


def test_multigrid_trivial_cases():
    u, rep = multigrid_poisson(1.0, np.zeros((27, 27)))
    assert rep.converged and not u.any()
    with pytest.raises(ValueError):
        multigrid_poisson(0.0, np.ones((27, 27)))
    with pytest.raises(ValueError):
        multigrid_poisson(1.0, np.ones((28, 28)))


@pytest.mark.parametrize("d", [2, 3])
def test_multigrid_manufactured_solution(d):
    rng = np.random.default_rng(d)
    dom = CubeDomain(d, 3)
    interior, _ = interior_boundary(dom)
    ubar = np.where(interior, rng.standard_normal(dom.shape), 0.0)
    rhs = np.where(interior, apply(homogenized(dom, 0.4), ubar), 0.0)
    u, rep = multigrid_poisson(0.4, rhs, tol=1e-12, max_cycles=60)
    assert rep.converged
    assert np.max(np.abs(u - ubar)) < 1e-8


@pytest.mark.parametrize("d", [2, 3])
def test_multigrid_cycle_factor(d):
    dom = CubeDomain(d, 3)
    interior, _ = interior_boundary(dom)
    t = [(dom.coords(ax) - dom.coords(ax).min()) / (dom.side - 1) for ax in range(d)]
    rhs = np.ones(dom.shape)
    for x in t:
        rhs = rhs * np.sin(np.pi * x)
    rhs = np.where(interior, rhs, 0.0)
    _, rep = multigrid_poisson(1.0, rhs, tol=1e-10)
    h = np.array(rep.history)
    assert rep.converged
    assert np.all(h[1:] / h[:-1] <= 0.2)


def test_stationary_vcycle_still_converges():
    rhs = np.where(interior_boundary(CubeDomain(2, 3))[0], 1.0, 0.0)
    u1, rep = multigrid_poisson(1.0, rhs, tol=1e-8, accelerate=False, max_cycles=100)
    u2, _ = multigrid_poisson(1.0, rhs, tol=1e-12)
    assert rep.converged
    assert np.max(np.abs(u1 - u2)) < 1e-5 * np.max(np.abs(u2))


def test_multigrid_matches_dense_oracle():
    rng = np.random.default_rng(9)
    dom = CubeDomain(2, 2)
    interior, _ = interior_boundary(dom)
    for _ in range(30):
        abar = rng.uniform(0.2, 1.0)
        rhs = np.where(interior, rng.standard_normal(dom.shape), 0.0)
        u, rep = multigrid_poisson(abar, rhs, tol=1e-13)
        ref = dense_direct(homogenized(dom, abar), rhs)
        assert np.max(np.abs(u - ref)) < 1e-8


def test_dense_one_by_one():
    dom = CubeDomain(2, 1)
    lam = np.zeros(dom.shape)
    lam[1, 1] = 1.0
    spec = OperatorSpec("heterogeneous", dom, lam, np.zeros((2, 3, 3)))
    rhs = np.zeros(dom.shape)
    rhs[1, 1] = 2.5
    u = dense_direct(spec, rhs)
    assert u[1, 1] == 2.5 and np.count_nonzero(u) == 1


def test_dense_identity_and_singular_block():
    rng = np.random.default_rng(11)
    spec, _ = cluster_spec(crossing_seeds(1)[0], 0.3)
    act = active_mask(spec)
    u = np.where(act, rng.standard_normal(spec.domain.shape), 0.0)
    np.testing.assert_allclose(dense_direct(spec, apply(spec, u)), u, atol=1e-12)
    # an interior island with no path to the boundary and no regularisation
    dom = CubeDomain(2, 2)
    a = np.zeros((2, 9, 9))
    a[0, 3, 4] = 1.0
    spec = OperatorSpec("heterogeneous", dom, np.zeros(dom.shape), a)
    with pytest.raises(np.linalg.LinAlgError):
        dense_direct(spec, np.zeros(dom.shape))
    with pytest.raises(ValueError):
        dense_direct(homogenized(CubeDomain(2, 5), 1.0), np.zeros((243, 243)))


def test_grad_norm_of_cluster_solution_is_finite():
    spec, labels = cluster_spec(crossing_seeds(1)[0], 0.1)
    u, _ = cg_solve(spec, np.where(active_mask(spec), 1.0, 0.0))
    assert np.isfinite(grad_norm(u, spec.conductance, labels.maximal_mask()))
    assert not np.any(u[~active_mask(spec)])
