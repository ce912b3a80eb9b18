import warnings

import numpy as np
import pytest

from perchom.cluster import ClusterLabels, bfs_clusters, union_find_clusters
from perchom.lattice import CubeDomain, edge_mask
from perchom.percolation import (
    ConductanceField,
    PercolationLaw,
    ell,
    ell_width,
    field_lambda,
    mask_to_cluster,
    sample,
)


def test_full_and_empty_laws():
    dom = CubeDomain(2, 3)
    a = sample(dom, PercolationLaw(1.0), 0)
    np.testing.assert_array_equal(a.values, edge_mask(dom).astype(float))
    with pytest.warns(RuntimeWarning):
        z = sample(dom, PercolationLaw(0.0), 0)
    assert not z.values.any()


def test_law_validation():
    with pytest.raises(ValueError):
        PercolationLaw(1.5)
    with pytest.raises(ValueError):
        PercolationLaw(0.5, lambda_ell=1.0)
    with pytest.raises(ValueError):
        PercolationLaw(0.5, kind="gamma")
    with pytest.warns(RuntimeWarning):
        PercolationLaw(0.4).warn_if_subcritical(2)


def test_open_fraction_within_three_sigma():
    dom = CubeDomain(2, 5)
    p = 0.6
    a = sample(dom, PercolationLaw(p), 11)
    n = int(edge_mask(dom).sum())
    frac = a.open.sum() / n
    assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_uniform_law_range():
    a = sample(CubeDomain(3, 2), PercolationLaw(0.8, lambda_ell=4.0, kind="uniform"), 2)
    vals = a.values[a.open]
    assert vals.min() >= 0.25 and vals.max() <= 1.0
    assert np.unique(vals).size > 100


def test_sampling_is_deterministic():
    dom = CubeDomain(2, 3)
    law = PercolationLaw(0.6)
    assert np.array_equal(sample(dom, law, 5).values, sample(dom, law, 5).values)
    assert not np.array_equal(sample(dom, law, 5).values, sample(dom, law, 6).values)


def test_sub_cube_agrees_with_parent():
    law = PercolationLaw(0.6)
    big = sample(CubeDomain(2, 3), law, 9)
    # the 9-cube centred at (9, -9) is the triadic block with base (18, 0)
    small = sample(CubeDomain(2, 2, center=(9, -9)), law, 9)
    np.testing.assert_array_equal(small.values[0, :-1, :], big.values[0, 18:26, 0:9])
    np.testing.assert_array_equal(small.values[1, :, :-1], big.values[1, 18:27, 0:8])


def test_field_is_read_only():
    a = sample(CubeDomain(2, 2), PercolationLaw(0.7), 0)
    with pytest.raises(ValueError):
        a.values[0, 0, 0] = 0.5


def test_mask_is_identity_at_full_percolation():
    a = sample(CubeDomain(2, 3), PercolationLaw(1.0), 0)
    ac = mask_to_cluster(a, union_find_clusters(a))
    np.testing.assert_array_equal(ac.values, a.values)


def test_mask_is_idempotent():
    for seed in range(50):
        a = sample(CubeDomain(2, 3), PercolationLaw(0.6), seed)
        labels = union_find_clusters(a)
        once = mask_to_cluster(a, labels)
        twice = mask_to_cluster(once, union_find_clusters(once))
        np.testing.assert_array_equal(once.values, twice.values)
        assert np.all(once.values <= a.values)


def test_isolated_square_is_masked():
    # a 5x5 box is not triadic, so pad it into a 9x9 domain of closed edges
    dom = CubeDomain(2, 2)
    v = np.zeros((2,) + dom.shape)
    v[1, 0, :8] = 1.0          # top row spans the box
    v[0, :8, 0] = 1.0          # left column
    v[0, 3, 3] = v[0, 3, 4] = 1.0  # isolated unit square with corners (3,3), (4,4)
    v[1, 3, 3] = v[1, 4, 3] = 1.0
    a = ConductanceField(dom, v, PercolationLaw(0.7), 0)
    labels = union_find_clusters(a)
    ac = mask_to_cluster(a, labels).values
    square = np.zeros_like(v, dtype=bool)
    square[0, 3, 3] = square[0, 3, 4] = square[1, 3, 3] = square[1, 4, 3] = True
    assert not ac[square].any()
    np.testing.assert_array_equal(ac[~square], v[~square])
    # BFS agrees that the square is its own component
    comps = bfs_clusters(v)
    sq = frozenset({3 * 9 + 3, 3 * 9 + 4, 4 * 9 + 3, 4 * 9 + 4})
    assert sq in comps


def test_field_lambda():
    a = sample(CubeDomain(2, 3), PercolationLaw(1.0), 0)
    labels = union_find_clusters(a)
    lam = field_lambda(labels, 0.1)
    assert np.all(lam == 0.1)
    assert not field_lambda(labels, 0.0).any()
    b = sample(CubeDomain(2, 3), PercolationLaw(0.6), 1)
    lb = union_find_clusters(b)
    assert np.count_nonzero(field_lambda(lb, 0.2)) == lb.maximal_size
    with pytest.warns(RuntimeWarning):
        field_lambda(labels, 0.9)


def test_boundary_layer_width():
    assert ell(0.1, 2) == pytest.approx(np.sqrt(np.log(11.0)))
    assert ell(0.1, 3) == 1.0
    assert ell_width(0.1, 2) == 2
    assert ell_width(0.45, 2) == 2
    assert ell_width(0.01, 3) == 1
