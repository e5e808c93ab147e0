import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cemsplit.coarse import (build_coarse_decomposition, color_neighborhoods, partition_of_unity,
                             pou_gradient_sum)
from cemsplit.errors import DecompositionError
from cemsplit.fem import build_fine_mesh


@pytest.fixture(scope="module")
def paper_grid():
    return build_coarse_decomposition(build_fine_mesh(100), 10, 1)


def test_element_counts(paper_grid):
    K = paper_grid.element(37)
    assert K.cells.size == 100 and K.nodes.size == 121
    assert paper_grid.H == 0.1 and paper_grid.n_elements == 100


def test_oversampling_interior_and_corner(paper_grid):
    assert paper_grid.oversampled(55).elements.size == 9
    assert paper_grid.oversampled(0).elements.size == 4
    assert paper_grid.oversampled(99, 0).elements.tolist() == [99]


def test_non_nested_rejected():
    with pytest.raises(DecompositionError):
        build_coarse_decomposition(build_fine_mesh(10), 3)
    with pytest.raises(DecompositionError):
        build_coarse_decomposition(build_fine_mesh(10), 5, -1)


@settings(max_examples=20, deadline=None)
@given(N=st.integers(1, 6), m=st.integers(2, 4), ell=st.integers(0, 3))
def test_oversampling_nested_and_sorted(N, m, ell):
    d = build_coarse_decomposition(build_fine_mesh(N * m), N, ell)
    for i in range(d.n_elements):
        K, Kp, Kpp = d.element(i), d.oversampled(i), d.oversampled(i, ell + 1)
        assert set(K.nodes) <= set(Kp.nodes) <= set(Kpp.nodes)
        assert set(K.cells) <= set(Kp.cells)
        for arr in (Kp.cells, Kp.nodes, Kp.interior):
            assert np.all(np.diff(arr) > 0)
        assert not np.any(d.mesh.boundary[Kp.interior])


@settings(max_examples=20, deadline=None)
@given(N=st.integers(2, 6), m=st.integers(1, 4))
def test_partition_of_unity(N, m):
    d = build_coarse_decomposition(build_fine_mesh(N * m), N)
    chi = partition_of_unity(d)
    assert np.abs(chi.sum(axis=0) - 1.0).max() <= 1e-12
    coarse_nodes = [d.mesh.node_index(px * m, py * m) for py in range(N + 1) for px in range(N + 1)]
    np.testing.assert_allclose(chi[:, coarse_nodes], np.eye((N + 1) ** 2), atol=1e-15)


def test_pou_support_is_neighborhood():
    d = build_coarse_decomposition(build_fine_mesh(12), 4)
    chi = partition_of_unity(d)
    for p in d.interior_coarse_nodes:
        support = np.flatnonzero(chi[p] > 0)
        assert set(support) == set(d.neighborhood(p).interior)


def test_each_interior_node_in_four_neighborhood_closures():
    d = build_coarse_decomposition(build_fine_mesh(12), 4)
    chi = partition_of_unity(d)
    count = np.zeros(d.mesh.node_count, dtype=int)
    for p in range((d.N + 1) ** 2):
        px, py = d.coarse_node_xy(p)
        count[d.region(px - 1, px + 1, py - 1, py + 1).nodes] += 1
    assert np.all(count[~d.mesh.boundary] >= 1)
    # a node strictly inside a coarse cell sees exactly the four hats of that cell
    inside = [d.mesh.node_index(x, y) for x in (1, 2) for y in (1, 2)]
    assert np.all(count[inside] == 4)
    assert np.all((chi[:, inside] > 0).sum(axis=0) == 4)


def test_gradient_sum_bound_and_oracle():
    d = build_coarse_decomposition(build_fine_mesh(20), 5)
    g = pou_gradient_sum(d)
    assert g.max() <= 4 / d.H**2 + 1e-9
    # finite difference oracle on each cell center
    chi = partition_of_unity(d)
    h = d.mesh.h
    num = np.zeros(d.mesh.cell_count)
    for c, nodes in enumerate(d.mesh.cells):
        v = chi[:, nodes]  # corners: (0,0), (1,0), (1,1), (0,1)
        dx = 0.5 * ((v[:, 1] - v[:, 0]) + (v[:, 2] - v[:, 3])) / h
        dy = 0.5 * ((v[:, 3] - v[:, 0]) + (v[:, 2] - v[:, 1])) / h
        num[c] = np.sum(dx**2 + dy**2)
    np.testing.assert_allclose(g, num, rtol=1e-12)


def test_coloring_counts_and_blocks(paper_grid):
    colors = color_neighborhoods(paper_grid)
    assert len(colors) == 81
    assert sorted(np.bincount(list(colors.values())).tolist()) == [16, 20, 20, 25]
    N1 = paper_grid.N + 1
    p = 3 * N1 + 4
    assert len({colors[p], colors[p + 1], colors[p + N1], colors[p + N1 + 1]}) == 4


@pytest.mark.parametrize("N", [4, 5, 10])
def test_same_color_neighborhoods_disjoint(N):
    d = build_coarse_decomposition(build_fine_mesh(2 * N), N)
    colors = color_neighborhoods(d)
    for p, q in itertools.combinations(d.interior_coarse_nodes, 2):
        if colors[p] == colors[q]:
            assert not set(d.neighborhood(p).interior) & set(d.neighborhood(q).interior)
