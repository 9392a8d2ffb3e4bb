"""Tests for periodic neighbor lists."""
from itertools import product

import numpy as np
import pytest

from src.core.errors import CellTooSmall, IndexOutOfRange
from src.core.neighbors import (
    brute_force_neighbor_list, build_neighbor_list, environment_distances, expand_for_cutoff, max_cutoff,
    neighbors_of,
)
from src.core.structure import Lattice, Structure

from tests.conftest import random_structure


def _mixed_structure(seed: int) -> Structure:
    """Up to 200 H/C/O sites in a seeded triclinic cell wide enough for scale 4."""
    rng = np.random.default_rng(seed)
    lattice = Lattice.from_parameters(*rng.uniform(18.0, 24.0, 3), *rng.uniform(75.0, 105.0, 3))
    n = int(rng.integers(2, 201))
    symbols = [("H", "C", "O")[k] for k in rng.integers(3, size=n)]
    return Structure.from_arrays(lattice, symbols, rng.random((n, 3)), rng.integers(3, size=n))


def test_golden_strict_neighbors(golden_structure, radii):
    """The center Cu bonds to H and four Cu; H bonds only to the center."""
    nl = build_neighbor_list(golden_structure, radii, 1.0)
    assert nl.indices(0) == {1, 2, 3, 4, 5}
    assert nl.indices(1) == {0}
    assert nl.indices(2) == {0}
    assert nl.pair_count() == 5


def test_distances_stored(golden_structure, radii):
    nl = build_neighbor_list(golden_structure, radii, 1.0)
    distances = dict(neighbors_of(nl, 0))
    assert distances[1] == pytest.approx(1.5)
    assert distances[5] == pytest.approx(2.5)


def test_rows_sorted_by_index(golden_structure, radii):
    nl = build_neighbor_list(golden_structure, radii, 1.0)
    for row in nl.rows:
        assert [j for j, _ in row] == sorted(j for j, _ in row)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("scale", [1.0, 4.0])
def test_cell_list_matches_brute_force(seed, scale, radii):
    """Cell-list and all-pairs searches give identical lists."""
    structure = random_structure(np.random.default_rng(seed), 80)
    fast = build_neighbor_list(structure, radii, scale)
    slow = brute_force_neighbor_list(structure, radii, scale)
    assert fast.rows == slow.rows


@pytest.mark.parametrize("seed", range(50))
def test_mixed_cells_match_brute_force(seed, radii):
    structure = _mixed_structure(seed)
    for scale in (1.0, 4.0):
        assert build_neighbor_list(structure, radii, scale).rows == \
            brute_force_neighbor_list(structure, radii, scale).rows, scale


@pytest.mark.parametrize("seed", range(0, 50, 5))
def test_neighbor_sets_grow_with_scale(seed, radii):
    structure = _mixed_structure(seed)
    lists = [build_neighbor_list(structure, radii, s) for s in (1.0, 2.0, 4.0)]
    for smaller, larger in zip(lists, lists[1:]):
        for i in range(len(structure)):
            assert smaller.indices(i) <= larger.indices(i)


@pytest.mark.parametrize("scale", [1.0, 4.0])
def test_symmetry_and_no_self_pairs(scale, radii):
    structure = random_structure(np.random.default_rng(11), 60)
    nl = build_neighbor_list(structure, radii, scale)
    for i in range(len(structure)):
        assert i not in nl.indices(i)
        for j, d in neighbors_of(nl, i):
            assert (i, d) in neighbors_of(nl, j)


def test_skewed_cell_matches_brute_force(radii):
    """Non-orthogonal cells use perpendicular widths for binning."""
    lattice = Lattice.from_parameters(14.0, 15.0, 16.0, 80.0, 95.0, 65.0)
    rng = np.random.default_rng(5)
    structure = Structure.from_arrays(lattice, ["C"] * 50, rng.random((50, 3)))
    assert build_neighbor_list(structure, radii, 1.0).rows == \
        brute_force_neighbor_list(structure, radii, 1.0).rows


def test_single_site(radii):
    structure = Structure.from_arrays(Lattice.cubic(5.0), ["H"], [[0.1, 0.2, 0.3]])
    nl = build_neighbor_list(structure, radii, 1.0)
    assert len(nl) == 1
    assert nl.indices(0) == set()


def test_cell_too_small(golden_structure, radii):
    """A 10 Angstrom Cu cell cannot host the permissive cutoff directly."""
    with pytest.raises(CellTooSmall):
        build_neighbor_list(golden_structure, radii, 4.0)
    with pytest.raises(CellTooSmall):
        brute_force_neighbor_list(golden_structure, radii, 4.0)


def test_invalid_scale(golden_structure, radii):
    with pytest.raises(ValueError):
        build_neighbor_list(golden_structure, radii, 0.0)


def test_index_out_of_range(golden_structure, radii):
    nl = build_neighbor_list(golden_structure, radii, 1.0)
    with pytest.raises(IndexOutOfRange):
        neighbors_of(nl, 6)
    with pytest.raises(IndexOutOfRange):
        neighbors_of(nl, -1)


class TestExpandForCutoff:
    def test_expands_until_valid(self, golden_structure, radii):
        """The supercell is wide enough and maps back to the original sites."""
        expanded, index_map = expand_for_cutoff(golden_structure, radii, 4.0)
        cutoff = max_cutoff(golden_structure, radii, 4.0)
        assert np.all(expanded.lattice.perpendicular_widths > 2.0 * cutoff)
        assert len(expanded) == 27 * len(golden_structure)
        assert index_map.tolist()[:6] == list(range(6))
        assert [expanded.elements[k] for k in range(len(expanded))] == \
            [golden_structure.elements[i] for i in index_map]
        build_neighbor_list(expanded, radii, 4.0)

    def test_no_expansion_needed(self, golden_structure, radii):
        expanded, index_map = expand_for_cutoff(golden_structure, radii, 1.0)
        assert expanded is golden_structure
        assert index_map.tolist() == list(range(6))


class TestEnvironmentDistances:
    def test_counts_images_of_the_site_itself(self):
        structure = Structure.from_arrays(Lattice.cubic(3.0), ["H"], [[0.2, 0.4, 0.6]])
        np.testing.assert_allclose(environment_distances(structure, 4.0)[0], [3.0] * 6)

    def test_matches_image_enumeration(self):
        structure = random_structure(np.random.default_rng(8), 12, box=7.0)
        cart = structure.cart_coords
        matrix = structure.lattice.matrix
        shifts = [np.array(s, dtype=float) @ matrix for s in product((-1, 0, 1), repeat=3)]
        found = environment_distances(structure, 5.0)
        for i in range(len(structure)):
            expected = []
            for j in range(len(structure)):
                for shift in shifts:
                    d = float(np.linalg.norm(cart[j] + shift - cart[i]))
                    if 1e-9 < d <= 5.0:
                        expected.append(d)
            np.testing.assert_allclose(found[i], sorted(expected), atol=1e-10)

    def test_invalid_cutoff(self, golden_structure):
        with pytest.raises(ValueError):
            environment_distances(golden_structure, 0.0)
