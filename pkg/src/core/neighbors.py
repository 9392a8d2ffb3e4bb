"""
Periodic neighbor lists under the covalent-radius cutoff rule.

Two sites i, j are neighbors when their minimum-image distance satisfies
d <= scale * (r_i + r_j). Scale 1.0 is the strict rule, 4.0 the permissive
rule applied to indicative structures. environment_distances answers the
fixed-radius question instead, over every periodic image.
"""
from collections import defaultdict
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Set, Tuple

import numpy as np
from sklearn.neighbors import KDTree

from src.core.elements import RadiiTable, covalent_radius
from src.core.errors import CellTooSmall, IndexOutOfRange
from src.core.structure import IMAGE_SHIFTS, Structure, min_image_norms
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

# Distances below this are a site's own zero-shift copy
SELF_DISTANCE = 1e-9

Neighbor = Tuple[int, float]


@dataclass(frozen=True)
class NeighborList:
    """Per-site rows of (neighbor index, distance) sorted by index."""
    rows: Tuple[Tuple[Neighbor, ...], ...]
    scale: float

    def __len__(self) -> int:
        return len(self.rows)

    def indices(self, i: int) -> Set[int]:
        return {j for j, _ in neighbors_of(self, i)}

    def pair_count(self) -> int:
        return sum(len(row) for row in self.rows) // 2


def _site_radii(structure: Structure, radii: RadiiTable) -> np.ndarray:
    return np.array([covalent_radius(radii, e) for e in structure.elements])


def max_cutoff(structure: Structure, radii: RadiiTable, scale: float) -> float:
    """Largest pair cutoff that can occur in the structure at this scale."""
    return scale * 2.0 * float(_site_radii(structure, radii).max())


def _check_cell(structure: Structure, cutoff: float) -> None:
    widths = structure.lattice.perpendicular_widths
    if float(widths.min()) <= 2.0 * cutoff:
        raise CellTooSmall(
            f"cell widths {np.round(widths, 4).tolist()} Angstrom must exceed "
            f"2 x max cutoff = {2.0 * cutoff:.4f} Angstrom"
        )


def _validate_scale(scale: float) -> None:
    if not scale > 0.0:
        raise ValueError(f"cutoff scale must be positive, got {scale}")


def _assemble(n: int, pi: np.ndarray, pj: np.ndarray, dist: np.ndarray, scale: float) -> NeighborList:
    rows: List[List[Neighbor]] = [[] for _ in range(n)]
    for i, j, d in zip(pi.tolist(), pj.tolist(), dist.tolist()):
        rows[i].append((j, d))
        rows[j].append((i, d))
    return NeighborList(tuple(tuple(sorted(row)) for row in rows), scale)


def _filter_pairs(structure: Structure, r: np.ndarray, scale: float,
                  pi: np.ndarray, pj: np.ndarray):
    frac = structure.frac_coords
    dist = min_image_norms(structure.lattice.matrix, frac[pj] - frac[pi])
    keep = dist <= scale * (r[pi] + r[pj])
    return pi[keep], pj[keep], dist[keep]


def build_neighbor_list(structure: Structure, radii: RadiiTable, scale: float) -> NeighborList:
    """
    Build a neighbor list with a cell-list search.

    Sites are binned on a fractional grid whose bins are at least one global
    max cutoff wide, so every qualifying pair sits in adjacent bins. The
    output equals brute_force_neighbor_list exactly.

    Args:
        structure: Periodic structure
        radii: Covalent radii table
        scale: Cutoff multiplier (> 0)

    Returns:
        Symmetric NeighborList without self-pairs

    Raises:
        UnknownElement: if a site element has no radius
        CellTooSmall: if a cell width is not above twice the max cutoff
    """
    _validate_scale(scale)
    r = _site_radii(structure, radii)
    cutoff = scale * 2.0 * float(r.max())
    _check_cell(structure, cutoff)
    n = len(structure)
    if n == 1:
        return NeighborList(((),), scale)

    widths = structure.lattice.perpendicular_widths
    nbins = np.maximum(np.floor(widths / (cutoff * (1.0 + 1e-9))).astype(int), 1)
    bins = np.minimum((structure.frac_coords * nbins).astype(int), nbins - 1)

    cells: Dict[Tuple[int, int, int], List[int]] = defaultdict(list)
    for i, b in enumerate(map(tuple, bins.tolist())):
        cells[b].append(i)
    members_of = {b: np.array(m, dtype=int) for b, m in cells.items()}
    offsets = IMAGE_SHIFTS.astype(int)

    pi_parts, pj_parts = [], []
    for b in sorted(members_of):
        members = members_of[b]
        adjacent = {tuple(((np.array(b) + off) % nbins).tolist()) for off in offsets}
        for nb in sorted(adjacent):
            others = members_of.get(nb)
            if others is None:
                continue
            ii, jj = np.meshgrid(members, others, indexing="ij")
            mask = ii < jj
            pi_parts.append(ii[mask])
            pj_parts.append(jj[mask])

    pi = np.concatenate(pi_parts)
    pj = np.concatenate(pj_parts)
    pi, pj, dist = _filter_pairs(structure, r, scale, pi, pj)
    logger.debug(f"Cell list {nbins.tolist()} bins: {len(pi)} pairs at scale {scale}")
    return _assemble(n, pi, pj, dist, scale)


def brute_force_neighbor_list(structure: Structure, radii: RadiiTable, scale: float) -> NeighborList:
    """Reference O(N^2) neighbor search over all pairs and 27 images."""
    _validate_scale(scale)
    r = _site_radii(structure, radii)
    _check_cell(structure, scale * 2.0 * float(r.max()))
    n = len(structure)
    pi, pj = np.triu_indices(n, k=1)
    pi, pj, dist = _filter_pairs(structure, r, scale, pi.astype(int), pj.astype(int))
    return _assemble(n, pi, pj, dist, scale)


def neighbors_of(nl: NeighborList, i: int) -> Tuple[Neighbor, ...]:
    """
    The stored neighbor row of site i.

    Raises:
        IndexOutOfRange: if i is not a valid site index
    """
    if not 0 <= i < len(nl.rows):
        raise IndexOutOfRange(f"site index {i} out of range for {len(nl.rows)} sites")
    return nl.rows[i]


def expand_for_cutoff(structure: Structure, radii: RadiiTable, scale: float) -> Tuple[Structure, np.ndarray]:
    """
    Smallest supercell that satisfies the minimum-image condition at this scale.

    Returns:
        Tuple of (supercell, index map) where index map[k] is the original
        site index of supercell site k
    """
    _validate_scale(scale)
    cutoff = max_cutoff(structure, radii, scale)
    widths = structure.lattice.perpendicular_widths
    reps = np.where(widths > 2.0 * cutoff, 1, np.floor(2.0 * cutoff / widths).astype(int) + 1)
    if np.all(reps == 1):
        return structure, np.arange(len(structure))
    logger.debug(f"Expanding cell {reps.tolist()} for cutoff {cutoff:.3f} Angstrom")
    expanded = structure.supercell(reps.tolist())
    return expanded, np.arange(len(expanded)) % len(structure)


def environment_distances(structure: Structure, cutoff: float) -> List[np.ndarray]:
    """
    Sorted distances from each site to every periodic image of every site within a fixed cutoff.

    Images of a site itself count; its zero-shift copy does not. The cell is
    tiled far enough along each axis to cover the cutoff, so small cells
    contribute several images of one neighbor.

    Raises:
        ValueError: if cutoff is not positive
    """
    if not cutoff > 0.0:
        raise ValueError(f"environment cutoff must be positive, got {cutoff}")
    reps = np.ceil(cutoff / structure.lattice.perpendicular_widths).astype(int)
    shifts = np.array(list(product(*(range(-r, r + 1) for r in reps.tolist()))), dtype=float)
    cart = structure.cart_coords
    images = (cart[None, :, :] + (shifts @ structure.lattice.matrix)[:, None, :]).reshape(-1, 3)
    _, dist = KDTree(images).query_radius(cart, r=cutoff, return_distance=True)
    # drop the site itself
    return [np.sort(d[d > SELF_DISTANCE]) for d in dist]
