"""
Immutable periodic-structure data model and minimum-image geometry.
"""
from dataclasses import dataclass
from enum import IntEnum
from itertools import product
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.elements import formula_of, load_radii_table
from src.core.errors import EmptyInput, NonPositiveCell, ParseError, UnknownElement

# The 27 periodic images {-1, 0, 1}^3, origin included
IMAGE_SHIFTS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=float)

FracTriple = Tuple[float, float, float]


class Tag(IntEnum):
    """Site role, numbered as in the CIF tag column."""
    SUBSURFACE = 0
    SURFACE = 1
    ADSORBATE = 2


def wrap_fractional(frac) -> np.ndarray:
    """Wrap fractional coordinates into [0, 1)."""
    wrapped = np.mod(np.asarray(frac, dtype=float), 1.0)
    # mod of a tiny negative number rounds up to exactly 1.0
    wrapped[wrapped >= 1.0] = 0.0
    return wrapped


@dataclass(frozen=True, eq=False)
class Lattice:
    """Three lattice vectors, one per row, in Angstrom."""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise NonPositiveCell(f"lattice must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NonPositiveCell("lattice has non-finite entries")
        det = float(np.linalg.det(m))
        if not det > 0.0:
            raise NonPositiveCell(f"lattice determinant must be positive, got {det:.6g}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_parameters(cls, a: float, b: float, c: float,
                        alpha: float, beta: float, gamma: float) -> "Lattice":
        """
        Build a lattice from cell lengths (Angstrom) and angles (degrees).

        Standard crystallographic orientation: a along x, b in the xy-plane.

        Raises:
            NonPositiveCell: for non-positive lengths, angles outside (0, 180)
                or an angle combination with no real cell
        """
        for name, value in (("a", a), ("b", b), ("c", c)):
            if not value > 0.0:
                raise NonPositiveCell(f"cell length {name} must be positive, got {value}")
        for name, value in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
            if not 0.0 < value < 180.0:
                raise NonPositiveCell(f"cell angle {name} must lie in (0, 180), got {value}")

        ca, cb, cg = (np.cos(np.radians(x)) for x in (alpha, beta, gamma))
        sg = np.sin(np.radians(gamma))
        cx = c * cb
        cy = c * (ca - cb * cg) / sg
        cz_sq = c * c - cx * cx - cy * cy
        if not cz_sq > 0.0:
            raise NonPositiveCell(f"cell angles ({alpha}, {beta}, {gamma}) do not form a cell")
        matrix = np.array([
            [a, 0.0, 0.0],
            [b * cg, b * sg, 0.0],
            [cx, cy, np.sqrt(cz_sq)],
        ])
        return cls(matrix)

    @classmethod
    def cubic(cls, a: float) -> "Lattice":
        return cls(np.eye(3) * a)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.matrix, axis=1)

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def perpendicular_widths(self) -> np.ndarray:
        """Distance between opposite cell faces along each reciprocal direction."""
        m = self.matrix
        areas = np.array([
            np.linalg.norm(np.cross(m[1], m[2])),
            np.linalg.norm(np.cross(m[2], m[0])),
            np.linalg.norm(np.cross(m[0], m[1])),
        ])
        return self.volume / areas

    @property
    def surface_normal(self) -> np.ndarray:
        """Unit normal of the a x b plane."""
        n = np.cross(self.matrix[0], self.matrix[1])
        return n / np.linalg.norm(n)

    def parameters(self) -> Tuple[float, float, float, float, float, float]:
        """Return (a, b, c, alpha, beta, gamma) with angles in degrees."""
        va, vb, vc = self.matrix
        a, b, c = self.lengths

        def angle(u, v, nu, nv):
            cosine = np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)
            return float(np.degrees(np.arccos(cosine)))

        return (float(a), float(b), float(c),
                angle(vb, vc, b, c), angle(va, vc, a, c), angle(va, vb, a, b))

    def to_cartesian(self, frac) -> np.ndarray:
        return np.asarray(frac, dtype=float) @ self.matrix

    def to_fractional(self, cart) -> np.ndarray:
        return np.linalg.solve(self.matrix.T, np.asarray(cart, dtype=float).T).T

    def rotated(self, rotation) -> "Lattice":
        return Lattice(self.matrix @ np.asarray(rotation, dtype=float).T)

    def scaled(self, reps: Sequence[int]) -> "Lattice":
        return Lattice(self.matrix * np.asarray(reps, dtype=float)[:, None])

    def allclose(self, other: "Lattice", atol: float = 1e-8) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0.0))


def min_image_norms(matrix: np.ndarray, dfrac: np.ndarray) -> np.ndarray:
    """
    Minimum Cartesian length over the 27 images of each fractional displacement.

    Every row goes through the same elementwise arithmetic regardless of how
    many rows are passed, so one pair gives bit-identical results whether it
    is measured alone or inside a batch.
    """
    d = np.atleast_2d(np.asarray(dfrac, dtype=float))
    d = d - np.round(d)
    m = matrix
    best = np.full(d.shape[0], np.inf)
    for shift in IMAGE_SHIFTS:
        f0 = d[:, 0] + shift[0]
        f1 = d[:, 1] + shift[1]
        f2 = d[:, 2] + shift[2]
        x = f0 * m[0, 0] + f1 * m[1, 0] + f2 * m[2, 0]
        y = f0 * m[0, 1] + f1 * m[1, 1] + f2 * m[2, 1]
        z = f0 * m[0, 2] + f1 * m[1, 2] + f2 * m[2, 2]
        best = np.minimum(best, np.sqrt(x * x + y * y + z * z))
    return best


def min_image_distance(lattice: Lattice, a: Sequence[float], b: Sequence[float]) -> float:
    """
    Minimum-image distance between two fractional positions.

    Args:
        lattice: Periodic cell
        a: First fractional coordinate triple
        b: Second fractional coordinate triple

    Returns:
        Distance in Angstrom over the 27 images {-1, 0, 1}^3 of b
    """
    dfrac = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    return float(min_image_norms(lattice.matrix, dfrac.reshape(1, 3))[0])


@dataclass(frozen=True)
class Site:
    """One atom: element, wrapped fractional position and role tag."""
    element: str
    frac: FracTriple
    tag: Tag = Tag.SURFACE

    def __post_init__(self):
        if self.element not in load_radii_table():
            raise UnknownElement(self.element)
        frac = np.asarray(self.frac, dtype=float).reshape(3)
        if not np.all(np.isfinite(frac)):
            raise ParseError(f"non-finite fractional coordinates {tuple(frac)} for {self.element}")
        wrapped = wrap_fractional(frac)
        object.__setattr__(self, "frac", tuple(float(x) for x in wrapped))
        object.__setattr__(self, "tag", Tag(self.tag))


@dataclass(frozen=True, eq=False)
class Structure:
    """A periodic lattice with an ordered list of tagged sites."""
    lattice: Lattice
    sites: Tuple[Site, ...]

    def __post_init__(self):
        sites = tuple(self.sites)
        if not sites:
            raise EmptyInput("a structure needs at least one site")
        object.__setattr__(self, "sites", sites)

    def __len__(self) -> int:
        return len(self.sites)

    @classmethod
    def from_arrays(cls, lattice: Lattice, elements: Sequence[str], frac,
                    tags: Optional[Sequence[int]] = None) -> "Structure":
        frac = np.asarray(frac, dtype=float).reshape(-1, 3)
        if tags is None:
            tags = [Tag.SURFACE] * len(elements)
        sites = tuple(Site(e, tuple(f), Tag(t)) for e, f, t in zip(elements, frac, tags))
        return cls(lattice, sites)

    @property
    def elements(self) -> List[str]:
        return [s.element for s in self.sites]

    @property
    def tags(self) -> np.ndarray:
        return np.array([int(s.tag) for s in self.sites], dtype=int)

    @property
    def frac_coords(self) -> np.ndarray:
        return np.array([s.frac for s in self.sites], dtype=float)

    @property
    def cart_coords(self) -> np.ndarray:
        return self.lattice.to_cartesian(self.frac_coords)

    @property
    def adsorbate_indices(self) -> List[int]:
        return [i for i, s in enumerate(self.sites) if s.tag == Tag.ADSORBATE]

    def surface_heights(self) -> np.ndarray:
        """
        Height of every site along the a x b normal, in Angstrom.

        The c coordinate is unwrapped at the widest empty gap along c, so a slab
        that straddles the cell boundary keeps its layer order.
        """
        z = self.frac_coords[:, 2]
        order = np.sort(z)
        gaps = np.diff(np.concatenate([order, [order[0] + 1.0]]))
        widest = int(np.argmax(gaps))
        origin = order[(widest + 1) % len(order)]
        unwrapped = np.mod(z - origin, 1.0)
        c_height = float(np.dot(self.lattice.matrix[2], self.lattice.surface_normal))
        return unwrapped * c_height

    def with_sites(self, sites: Iterable[Site]) -> "Structure":
        return Structure(self.lattice, tuple(sites))

    def permuted(self, order: Sequence[int]) -> "Structure":
        return Structure(self.lattice, tuple(self.sites[i] for i in order))

    def rotated(self, rotation) -> "Structure":
        """Rigidly rotate the Cartesian realization; fractional coordinates are unchanged."""
        return Structure(self.lattice.rotated(rotation), self.sites)

    def translated(self, shift_cart: Sequence[float]) -> "Structure":
        """Rigidly translate every site by a Cartesian vector, re-wrapping into the cell."""
        dfrac = self.lattice.to_fractional(np.asarray(shift_cart, dtype=float))
        return Structure(self.lattice, tuple(
            Site(s.element, tuple(np.asarray(s.frac) + dfrac), s.tag) for s in self.sites))

    def supercell(self, reps: Sequence[int]) -> "Structure":
        """
        Repeat the cell reps[0] x reps[1] x reps[2] times.

        Replica-major ordering: supercell site k is a copy of site k % len(self).
        """
        reps_arr = np.asarray(reps, dtype=int)
        if np.any(reps_arr < 1):
            raise ValueError(f"replication counts must be >= 1, got {tuple(reps)}")
        frac = self.frac_coords
        sites = []
        for shift in product(*(range(n) for n in reps_arr)):
            new_frac = (frac + np.asarray(shift, dtype=float)) / reps_arr
            for site, f in zip(self.sites, new_frac):
                sites.append(Site(site.element, tuple(f), site.tag))
        return Structure(self.lattice.scaled(reps_arr), tuple(sites))

    def same_as(self, other: "Structure", atol: float = 1e-8) -> bool:
        """Equality of lattice, elements, tags and periodic fractional positions."""
        if len(self) != len(other) or self.elements != other.elements:
            return False
        if not np.array_equal(self.tags, other.tags):
            return False
        if not self.lattice.allclose(other.lattice, atol=atol):
            return False
        d = self.frac_coords - other.frac_coords
        d -= np.round(d)
        return bool(np.all(np.abs(d) <= atol))


def composition_formula(structure: Structure) -> str:
    """
    Canonical formula of a structure.

    Elements sorted alphabetically, count suffix omitted when 1
    ([Al, Al, As, As] -> 'Al2As2').
    """
    return formula_of(structure.elements)
