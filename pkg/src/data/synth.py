"""
Deterministic synthetic catalysts, a Morse pair-sum energy oracle and the
indicative-CIF generator used by the PIR experiment.

Slabs are fcc-like: (100) square, (110) rectangular and (111) hexagonal
layers of one metal, or two metals in a checkerboard. One adsorbate group sits
above the top layer at an ontop, bridge or hollow site, shifted by Gaussian
jitter. Every random choice draws from numpy Generators seeded by
(spec seed, index), so a (spec, index) pair always yields the same sample.
"""
import hashlib
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import (
    DEFAULT_ADSORBATES, DEFAULT_JITTER, DEFAULT_LATTICE_RANGE, DEFAULT_MILLERS, DEFAULT_PALETTE,
    DEFAULT_SLAB_DIMS, DEFAULT_VACUUM, INDICATIVE_CANDIDATES, INDICATIVE_NOISE,
    INDICATIVE_TAG_STRIP_PROBABILITY, ORACLE_CUTOFF, STRICT_SCALE,
)
from src.core.elements import RadiiTable, covalent_radius, formula_symbols, load_radii_table, parse_formula
from src.core.errors import NoAdsorbate, ParseError, UnknownElement, UnrealizableMeta
from src.core.neighbors import build_neighbor_list
from src.core.structure import Lattice, Site, Structure, Tag, composition_formula, min_image_norms
from src.data.dataset import Sample, data_block_name
from src.parsers.cif import parse_cif, write_cif
from src.text.stringify import SystemMeta, three_part_string
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

# Group geometry relative to the binding atom (first atom), Angstrom
_TETRAHEDRAL_H = [
    (1.03 * math.cos(t), 1.03 * math.sin(t), 0.36)
    for t in (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0)
]
ADSORBATE_GEOMETRIES: Dict[str, Tuple[Tuple[str, Tuple[float, float, float]], ...]] = {
    "H": (("H", (0.0, 0.0, 0.0)),),
    "O": (("O", (0.0, 0.0, 0.0)),),
    "C": (("C", (0.0, 0.0, 0.0)),),
    "CH": (("C", (0.0, 0.0, 0.0)), ("H", (0.0, 0.0, 1.09))),
    "OH": (("O", (0.0, 0.0, 0.0)), ("H", (0.0, 0.0, 0.97))),
    "CCH3": (("C", (0.0, 0.0, 0.0)), ("C", (0.0, 0.0, 1.5)))
            + tuple(("H", (x, y, 1.5 + z)) for x, y, z in _TETRAHEDRAL_H),
}

SITE_KINDS = ("ontop", "bridge", "hollow")
BOND_FRACTION = 0.85
# Largest in-plane offset from the first contact atom, as a fraction of the bond
MAX_LATERAL_FRACTION = 0.8
MIN_SITE_HEIGHT = 0.5  # Angstrom
SLAB_BASE_FRACTION = 0.2


@dataclass(frozen=True)
class FacetGeometry:
    """In-plane cell lengths and layer spacing in units of the lattice constant."""
    gamma: float
    in_plane: Tuple[float, float]
    spacing: float
    offsets: Tuple[Tuple[float, float], ...]
    hollow: Tuple[Tuple[int, int], ...]


FACETS: Dict[Tuple[int, int, int], FacetGeometry] = {
    (1, 0, 0): FacetGeometry(90.0, (1 / math.sqrt(2), 1 / math.sqrt(2)), 0.5,
                             ((0.0, 0.0), (0.5, 0.5)), ((0, 0), (1, 0), (0, 1), (1, 1))),
    (1, 1, 0): FacetGeometry(90.0, (1 / math.sqrt(2), 1.0), 1 / (2 * math.sqrt(2)),
                             ((0.0, 0.0), (0.5, 0.5)), ((0, 0), (1, 0), (0, 1), (1, 1))),
    (1, 1, 1): FacetGeometry(60.0, (1 / math.sqrt(2), 1 / math.sqrt(2)), 1 / math.sqrt(3),
                             ((0.0, 0.0), (1 / 3, 1 / 3), (2 / 3, 2 / 3)), ((0, 0), (1, 0), (0, 1))),
}


def _digest(*parts) -> bytes:
    return hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()


def _hash_units(*parts) -> Tuple[float, ...]:
    """Four deterministic uniforms in [0, 1) from a hash of the parts."""
    digest = _digest(*parts)
    return tuple(int.from_bytes(digest[i:i + 8], "little") / 2.0 ** 64 for i in range(0, 32, 8))


def _hash_int(*parts) -> int:
    return int.from_bytes(_digest(*parts)[:8], "little")


@dataclass(frozen=True)
class GenSpec:
    """Generator settings."""
    palette: Tuple[str, ...] = DEFAULT_PALETTE
    slab_dims: Tuple[int, int, int] = DEFAULT_SLAB_DIMS
    lattice_range: Tuple[float, float] = DEFAULT_LATTICE_RANGE
    adsorbates: Tuple[str, ...] = DEFAULT_ADSORBATES
    millers: Tuple[Tuple[int, int, int], ...] = DEFAULT_MILLERS
    jitter: float = DEFAULT_JITTER
    vacuum: float = DEFAULT_VACUUM
    seed: int = 0

    def __post_init__(self):
        table = load_radii_table()
        for element in self.palette:
            if element not in table:
                raise UnknownElement(element)
        if len(self.slab_dims) != 3 or min(self.slab_dims) < 1:
            raise ValueError(f"slab dims must be three positive integers, got {self.slab_dims}")
        lo, hi = self.lattice_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"lattice range must satisfy 0 < lo <= hi, got {self.lattice_range}")
        for name in self.adsorbates:
            if name not in ADSORBATE_GEOMETRIES:
                raise ValueError(f"no placement geometry for adsorbate '{name}'")
            missing = set(formula_symbols(name)) - set(self.palette)
            if missing:
                raise ValueError(f"adsorbate {name} uses elements outside the palette: {sorted(missing)}")
        for miller in self.millers:
            if tuple(miller) not in FACETS:
                raise ValueError(f"unsupported facet {miller}; choose from {sorted(FACETS)}")
        if self.jitter < 0.0 or self.vacuum <= 0.0:
            raise ValueError("jitter must be non-negative and vacuum positive")
        if not self.metals:
            raise ValueError("palette has no catalyst element outside the adsorbate menu")

    @property
    def metals(self) -> Tuple[str, ...]:
        adsorbate_elements = {s for name in self.adsorbates for s in formula_symbols(name)}
        return tuple(sorted(e for e in self.palette if e not in adsorbate_elements))

    @property
    def catalysts(self) -> List[Tuple[str, ...]]:
        """Unary metals followed by every binary pair, all in sorted element order."""
        unary = [(m,) for m in self.metals]
        return unary + [tuple(pair) for pair in combinations(self.metals, 2)]

    def lattice_constant(self, catalyst: Sequence[str], miller: Tuple[int, int, int]) -> float:
        lo, hi = self.lattice_range
        u = _hash_units(self.seed, "lattice", "-".join(catalyst), miller)[0]
        return lo + (hi - lo) * u


@dataclass(frozen=True)
class OracleParams:
    """Seeded Morse parameters for every element pair."""
    seed: int = 0
    cutoff: float = ORACLE_CUTOFF

    def pair(self, a: str, b: str, radii: Optional[RadiiTable] = None) -> Tuple[float, float, float]:
        """
        Morse parameters of one element pair.

        Returns:
            Tuple of (well depth D in eV, width a in 1/Angstrom, r0 in Angstrom),
            symmetric in the pair
        """
        return _pair_params(self.seed, *sorted((a, b)), radii or load_radii_table())


def _pair_params(seed: int, a: str, b: str, radii: RadiiTable) -> Tuple[float, float, float]:
    u_depth, u_width, _, _ = _hash_units(seed, "morse", a, b)
    r0 = covalent_radius(radii, a) + covalent_radius(radii, b)
    return 0.1 + 0.9 * u_depth, 1.0 + u_width, r0


def oracle_energy(structure: Structure, params: OracleParams, radii: Optional[RadiiTable] = None) -> float:
    """
    Morse pair sum between adsorbate and non-adsorbate sites.

    E = sum of D[(1 - exp(-a (d - r0)))^2 - 1] over adsorbate/non-adsorbate
    pairs whose minimum-image distance is within the cutoff.

    Raises:
        NoAdsorbate: if no site is tagged Adsorbate
    """
    radii = radii or load_radii_table()
    ads = structure.adsorbate_indices
    if not ads:
        raise NoAdsorbate("oracle energy needs at least one Adsorbate site")
    others = [i for i in range(len(structure)) if i not in set(ads)]
    if not others:
        return 0.0
    frac = structure.frac_coords
    elements = structure.elements
    pairs = [(i, j) for i in ads for j in others]
    dfrac = np.array([frac[j] - frac[i] for i, j in pairs])
    dist = min_image_norms(structure.lattice.matrix, dfrac)

    energy = 0.0
    cache: Dict[Tuple[str, str], Tuple[float, float, float]] = {}
    for (i, j), d in zip(pairs, dist.tolist()):
        if d > params.cutoff:
            continue
        key = (elements[i], elements[j])
        if key not in cache:
            cache[key] = params.pair(*key, radii)
        depth, width, r0 = cache[key]
        energy += depth * ((1.0 - math.exp(-width * (d - r0))) ** 2 - 1.0)
    return energy


@dataclass(frozen=True)
class Slab:
    structure: Structure
    catalyst: Tuple[str, ...]
    miller: Tuple[int, int, int]
    facet: FacetGeometry
    lattice_constant: float
    top_z: float
    dims: Tuple[int, int, int]

    def top_atom(self, i: int, j: int) -> Tuple[np.ndarray, str]:
        """Cartesian xy and element of top-layer atom (i, j), indices taken periodically."""
        nx, ny = self.dims[0], self.dims[1]
        layer = self.dims[2] - 1
        off = self.facet.offsets[layer % len(self.facet.offsets)]
        frac = np.array([(i + off[0]) / nx, (j + off[1]) / ny, 0.0])
        element = self.catalyst[(i + j + layer) % len(self.catalyst)]
        return self.structure.lattice.to_cartesian(frac)[:2], element


def build_slab(spec: GenSpec, catalyst: Sequence[str], miller: Tuple[int, int, int]) -> Slab:
    """
    Build the bare slab of one catalyst and facet.

    The top layer is tagged Surface, deeper layers Subsurface.
    """
    catalyst = tuple(sorted(catalyst))
    facet = FACETS[tuple(miller)]
    a = spec.lattice_constant(catalyst, miller)
    nx, ny, layers = spec.slab_dims
    s1, s2 = facet.in_plane[0] * a, facet.in_plane[1] * a
    dz = facet.spacing * a
    c_len = (layers - 1) * dz + spec.vacuum
    lattice = Lattice.from_parameters(nx * s1, ny * s2, c_len, 90.0, 90.0, facet.gamma)
    z0 = SLAB_BASE_FRACTION * c_len

    sites = []
    for layer in range(layers):
        off = facet.offsets[layer % len(facet.offsets)]
        tag = Tag.SURFACE if layer == layers - 1 else Tag.SUBSURFACE
        z = (z0 + layer * dz) / c_len
        for i in range(nx):
            for j in range(ny):
                element = catalyst[(i + j + layer) % len(catalyst)]
                sites.append(Site(element, ((i + off[0]) / nx, (j + off[1]) / ny, z), tag))
    return Slab(Structure(lattice, tuple(sites)), catalyst, tuple(miller), facet, a,
                z0 + (layers - 1) * dz, (nx, ny, layers))


def _site_center(slab: Slab, kind: str, i: int, j: int, direction: int) -> Tuple[np.ndarray, List[str]]:
    if kind == "ontop":
        members = [(0, 0)]
    elif kind == "bridge":
        members = [(0, 0), ((1, 0), (0, 1))[direction]]
    else:
        members = list(slab.facet.hollow)
    atoms = [slab.top_atom(i + di, j + dj) for di, dj in members]
    center = np.mean([xy for xy, _ in atoms], axis=0)
    return center, [el for _, el in atoms]


def place_adsorbate(slab: Slab, adsorbate: str, rng: np.random.Generator, jitter: float,
                    radii: Optional[RadiiTable] = None) -> Structure:
    """
    Put one adsorbate group above a random top-layer site.

    The binding atom sits where its distance to the site's first contact atom
    is 0.85 of the covalent pair sum. A site center too far from that atom to
    reach it (wide hollows on large lattices) slides toward it first. The
    whole group is then shifted by Gaussian jitter.
    """
    radii = radii or load_radii_table()
    geometry = ADSORBATE_GEOMETRIES[adsorbate]
    nx, ny, _ = slab.dims
    kind = SITE_KINDS[int(rng.integers(len(SITE_KINDS)))]
    i, j = int(rng.integers(nx)), int(rng.integers(ny))
    direction = int(rng.integers(2))
    center, contacts = _site_center(slab, kind, i, j, direction)

    anchor_xy, _ = slab.top_atom(i, j)
    binding = geometry[0][0]
    contact_radius = float(np.mean([covalent_radius(radii, e) for e in contacts]))
    bond = BOND_FRACTION * (covalent_radius(radii, binding) + contact_radius)
    away = center - anchor_xy
    lateral = float(np.linalg.norm(away))
    if lateral > MAX_LATERAL_FRACTION * bond:
        center = anchor_xy + away * (MAX_LATERAL_FRACTION * bond / lateral)
        lateral = MAX_LATERAL_FRACTION * bond
    height = math.sqrt(max(bond * bond - lateral * lateral, MIN_SITE_HEIGHT ** 2))

    origin = np.array([center[0], center[1], slab.top_z + height]) + rng.normal(0.0, jitter, 3)
    lattice = slab.structure.lattice
    sites = list(slab.structure.sites)
    for element, offset in geometry:
        frac = lattice.to_fractional(origin + np.asarray(offset))
        sites.append(Site(element, tuple(frac), Tag.ADSORBATE))
    return Structure(lattice, tuple(sites))


def _catalyst_of(spec: GenSpec, meta: SystemMeta) -> Tuple[str, ...]:
    try:
        elements = tuple(sorted(parse_formula(meta.catalyst_formula)))
    except ParseError as e:
        raise UnrealizableMeta(str(e)) from None
    if elements not in spec.catalysts:
        raise UnrealizableMeta(f"catalyst {meta.catalyst_formula} is not buildable from palette {spec.metals}")
    if meta.miller not in FACETS or meta.miller not in {tuple(m) for m in spec.millers}:
        raise UnrealizableMeta(f"facet {meta.miller} is not generated")
    if meta.adsorbate not in ADSORBATE_GEOMETRIES:
        raise UnrealizableMeta(f"no placement geometry for adsorbate '{meta.adsorbate}'")
    return elements


def _meta_key(meta: SystemMeta) -> int:
    return _hash_int("system", meta.adsorbate, meta.catalyst_formula, meta.miller)


def _make_sample(structure: Structure, meta: SystemMeta, params: OracleParams, radii: RadiiTable) -> Sample:
    # store exactly what the dataset file will hold
    structure = parse_cif(write_cif(structure, data_block_name(meta))).structure
    nl = build_neighbor_list(structure, radii, STRICT_SCALE)
    config = three_part_string(structure, meta, nl)
    return Sample(structure, meta, config, oracle_energy(structure, params, radii))


def realize_slab(spec: GenSpec, meta: SystemMeta) -> Slab:
    """
    The slab a SystemMeta names.

    Raises:
        UnrealizableMeta: if the catalyst, facet or adsorbate cannot be built,
            or the built slab's formula differs from the metadata
    """
    slab = build_slab(spec, _catalyst_of(spec, meta), meta.miller)
    built = composition_formula(slab.structure)
    if built != meta.catalyst_formula:
        raise UnrealizableMeta(f"slab for {meta.catalyst_formula} builds as {built}")
    return slab


def generate_system(spec: GenSpec, index: int, params: Optional[OracleParams] = None) -> Sample:
    """
    The index-th synthetic sample of a spec.

    Deterministic in (spec.seed, index). Catalyst, facet and adsorbate are
    drawn uniformly, so a dataset revisits each system with different sites
    and jitter.
    """
    radii = load_radii_table()
    params = params or OracleParams(spec.seed)
    rng = np.random.default_rng([spec.seed, index])
    catalysts = spec.catalysts
    catalyst = catalysts[int(rng.integers(len(catalysts)))]
    miller = tuple(spec.millers[int(rng.integers(len(spec.millers)))])
    adsorbate = spec.adsorbates[int(rng.integers(len(spec.adsorbates)))]
    slab = build_slab(spec, catalyst, miller)
    meta = SystemMeta(adsorbate, composition_formula(slab.structure), miller)
    structure = place_adsorbate(slab, adsorbate, rng, spec.jitter, radii)
    return _make_sample(structure, meta, params, radii)


def generate_configuration(spec: GenSpec, meta: SystemMeta, index: int,
                           params: Optional[OracleParams] = None) -> Sample:
    """
    The index-th configuration of one fixed system: same slab, new site and jitter.

    Raises:
        UnrealizableMeta: if meta cannot be built from the GenSpec
    """
    radii = load_radii_table()
    params = params or OracleParams(spec.seed)
    slab = realize_slab(spec, meta)
    rng = np.random.default_rng([spec.seed, _meta_key(meta), index])
    structure = place_adsorbate(slab, meta.adsorbate, rng, spec.jitter, radii)
    return _make_sample(structure, meta, params, radii)


def enumerate_configurations(spec: GenSpec, meta: SystemMeta, count: int,
                             params: Optional[OracleParams] = None) -> List[Sample]:
    return [generate_configuration(spec, meta, k, params) for k in range(count)]


def generate_indicative_cif(spec: GenSpec, meta: SystemMeta, index: int,
                            params: Optional[OracleParams] = None,
                            noise: float = INDICATIVE_NOISE,
                            strip_probability: float = INDICATIVE_TAG_STRIP_PROBABILITY) -> str:
    """
    CIF text imitating a generated structure: right composition, imprecise coordinates.

    Starts from the lowest-energy member of a seeded candidate pool,
    perturbs every Cartesian coordinate with Gaussian noise, drops the tag
    column with the given probability and appends junk after a blank line.

    Raises:
        UnrealizableMeta: if meta cannot be built from the GenSpec
    """
    params = params or OracleParams(spec.seed)
    realize_slab(spec, meta)
    rng = np.random.default_rng([spec.seed, _meta_key(meta), index, 1])
    pool_offset = 1_000_000 + index * INDICATIVE_CANDIDATES
    candidates = [generate_configuration(spec, meta, pool_offset + k, params) for k in range(INDICATIVE_CANDIDATES)]
    best = min(candidates, key=lambda s: s.energy)

    structure = best.structure
    cart = structure.cart_coords + rng.normal(0.0, noise, (len(structure), 3))
    frac = structure.lattice.to_fractional(cart)
    noisy = structure.with_sites(Site(s.element, tuple(f), s.tag) for s, f in zip(structure.sites, frac))
    include_tags = bool(rng.random() >= strip_probability)
    name = f"{data_block_name(meta)}-indicative{index}"
    text = write_cif(noisy, name, include_tags=include_tags)
    logger.debug(f"Indicative CIF {name}: tags {'kept' if include_tags else 'stripped'}, "
                 f"seed energy {best.energy:.4f} eV")
    return text + f"\n# sample {index} end\ndata_{name}-continued\n"
