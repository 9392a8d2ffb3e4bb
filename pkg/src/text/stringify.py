"""
Structure-to-text conversion.

Grammar (docs/string-grammar.md):

    data <Adsorbate></s><CatalystFormula> (h k l)</s><Config>
    <Config> = primary <Groups> secondary <Groups>
    <Groups> = none | <El>x<n> [<El>x<n> ...]   (elements sorted alphabetically)

A two-part prompt stops after the surface segment.
"""
import re
from collections import Counter
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np

from src.config import ANCHOR_HEIGHT_RESOLUTION, PERMISSIVE_SCALE, TOPMOST_LAYER_TOLERANCE
from src.core.elements import RadiiTable, canonical_formula, formula_symbols
from src.core.errors import AmbiguousAdsorbate, NoAdsorbate, ParseError
from src.core.neighbors import NeighborList, build_neighbor_list, expand_for_cutoff
from src.core.structure import Structure
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

SEPARATOR = "</s>"
PREFIX = "data "
EMPTY_GROUP = "none"

_GROUP = re.compile(r"^([A-Z][a-z]?)x(\d+)$")
_SURFACE = re.compile(r"^(\S+) \((-?\d+) (-?\d+) (-?\d+)\)$")


@dataclass(frozen=True)
class SystemMeta:
    """Adsorbate name, catalyst formula and Miller indices of one catalytic system."""
    adsorbate: str
    catalyst_formula: str
    miller: Tuple[int, int, int]

    def __post_init__(self):
        formula_symbols(self.adsorbate)
        object.__setattr__(self, "catalyst_formula", canonical_formula(self.catalyst_formula))
        miller = tuple(int(x) for x in self.miller)
        if len(miller) != 3 or not any(miller):
            raise ValueError(f"Miller indices must be three integers, not all zero: {self.miller}")
        object.__setattr__(self, "miller", miller)

    @property
    def adsorbate_symbols(self) -> Tuple[str, ...]:
        """Ordered element list of the adsorbate ('CCH3' -> C, C, H, H, H)."""
        return tuple(formula_symbols(self.adsorbate))

    @property
    def miller_text(self) -> str:
        return " ".join(str(x) for x in self.miller)

    @property
    def full_formula(self) -> str:
        """Canonical formula of catalyst plus adsorbate."""
        return canonical_formula(self.catalyst_formula + self.adsorbate)

    def to_record(self) -> dict:
        return {"adsorbate": self.adsorbate, "formula": self.catalyst_formula, "miller": list(self.miller)}

    @classmethod
    def from_record(cls, record: dict) -> "SystemMeta":
        return cls(record["adsorbate"], record["formula"], tuple(record["miller"]))


@dataclass(frozen=True)
class ConfigString:
    """A configuration string and its three segments (the 'data ' prefix stripped)."""
    text: str
    segments: Tuple[str, str, str]

    @classmethod
    def parse(cls, text: str) -> "ConfigString":
        """
        Split a configuration string into segments.

        Raises:
            ParseError: when the prefix or the separator count is wrong
        """
        if not text.startswith(PREFIX):
            raise ParseError(f"configuration string must start with '{PREFIX}'")
        parts = text[len(PREFIX):].split(SEPARATOR)
        if len(parts) not in (2, 3):
            raise ParseError(f"expected 1 or 2 '{SEPARATOR}' separators, found {len(parts) - 1}")
        if len(parts) == 2:
            parts.append("")
        return cls(text, (parts[0], parts[1], parts[2]))

    @property
    def adsorbate(self) -> str:
        return self.segments[0]

    @property
    def surface(self) -> Tuple[str, Tuple[int, int, int]]:
        """Catalyst formula and Miller indices of the surface segment."""
        match = _SURFACE.match(self.segments[1])
        if not match:
            raise ParseError(f"malformed surface segment '{self.segments[1]}'")
        return match.group(1), (int(match.group(2)), int(match.group(3)), int(match.group(4)))

    @property
    def has_config(self) -> bool:
        return bool(self.segments[2])

    def counts(self) -> Tuple[Counter, Counter]:
        """Re-parse the configuration segment into (primary, secondary) element counts."""
        if not self.has_config:
            return Counter(), Counter()
        words = self.segments[2].split()
        if not words or words[0] != "primary" or "secondary" not in words:
            raise ParseError(f"malformed configuration segment '{self.segments[2]}'")
        split = words.index("secondary")
        return _parse_groups(words[1:split]), _parse_groups(words[split + 1:])


def _parse_groups(words: Sequence[str]) -> Counter:
    if list(words) == [EMPTY_GROUP]:
        return Counter()
    counts: Counter = Counter()
    for word in words:
        match = _GROUP.match(word)
        if not match:
            raise ParseError(f"malformed element group '{word}'")
        counts[match.group(1)] += int(match.group(2))
    if not counts:
        raise ParseError("empty element group list")
    return counts


def _format_groups(elements: Iterable[str]) -> str:
    counts = Counter(elements)
    if not counts:
        return EMPTY_GROUP
    return " ".join(f"{el}x{counts[el]}" for el in sorted(counts))


def _surface_segment(meta: SystemMeta) -> str:
    return f"{meta.catalyst_formula} ({meta.miller_text})"


def _build(meta: SystemMeta, config: str) -> ConfigString:
    text = f"{PREFIX}{meta.adsorbate}{SEPARATOR}{_surface_segment(meta)}"
    if config:
        text += f"{SEPARATOR}{config}"
    return ConfigString(text, (meta.adsorbate, _surface_segment(meta), config))


def config_segment(structure: Structure, primary: Iterable[int], secondary: Iterable[int]) -> str:
    elements = structure.elements
    return (f"primary {_format_groups(elements[i] for i in primary)} "
            f"secondary {_format_groups(elements[i] for i in secondary)}")


def interacting_atoms(structure: Structure, nl_strict: NeighborList) -> Tuple[FrozenSet[int], FrozenSet[int]]:
    """
    Primary and secondary interacting atoms.

    Primary atoms are non-adsorbate sites bonded to any adsorbate site;
    secondary atoms are the remaining non-adsorbate sites bonded to a primary
    atom.

    Args:
        structure: Tagged structure
        nl_strict: Neighbor list of the structure at scale 1.0

    Returns:
        Tuple of (primary, secondary) site-index sets

    Raises:
        NoAdsorbate: if no site is tagged Adsorbate
    """
    if len(nl_strict) != len(structure):
        raise ValueError(f"neighbor list covers {len(nl_strict)} sites, structure has {len(structure)}")
    adsorbate = set(structure.adsorbate_indices)
    if not adsorbate:
        raise NoAdsorbate("structure has no Adsorbate-tagged site")
    primary = {j for i in adsorbate for j in nl_strict.indices(i) if j not in adsorbate}
    secondary = {
        k for j in primary for k in nl_strict.indices(j)
        if k not in adsorbate and k not in primary
    }
    return frozenset(primary), frozenset(secondary)


def three_part_string(structure: Structure, meta: SystemMeta, nl_strict: NeighborList) -> ConfigString:
    """Full 'adsorbate </s> surface </s> configuration' string from strict adjacency."""
    primary, secondary = interacting_atoms(structure, nl_strict)
    return _build(meta, config_segment(structure, primary, secondary))


def two_part_prompt(meta: SystemMeta) -> ConfigString:
    """Adsorbate and surface segments only, as used when no structure is known."""
    return _build(meta, "")


def identify_adsorbate(structure: Structure, meta: SystemMeta) -> List[int]:
    """
    Adsorbate site indices, by tag when present, else by element matching.

    Without tags, for every adsorbate element with count c the c highest sites
    of that element (along the surface normal) are taken.

    Raises:
        NoAdsorbate: if no candidate site exists
        AmbiguousAdsorbate: if only part of the declared adsorbate is found
    """
    tagged = structure.adsorbate_indices
    if tagged:
        return tagged
    heights = structure.surface_heights()
    elements = structure.elements
    needed = Counter(meta.adsorbate_symbols)
    chosen: List[int] = []
    short = []
    for element in sorted(needed):
        candidates = sorted((i for i, e in enumerate(elements) if e == element),
                            key=lambda i: (-heights[i], i))
        chosen.extend(candidates[:needed[element]])
        if len(candidates) < needed[element]:
            short.append(element)
    if not chosen:
        raise NoAdsorbate(f"no site matches adsorbate {meta.adsorbate}")
    if short:
        raise AmbiguousAdsorbate(f"adsorbate {meta.adsorbate} only partly present: missing {', '.join(short)}")
    return sorted(chosen)


def topmost_layer(structure: Structure, adsorbate: Iterable[int]) -> List[int]:
    """Non-adsorbate sites within the layer tolerance of the highest non-adsorbate site."""
    excluded = set(adsorbate)
    heights = structure.surface_heights()
    slab = [i for i in range(len(structure)) if i not in excluded]
    if not slab:
        return []
    top = max(heights[i] for i in slab)
    return [i for i in slab if heights[i] >= top - TOPMOST_LAYER_TOLERANCE]


def select_anchor(structure: Structure, adsorbate: Sequence[int]) -> int:
    """
    The adsorbate site closest to the surface.

    Heights are measured above the mean height of the topmost layer; sites
    within the tie resolution of the lowest one resolve to the lowest index.
    """
    if not adsorbate:
        raise NoAdsorbate("no adsorbate sites to anchor on")
    heights = structure.surface_heights()
    layer = topmost_layer(structure, adsorbate)
    reference = float(np.mean(heights[layer])) if layer else 0.0
    above = {i: float(heights[i]) - reference for i in adsorbate}
    lowest = min(above.values())
    anchor = min(i for i, h in above.items() if h - lowest <= ANCHOR_HEIGHT_RESOLUTION)
    logger.debug(f"Anchor site {anchor} at {above[anchor]:.3f} Angstrom above the top layer")
    return anchor


def permissive_interacting_atoms(structure: Structure, meta: SystemMeta, radii: RadiiTable,
                                 scale: float = PERMISSIVE_SCALE) -> Tuple[int, FrozenSet[int], FrozenSet[int]]:
    """
    Anchor, primary and secondary atoms under the permissive cutoff.

    The cell is first expanded until the minimum-image condition holds at this
    scale; neighbors found in the supercell are mapped back to original sites.

    Returns:
        Tuple of (anchor index, primary set, secondary set)
    """
    adsorbate = identify_adsorbate(structure, meta)
    anchor = select_anchor(structure, adsorbate)
    expanded, index_map = expand_for_cutoff(structure, radii, scale)
    nl = build_neighbor_list(expanded, radii, scale)
    excluded = set(adsorbate)

    # supercell sites 0..n-1 are the unshifted replica, so the anchor keeps its index
    primary_copies = [j for j in sorted(nl.indices(anchor)) if int(index_map[j]) not in excluded]
    primary = {int(index_map[j]) for j in primary_copies}
    secondary = set()
    for j in primary_copies:
        for k in nl.indices(j):
            original = int(index_map[k])
            if original not in excluded and original not in primary:
                secondary.add(original)
    return anchor, frozenset(primary), frozenset(secondary)


def permissive_config_string(structure: Structure, meta: SystemMeta, radii: RadiiTable) -> ConfigString:
    """
    Configuration string of an indicative structure.

    Anchors on the single adsorbate atom closest to the surface and collects
    neighbors at four times the covalent pair cutoff.

    Raises:
        NoAdsorbate: if no adsorbate site can be identified
    """
    _, primary, secondary = permissive_interacting_atoms(structure, meta, radii)
    return _build(meta, config_segment(structure, primary, secondary))
