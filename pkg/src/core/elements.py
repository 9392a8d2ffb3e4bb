"""
Element data: the bundled covalent-radii table and chemical formula helpers.
"""
import json
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from src.config import RADII_FILE
from src.core.errors import ParseError, UnknownElement

_FORMULA_TOKEN = re.compile(r"([A-Z][a-z]?)(\d*)")

RADIUS_BOUNDS = (0.2, 3.0)


@dataclass(frozen=True)
class RadiiTable:
    """Immutable element -> covalent radius (Angstrom) map."""
    radii: Mapping[str, float]
    version: str

    def __post_init__(self):
        lo, hi = RADIUS_BOUNDS
        for symbol, radius in self.radii.items():
            if not lo < radius < hi:
                raise ValueError(f"radius for {symbol} out of range: {radius}")
        object.__setattr__(self, "radii", MappingProxyType(dict(self.radii)))

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.radii

    @property
    def max_radius(self) -> float:
        return max(self.radii.values())


@lru_cache(maxsize=None)
def load_radii_table(path: Path = RADII_FILE) -> RadiiTable:
    """Load the versioned radii table shipped with the package."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return RadiiTable(radii=payload["radii"], version=payload["version"])


def covalent_radius(table: RadiiTable, element: str) -> float:
    """
    Look up the covalent radius of an element.

    Args:
        table: Radii table
        element: Chemical symbol

    Returns:
        Radius in Angstrom

    Raises:
        UnknownElement: if the symbol is not in the table
    """
    try:
        return table.radii[element]
    except KeyError:
        raise UnknownElement(element) from None


def format_formula(counts: Mapping[str, int]) -> str:
    """Canonical formula: elements alphabetically, count suffix omitted when 1."""
    parts = []
    for symbol in sorted(counts):
        n = counts[symbol]
        if n <= 0:
            continue
        parts.append(symbol if n == 1 else f"{symbol}{n}")
    return "".join(parts)


def formula_symbols(formula: str) -> list:
    """
    Expand a formula into its ordered symbol list ('CCH3' -> C, C, H, H, H).

    Raises:
        ParseError: if the text is not a sequence of element-count pairs
    """
    formula = formula.strip()
    if not formula or _FORMULA_TOKEN.sub("", formula):
        raise ParseError(f"not a chemical formula: '{formula}'")
    symbols = []
    for symbol, count in _FORMULA_TOKEN.findall(formula):
        n = int(count) if count else 1
        if n <= 0:
            raise ParseError(f"zero count in formula: '{formula}'")
        symbols.extend([symbol] * n)
    return symbols


def parse_formula(formula: str) -> Counter:
    """Element counts of a formula; repeated elements are summed."""
    return Counter(formula_symbols(formula))


def canonical_formula(formula: str) -> str:
    """Canonical form of an arbitrary formula string ('CCH3' -> 'C2H3')."""
    return format_formula(parse_formula(formula))


def formula_of(symbols: Iterable[str]) -> str:
    return format_formula(Counter(symbols))
