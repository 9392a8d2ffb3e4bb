"""
Reader and writer for the CIF subset used by AdsorbKit (see docs/cif-subset.md).

Only P1 cells with a single data block are accepted. Site roles travel in the
custom `_atom_site_adsorbkit_tag` loop column (0 subsurface, 1 surface,
2 adsorbate).
"""
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple

from src.core.elements import canonical_formula, load_radii_table
from src.core.errors import AdsorbKitError, ParseError, UnknownElement
from src.core.structure import Lattice, Site, Structure, Tag, composition_formula
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

CELL_KEYS = (
    "_cell_length_a", "_cell_length_b", "_cell_length_c",
    "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma",
)
SYMBOL_KEY = "_atom_site_type_symbol"
LABEL_KEY = "_atom_site_label"
FRACT_KEYS = ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")
TAG_KEY = "_atom_site_adsorbkit_tag"
SPACE_GROUP_KEYS = (
    "_symmetry_space_group_name_H-M", "_space_group_name_H-M_alt",
    "_symmetry_Int_Tables_number", "_space_group_IT_number",
)
SYMOP_KEYS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")

_ELEMENT_PREFIX = re.compile(r"^([A-Z][a-z]?)")


@dataclass
class AtomRow:
    element: str
    frac: Tuple[float, float, float]
    tag: Optional[int]
    line_number: int


@dataclass
class CifDocument:
    """The parsed contents of one data block of the subset grammar."""
    data_block_name: str
    cell: Dict[str, float] = field(default_factory=dict)
    atoms: List[AtomRow] = field(default_factory=list)
    tags_present: bool = False

    def lattice(self) -> Lattice:
        missing = [k for k in CELL_KEYS if k not in self.cell]
        if missing:
            raise ParseError(f"missing cell parameters: {', '.join(missing)}")
        return Lattice.from_parameters(*(self.cell[k] for k in CELL_KEYS))

    def to_structure(self) -> Structure:
        if not self.atoms:
            raise ParseError("no atom_site loop rows")
        lattice = self.lattice()
        sites = []
        for row in self.atoms:
            tag = Tag.SURFACE if row.tag is None else Tag(row.tag)
            sites.append(Site(row.element, row.frac, tag))
        return Structure(lattice, tuple(sites))


class ParsedCif(NamedTuple):
    structure: Structure
    data_block_name: str
    tags_missing: bool


def _cif_number(token: str, line_number: int) -> float:
    """Parse a CIF numeric value, dropping a trailing standard uncertainty '(n)'."""
    text = token.strip()
    paren = text.find("(")
    if paren > 0:
        text = text[:paren]
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"expected a number, got '{token}'", line_number) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number '{token}'", line_number)
    return value


def _split_values(line: str) -> List[str]:
    """Whitespace split that keeps quoted strings together."""
    values = []
    rest = line.strip()
    while rest:
        if rest[0] in "'\"":
            close = rest.find(rest[0], 1)
            if close < 0:
                values.append(rest[1:])
                break
            values.append(rest[1:close])
            rest = rest[close + 1:].strip()
        else:
            parts = rest.split(None, 1)
            values.append(parts[0])
            rest = parts[1] if len(parts) > 1 else ""
    return values


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    marker = line.find(" #")
    return line[:marker] if marker >= 0 else line


def _element_of(symbol: str, line_number: int) -> str:
    # type symbols may carry charges ('Cu2+'); keep the element prefix
    match = _ELEMENT_PREFIX.match(symbol)
    if not match:
        raise ParseError(f"cannot read element from '{symbol}'", line_number)
    element = match.group(1)
    if element not in load_radii_table():
        raise UnknownElement(element)
    return element


def _check_space_group(key: str, value: str, line_number: int) -> None:
    compact = value.replace(" ", "").upper()
    if key in ("_symmetry_Int_Tables_number", "_space_group_IT_number"):
        ok = compact == "1"
    else:
        ok = compact == "P1"
    if not ok:
        raise ParseError(f"only P1 cells are supported, got {key} {value}", line_number)


def _read_atom_loop(doc: CifDocument, headers: List[str], rows: List[Tuple[int, List[str]]]) -> None:
    if SYMBOL_KEY in headers:
        symbol_col = headers.index(SYMBOL_KEY)
    elif LABEL_KEY in headers:
        symbol_col = headers.index(LABEL_KEY)
    else:
        raise ParseError(f"atom_site loop lacks {SYMBOL_KEY}", rows[0][0] if rows else None)
    missing = [k for k in FRACT_KEYS if k not in headers]
    if missing:
        raise ParseError(f"atom_site loop lacks {', '.join(missing)}")
    frac_cols = [headers.index(k) for k in FRACT_KEYS]
    tag_col = headers.index(TAG_KEY) if TAG_KEY in headers else None
    doc.tags_present = tag_col is not None

    for line_number, values in rows:
        if len(values) != len(headers):
            raise ParseError(
                f"atom_site row has {len(values)} values, expected {len(headers)}", line_number)
        element = _element_of(values[symbol_col], line_number)
        frac = tuple(_cif_number(values[c], line_number) for c in frac_cols)
        tag = None
        if tag_col is not None:
            raw = values[tag_col]
            if raw not in ("0", "1", "2"):
                raise ParseError(f"tag must be 0, 1 or 2, got '{raw}'", line_number)
            tag = int(raw)
        doc.atoms.append(AtomRow(element, frac, tag, line_number))


def read_cif_document(text: str) -> CifDocument:
    """
    Tokenize CIF text into a CifDocument.

    Raises:
        ParseError: for malformed loops, multiple data blocks or non-P1 symmetry
        UnknownElement: for element symbols outside the radii table
    """
    lines = text.replace("\r\n", "\n").split("\n")
    doc: Optional[CifDocument] = None
    i = 0
    while i < len(lines):
        line_number = i + 1
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line:
            continue
        if line.startswith("data_"):
            if doc is not None:
                raise ParseError("multiple data blocks are not supported", line_number)
            doc = CifDocument(data_block_name=line[len("data_"):].strip())
            continue
        if doc is None:
            raise ParseError("content before the data_ block header", line_number)

        if line.startswith("loop_"):
            headers: List[str] = []
            while i < len(lines):
                header = _strip_comment(lines[i]).strip()
                if not header.startswith("_"):
                    break
                headers.append(header.split()[0])
                i += 1
            if not headers:
                raise ParseError("loop_ without column headers", line_number)
            rows: List[Tuple[int, List[str]]] = []
            while i < len(lines):
                raw = _strip_comment(lines[i]).strip()
                if not raw or raw.startswith("_") or raw.startswith("loop_") or raw.startswith("data_"):
                    break
                rows.append((i + 1, _split_values(raw)))
                i += 1
            if any(h.startswith("_atom_site_") and not h.startswith("_atom_site_aniso") for h in headers):
                _read_atom_loop(doc, headers, rows)
            elif any(h in SYMOP_KEYS for h in headers):
                col = next(headers.index(h) for h in headers if h in SYMOP_KEYS)
                for row_line, values in rows:
                    if len(values) != len(headers):
                        raise ParseError("malformed symmetry loop row", row_line)
                    if values[col].replace(" ", "").lower() != "x,y,z":
                        raise ParseError(
                            f"only P1 cells are supported, got operation '{values[col]}'", row_line)
            else:
                logger.debug(f"Ignoring loop with columns {headers}")
            continue

        if line.startswith("_"):
            parts = _split_values(line)
            key = parts[0]
            value = parts[1] if len(parts) > 1 else ""
            if key in CELL_KEYS:
                if not value:
                    raise ParseError(f"{key} has no value", line_number)
                doc.cell[key] = _cif_number(value, line_number)
            elif key in SPACE_GROUP_KEYS and value:
                _check_space_group(key, value, line_number)
            continue

        raise ParseError(f"unexpected content '{line}'", line_number)

    if doc is None:
        raise ParseError("no data_ block found")
    return doc


def parse_cif(text: str) -> ParsedCif:
    """
    Parse subset CIF text into a Structure.

    A file without the tag column is accepted: every site defaults to Surface
    and the result reports tags_missing=True.

    Args:
        text: CIF text

    Returns:
        ParsedCif(structure, data_block_name, tags_missing)

    Raises:
        ParseError: malformed content, with the line number when known
        UnknownElement: unknown element symbol
        NonPositiveCell: invalid cell parameters
    """
    doc = read_cif_document(text)
    structure = doc.to_structure()
    if not doc.tags_present:
        logger.warning(f"CIF block '{doc.data_block_name}' has no {TAG_KEY} column; sites default to Surface")
    return ParsedCif(structure, doc.data_block_name, not doc.tags_present)


def _coordinate(value: float) -> str:
    text = f"{value:.8f}"
    # a value that rounds up to 1 is the same site as 0
    if text == "1.00000000":
        text = "0.00000000"
    if text == "-0.00000000":
        text = "0.00000000"
    return text


def write_cif(structure: Structure, data_block_name: str, include_tags: bool = True) -> str:
    """
    Serialize a structure in the subset grammar.

    Field order is fixed and numbers carry 8 decimals, so the output is
    byte-for-byte deterministic for a given input.

    Args:
        structure: Structure to write
        data_block_name: Name following 'data_'
        include_tags: Write the tag column (indicative CIFs may omit it)

    Returns:
        CIF text ending in a single newline
    """
    params = structure.lattice.parameters()
    lines = [f"data_{data_block_name}"]
    for key, value in zip(CELL_KEYS, params):
        lines.append(f"{key:<18} {value:.8f}")
    lines.append("loop_")
    lines.append(SYMBOL_KEY)
    lines.extend(FRACT_KEYS)
    if include_tags:
        lines.append(TAG_KEY)
    for site in structure.sites:
        fields = [site.element] + [_coordinate(x) for x in site.frac]
        if include_tags:
            fields.append(str(int(site.tag)))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def truncate_at_double_newline(text: str) -> str:
    """
    Cut generated text at the first blank-line terminator.

    CRLF is normalized to LF first; the prefix strictly before the first
    LF LF is returned, or the whole (normalized) text if there is none.
    """
    normalized = text.replace("\r\n", "\n")
    end = normalized.find("\n\n")
    return normalized if end < 0 else normalized[:end]


def composition_matches(cif_text: str, expected_formula: str) -> bool:
    """
    Filter: does the CIF parse and carry exactly the expected composition?

    Never raises; unparseable CIF text or an unreadable formula yields False.
    """
    try:
        expected = canonical_formula(expected_formula)
    except ParseError as e:
        logger.debug(f"Expected formula unreadable: {e}")
        return False
    try:
        structure = parse_cif(cif_text).structure
    except AdsorbKitError as e:
        logger.debug(f"Composition filter rejected unparseable CIF: {e}")
        return False
    return composition_formula(structure) == expected
