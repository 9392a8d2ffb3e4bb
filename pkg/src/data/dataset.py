"""
JSONL dataset IO and the seeded train/val/test split (schema in docs/dataset-schema.md).
"""
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.config import SPLIT_PARTS, STRICT_SCALE
from src.core.elements import RadiiTable, load_radii_table
from src.core.errors import AdsorbKitError, ParseError
from src.core.neighbors import build_neighbor_list
from src.core.structure import Structure
from src.parsers.cif import parse_cif, write_cif
from src.text.stringify import ConfigString, SystemMeta, three_part_string
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

SPLIT_NAMES = ("train", "val", "test")


def data_block_name(meta: SystemMeta) -> str:
    h, k, l = meta.miller
    return f"{meta.adsorbate}-{meta.catalyst_formula}-{h}_{k}_{l}"


_BLOCK_NAME = re.compile(r"^([A-Za-z0-9]+)-([A-Za-z0-9]+)-(-?\d+)_(-?\d+)_(-?\d+)(?:-[A-Za-z0-9]+)?$")


def parse_data_block_name(name: str) -> Optional[Tuple[str, str, Tuple[int, int, int]]]:
    """
    Read (adsorbate, catalyst formula, miller) back from a name written by data_block_name.

    A trailing '-suffix' is allowed. Returns None for names in any other form.
    """
    match = _BLOCK_NAME.match(name.strip())
    if match is None:
        return None
    adsorbate, formula, h, k, l = match.groups()
    return adsorbate, formula, (int(h), int(k), int(l))


@dataclass(frozen=True, eq=False)
class Sample:
    """One (structure, metadata, config string, target energy) record."""
    structure: Structure
    meta: SystemMeta
    config_string: ConfigString
    energy: float

    def to_record(self) -> Dict[str, object]:
        return {
            "cif": write_cif(self.structure, data_block_name(self.meta)),
            "config_string": self.config_string.text,
            "meta": self.meta.to_record(),
            "energy_ev": float(self.energy),
        }

    @classmethod
    def from_record(cls, record: Dict[str, object]) -> "Sample":
        parsed = parse_cif(str(record["cif"]))
        return cls(
            structure=parsed.structure,
            meta=SystemMeta.from_record(record["meta"]),
            config_string=ConfigString.parse(str(record["config_string"])),
            energy=float(record["energy_ev"]),
        )


def check_consistency(sample: Sample, radii: Optional[RadiiTable] = None) -> bool:
    """True if the stored config string equals strict stringify of the stored structure."""
    radii = radii or load_radii_table()
    nl = build_neighbor_list(sample.structure, radii, STRICT_SCALE)
    return three_part_string(sample.structure, sample.meta, nl).text == sample.config_string.text


def write_jsonl(path: Path, samples: Iterable[Sample]) -> int:
    """
    Write samples one JSON object per line with sorted keys.

    Returns:
        Number of lines written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for sample in samples:
            handle.write(json.dumps(sample.to_record(), sort_keys=True) + "\n")
            count += 1
    logger.debug(f"Wrote {count} samples to {path}")
    return count


def read_jsonl(path: Path) -> List[Sample]:
    """
    Read a JSONL dataset.

    Raises:
        ParseError: naming the offending line for malformed JSON, missing
            fields or an unreadable CIF
    """
    path = Path(path)
    samples = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                samples.append(Sample.from_record(json.loads(line)))
            except json.JSONDecodeError as e:
                raise ParseError(f"{path.name}: invalid JSON: {e.msg}", number) from None
            except KeyError as e:
                raise ParseError(f"{path.name}: missing field {e}", number) from None
            except (AdsorbKitError, ValueError, TypeError) as e:
                raise ParseError(f"{path.name}: {e}", number) from None
    logger.info(f"Loaded {len(samples)} samples from {path}")
    return samples


def split_indices(n: int, seed: int, parts: Sequence[int] = SPLIT_PARTS) -> Tuple[List[int], ...]:
    """
    Seeded partition of range(n) into len(parts) groups in the given ratio.

    Group sizes are floor(n * part / total) for all but the last group, which
    takes the remainder; indices keep ascending order inside each group.
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if not parts or any(p < 0 for p in parts) or sum(parts) == 0:
        raise ValueError(f"invalid split parts {tuple(parts)}")
    order = np.random.default_rng([seed, n]).permutation(n)
    total = sum(parts)
    bounds = [0]
    for part in parts[:-1]:
        bounds.append(bounds[-1] + n * part // total)
    bounds.append(n)
    return tuple(sorted(int(i) for i in order[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:]))


def write_dataset(out_dir: Path, samples: Sequence[Sample], seed: int) -> Dict[str, Path]:
    """
    Split samples 8/1/1 and write train.jsonl, val.jsonl and test.jsonl.

    Returns:
        Mapping of split name to written path
    """
    out_dir = Path(out_dir)
    paths = {}
    for name, indices in zip(SPLIT_NAMES, split_indices(len(samples), seed)):
        path = out_dir / f"{name}.jsonl"
        write_jsonl(path, (samples[i] for i in indices))
        paths[name] = path
    logger.info(f"Dataset of {len(samples)} samples written to {out_dir}")
    return paths
