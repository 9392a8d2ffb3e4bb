"""Shared fixtures for the AdsorbKit test suite."""
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from src.core.elements import load_radii_table  # noqa: E402
from src.core.structure import Lattice, Structure, Tag  # noqa: E402
from src.parsers.cif import parse_cif  # noqa: E402
from src.text.stringify import SystemMeta  # noqa: E402

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# Small architecture so model tests stay fast
TINY_MODEL = dict(embed_dim=8, hidden_dim=8, rbf_count=4, bin_count=4, epochs=1, align_epochs=1, batch_size=8)


def golden_variant(replace=None, move_h=None, element_h="H") -> Structure:
    """
    The golden structure with optional edits.

    Args:
        replace: Mapping of site index to a new element
        move_h: New fractional position of the adsorbate atom (site 1)
        element_h: Element of the adsorbate atom
    """
    elements = ["Cu", element_h, "Cu", "Cu", "Cu", "Cu"]
    frac = [
        [0.5, 0.5, 0.5],
        list(move_h) if move_h is not None else [0.5, 0.5, 0.65],
        [0.75, 0.5, 0.5],
        [0.25, 0.5, 0.5],
        [0.5, 0.75, 0.5],
        [0.5, 0.5, 0.25],
    ]
    for index, element in (replace or {}).items():
        elements[index] = element
    tags = [Tag.SURFACE, Tag.ADSORBATE, Tag.SURFACE, Tag.SURFACE, Tag.SURFACE, Tag.SUBSURFACE]
    return Structure.from_arrays(Lattice.cubic(10.0), elements, frac, tags)


def random_structure(rng: np.random.Generator, n: int, box: float = 20.0,
                     elements=("H", "C", "O")) -> Structure:
    frac = rng.random((n, 3))
    symbols = [elements[i] for i in rng.integers(len(elements), size=n)]
    tags = rng.integers(3, size=n)
    return Structure.from_arrays(Lattice.cubic(box), symbols, frac, tags)


@pytest.fixture(scope="session")
def radii():
    return load_radii_table()


@pytest.fixture(scope="session")
def golden_cif_text():
    return (FIXTURES / "golden.cif").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def golden_config_text():
    return (FIXTURES / "golden_config.txt").read_text(encoding="utf-8").strip()


@pytest.fixture
def golden_structure(golden_cif_text):
    return parse_cif(golden_cif_text).structure


@pytest.fixture
def golden_meta():
    return SystemMeta("H", "Cu5", (1, 0, 0))


@pytest.fixture(scope="session")
def gen_spec():
    from src.data.synth import GenSpec

    return GenSpec(seed=3)


@pytest.fixture(scope="session")
def small_dataset(gen_spec):
    from src.data.synth import generate_system

    return [generate_system(gen_spec, i) for i in range(24)]


@pytest.fixture
def tiny_model(small_dataset):
    from src.model.trainer import build_model

    return build_model(small_dataset, seed=0, **TINY_MODEL)
