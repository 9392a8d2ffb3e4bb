"""
Configuration settings for the AdsorbKit toolkit.
"""
from pathlib import Path
from typing import Dict

# Application metadata
APP_NAME = "AdsorbKit"
APP_VERSION = "1.0.0"

# Paths
BASE_DIR = Path(__file__).parent.parent
LOGS_DIR = BASE_DIR / "logs"
OUTPUT_DIR = BASE_DIR / "output"
DATA_DIR = Path(__file__).parent / "core" / "data"

# Create necessary directories
LOGS_DIR.mkdir(exist_ok=True)
OUTPUT_DIR.mkdir(exist_ok=True)

# Element data
RADII_FILE = DATA_DIR / "covalent_radii.json"

# Neighbor cutoff scales (d <= scale * (r_i + r_j))
STRICT_SCALE = 1.0
PERMISSIVE_SCALE = 4.0

# Configuration-string extraction
TOPMOST_LAYER_TOLERANCE = 0.5  # Angstrom
ANCHOR_HEIGHT_RESOLUTION = 1e-6  # Angstrom
COUNT_TOKEN_CAP = 8

# Synthetic oracle
ORACLE_CUTOFF = 6.0  # Angstrom
DEFAULT_PALETTE = ("Cu", "Al", "As", "Pt", "H", "C", "O")
DEFAULT_ADSORBATES = ("H", "O", "C", "CH", "OH", "CCH3")
DEFAULT_MILLERS = ((1, 0, 0), (1, 1, 0), (1, 1, 1))
DEFAULT_SLAB_DIMS = (3, 3, 3)
DEFAULT_LATTICE_RANGE = (3.5, 4.5)  # Angstrom
DEFAULT_JITTER = 0.2  # Angstrom
DEFAULT_VACUUM = 12.0  # Angstrom
INDICATIVE_NOISE = 0.3  # Angstrom
INDICATIVE_TAG_STRIP_PROBABILITY = 0.5
INDICATIVE_CANDIDATES = 8

# Loss settings
DEFAULT_MMTG_LAMBDA = 0.5
DEFAULT_PLAIN_LAMBDA = 1.0
DEFAULT_TEMPERATURE = 0.07
DEFAULT_BETA = 0.5
SUPPORTED_LOSSES = ["mmtg", "plain"]

# Model settings
DEFAULT_EMBED_DIM = 64
DEFAULT_HIDDEN_DIM = 64
DEFAULT_RBF_COUNT = 16
DEFAULT_RBF_RANGE = (0.0, 6.0)  # Angstrom
DEFAULT_BIN_COUNT = 32
DEFAULT_MODALITY_DROPOUT = 0.3
DEFAULT_LEARNING_RATE = 0.05
DEFAULT_EPOCHS = 20
DEFAULT_ALIGN_EPOCHS = 150
DEFAULT_BATCH_SIZE = 64

# Evaluation settings
DEFAULT_PIR_DELTA = 0.1  # eV
DEFAULT_PIR_SYSTEMS = 20
DEFAULT_PIR_CONFIGURATIONS = 30
DEFAULT_PIR_ATTEMPTS = 3
RETRIEVAL_EVAL_SIZE = 128

# Checkpoint format
CHECKPOINT_MAGIC = b"ADK1"
CHECKPOINT_VERSION = 1

# Dataset split (train/val/test parts of ten)
SPLIT_PARTS = (8, 1, 1)

# Logging settings
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE = LOGS_DIR / "adsorbkit.log"
LOG_ROOT = "adsorbkit"
CONSOLE_LOG_LEVEL = "INFO"


def load_run_config(path: Path) -> Dict[str, str]:
    """
    Read a key=value run configuration file.

    Blank lines and lines starting with '#' are skipped. Keys are normalized so
    that 'out-dir' and 'out_dir' name the same option.

    Args:
        path: Path to the configuration file

    Returns:
        Mapping of normalized option names to raw string values
    """
    from src.core.errors import ConfigError

    values: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key=value, got '{line}'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{path}:{number}: empty key")
        values[key] = value.strip()
    return values
