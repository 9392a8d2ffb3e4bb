"""
Versioned flat-binary model checkpoints (layout in docs/checkpoint-format.md).

    magic 'ADK1' | uint32 version | uint32 header length | JSON header |
    float64 little-endian parameter blocks in header order
"""
import json
import struct
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np
import torch

from src.config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from src.core.errors import CheckpointMismatch
from src.model.multimodal import DTYPE, ModelConfig, MultimodalModel
from src.text.tokens import TokenVocabulary
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

_PREAMBLE = struct.Struct("<4sII")
_FLOAT = np.dtype("<f8")


class Checkpoint(NamedTuple):
    model: MultimodalModel
    vocab: TokenVocabulary
    stages: Tuple[int, ...]


def _header(model: MultimodalModel, vocab: TokenVocabulary, stages: Sequence[int]) -> dict:
    params = sorted(model.state_dict().items())
    return {
        "config": model.config.to_dict(),
        "vocab": vocab.to_list(),
        "stages": [int(s) for s in stages],
        "parameters": [{"name": name, "shape": list(t.shape)} for name, t in params],
    }


def serialize_checkpoint(model: MultimodalModel, vocab: TokenVocabulary, stages: Sequence[int] = ()) -> bytes:
    """Checkpoint bytes; identical parameters give identical bytes."""
    if len(vocab) != model.vocab_size:
        raise CheckpointMismatch(f"vocabulary has {len(vocab)} tokens, model expects {model.vocab_size}")
    header = json.dumps(_header(model, vocab, stages), sort_keys=True, separators=(",", ":")).encode("utf-8")
    blocks = [
        tensor.detach().cpu().numpy().astype(_FLOAT).tobytes(order="C")
        for _, tensor in sorted(model.state_dict().items())
    ]
    return _PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)) + header + b"".join(blocks)


def save_checkpoint(path: Path, model: MultimodalModel, vocab: TokenVocabulary,
                    stages: Sequence[int] = ()) -> Path:
    """
    Write a checkpoint file.

    Args:
        path: Output path
        model: Model to save
        vocab: Vocabulary the model's token embedding was built for
        stages: Training stages completed so far

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = serialize_checkpoint(model, vocab, stages)
    path.write_bytes(payload)
    logger.info(f"Checkpoint saved to {path} ({len(payload) / 1024:.1f} KB)")
    return path


def _read_header(data: bytes) -> Tuple[dict, int]:
    if len(data) < _PREAMBLE.size:
        raise CheckpointMismatch("file too short for a checkpoint preamble")
    magic, version, length = _PREAMBLE.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointMismatch(f"bad magic bytes {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    end = _PREAMBLE.size + length
    if len(data) < end:
        raise CheckpointMismatch("checkpoint header is truncated")
    try:
        header = json.loads(data[_PREAMBLE.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointMismatch(f"checkpoint header is not valid JSON: {e}") from None
    return header, end


def deserialize_checkpoint(data: bytes) -> Checkpoint:
    """
    Rebuild a model from checkpoint bytes.

    Raises:
        CheckpointMismatch: for a bad preamble, or parameter shapes or sizes
            that disagree with the model the header describes
    """
    header, offset = _read_header(data)
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointMismatch(f"invalid model config in checkpoint: {e}") from None
    try:
        vocab = TokenVocabulary.from_list(header["vocab"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointMismatch(f"invalid vocabulary in checkpoint: {e}") from None
    model = MultimodalModel(config, len(vocab))
    expected = dict(model.state_dict())

    try:
        entries = [(str(e["name"]), tuple(int(x) for x in e["shape"])) for e in header["parameters"]]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointMismatch(f"invalid parameter table in checkpoint: {e}") from None
    if sorted(name for name, _ in entries) != sorted(expected):
        raise CheckpointMismatch("checkpoint parameter names do not match the model")
    state = {}
    for name, shape in entries:
        if shape != tuple(expected[name].shape):
            raise CheckpointMismatch(f"{name}: checkpoint shape {shape}, model shape {tuple(expected[name].shape)}")
        count = int(np.prod(shape)) if shape else 1
        size = count * _FLOAT.itemsize
        if offset + size > len(data):
            raise CheckpointMismatch(f"checkpoint truncated inside {name}")
        block = np.frombuffer(data, dtype=_FLOAT, count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(block.copy()).to(DTYPE)
        offset += size
    if offset != len(data):
        raise CheckpointMismatch(f"{len(data) - offset} trailing bytes after the parameter blocks")
    model.load_state_dict(state)
    return Checkpoint(model, vocab, tuple(header.get("stages", ())))


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint file."""
    path = Path(path)
    checkpoint = deserialize_checkpoint(path.read_bytes())
    logger.info(f"Loaded checkpoint {path.name}: stages {list(checkpoint.stages)}, "
                f"{checkpoint.model.parameter_count()} parameters, {len(checkpoint.vocab)} tokens")
    return checkpoint


def validate_checkpoint(path: Path) -> Tuple[bool, str]:
    """
    Validate that a file is a readable checkpoint.

    Args:
        path: Path to checkpoint file

    Returns:
        Tuple of (is_valid, message)
    """
    path = Path(path)
    if not path.exists():
        return False, "File does not exist"
    if not path.is_file():
        return False, "Path is not a file"
    try:
        checkpoint = deserialize_checkpoint(path.read_bytes())
    except CheckpointMismatch as e:
        return False, str(e)
    return True, f"Checkpoint with stages {list(checkpoint.stages)} and {len(checkpoint.vocab)} tokens"


def check_elements(config: ModelConfig, elements: Iterable[str]) -> None:
    """
    Ensure every dataset element has a slot in the model's element one-hot.

    Raises:
        CheckpointMismatch: naming the missing elements
    """
    missing: List[str] = sorted(set(elements) - set(config.elements))
    if missing:
        raise CheckpointMismatch(f"checkpoint has no feature slot for elements {', '.join(missing)}")
