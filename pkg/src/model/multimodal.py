"""
Toy multimodal energy model.

A geometric channel (per-atom MLP, max-pool, linear projection), a text
channel (mean-pooled token embeddings, feedforward), a fusion trunk over the
concatenated embeddings and two heads: a scalar regression head and a K-way
energy-bin classifier. The final prediction is the plain average of the
regression output and the midpoint of the most likely bin.
"""
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from src.config import (
    DEFAULT_ALIGN_EPOCHS, DEFAULT_BATCH_SIZE, DEFAULT_BETA, DEFAULT_BIN_COUNT, DEFAULT_EMBED_DIM, DEFAULT_EPOCHS,
    DEFAULT_HIDDEN_DIM, DEFAULT_LEARNING_RATE, DEFAULT_MMTG_LAMBDA, DEFAULT_MODALITY_DROPOUT,
    DEFAULT_PLAIN_LAMBDA, DEFAULT_RBF_COUNT, DEFAULT_RBF_RANGE, DEFAULT_TEMPERATURE, SUPPORTED_LOSSES,
)
from src.model.losses import AlignConfig
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

DTYPE = torch.float64
TAG_COUNT = 3
# Element-count blocks for the first and second strict-neighbor shells
SHELL_COUNT = 2

# Parameter groups by module-name prefix
PARAMETER_GROUPS = {
    "geo": ("atom_mlp.", "projection."),
    "text": ("token_embedding.", "text_ff."),
    "trunk": ("trunk.",),
    "heads": ("reg_head.", "cls_head."),
    "missing": ("missing",),
}

STAGE_TRAINABLE = {
    1: ("geo",),
    2: ("geo", "text", "trunk", "heads", "missing"),
    3: ("text", "trunk", "heads", "missing"),
}


@dataclass
class ModelConfig:
    """Architecture and training settings of one model."""
    elements: Tuple[str, ...]
    energy_range: Tuple[float, float]
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    rbf_count: int = DEFAULT_RBF_COUNT
    rbf_range: Tuple[float, float] = DEFAULT_RBF_RANGE
    bin_count: int = DEFAULT_BIN_COUNT
    temperature: float = DEFAULT_TEMPERATURE
    mmtg_lambda: float = DEFAULT_MMTG_LAMBDA
    plain_lambda: float = DEFAULT_PLAIN_LAMBDA
    beta: float = DEFAULT_BETA
    modality_dropout: float = DEFAULT_MODALITY_DROPOUT
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    align_epochs: int = DEFAULT_ALIGN_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    loss: str = "mmtg"

    def __post_init__(self):
        self.elements = tuple(self.elements)
        self.energy_range = (float(self.energy_range[0]), float(self.energy_range[1]))
        self.rbf_range = (float(self.rbf_range[0]), float(self.rbf_range[1]))
        if not self.elements:
            raise ValueError("model needs at least one element")
        if self.bin_count < 2:
            raise ValueError(f"bin count must be at least 2, got {self.bin_count}")
        lo, hi = self.energy_range
        if not lo < hi:
            raise ValueError(f"energy range must satisfy lo < hi, got {self.energy_range}")
        if not self.rbf_range[0] < self.rbf_range[1]:
            raise ValueError(f"RBF range must satisfy lo < hi, got {self.rbf_range}")
        for name in ("embed_dim", "hidden_dim", "rbf_count", "epochs", "align_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.temperature > 0.0 or not self.learning_rate > 0.0 or not self.plain_lambda > 0.0:
            raise ValueError("temperature, learning rate and plain lambda must be positive")
        if not 0.0 < self.mmtg_lambda <= 1.0:
            raise ValueError(f"MMTG lambda must lie in (0, 1], got {self.mmtg_lambda}")
        if self.beta < 0.0 or not 0.0 <= self.modality_dropout <= 1.0:
            raise ValueError("beta must be non-negative and modality dropout a probability")
        if self.loss not in SUPPORTED_LOSSES:
            raise ValueError(f"loss must be one of {SUPPORTED_LOSSES}, got '{self.loss}'")

    @property
    def align(self) -> AlignConfig:
        """Contrastive settings shared by stage 1 and the stage-2 alignment term."""
        return AlignConfig(self.temperature, self.batch_size)

    def epochs_of(self, stage: int) -> int:
        return self.align_epochs if stage == 1 else self.epochs

    @property
    def feature_size(self) -> int:
        return (1 + SHELL_COUNT) * len(self.elements) + TAG_COUNT + self.rbf_count

    @property
    def bin_width(self) -> float:
        lo, hi = self.energy_range
        return (hi - lo) / self.bin_count

    def bins_of(self, energies: Sequence[float]) -> np.ndarray:
        """Bin index of each energy; values outside the range clamp to the end bins."""
        lo, hi = self.energy_range
        e = np.asarray(energies, dtype=float)
        raw = np.floor((e - lo) / (hi - lo) * self.bin_count)
        return np.clip(raw, 0, self.bin_count - 1).astype(int)

    def bin_of(self, energy: float) -> int:
        return int(self.bins_of([energy])[0])

    def bin_midpoints(self, bins: Sequence[int]) -> np.ndarray:
        lo, _ = self.energy_range
        return lo + (np.asarray(bins, dtype=float) + 0.5) * self.bin_width

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["elements"] = list(self.elements)
        payload["energy_range"] = list(self.energy_range)
        payload["rbf_range"] = list(self.rbf_range)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)

    def replace(self, **changes) -> "ModelConfig":
        payload = self.to_dict()
        payload.update(changes)
        return ModelConfig.from_dict(payload)


class Prediction(NamedTuple):
    """Per-sample outputs of both heads and their average."""
    e_reg: np.ndarray
    logits: np.ndarray
    e_cls: np.ndarray
    e_final: np.ndarray


class MultimodalModel(nn.Module):
    """
    Geometric and text encoders, fusion trunk and dual heads.

    All parameters are float64 and initialized from the config seed, uniform
    in +-1/sqrt(fan_in). The text feedforward starts with zero biases so the
    frozen text embeddings of stage 1 are not all pulled along one shared offset.
    """

    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        if vocab_size < 1:
            raise ValueError(f"vocabulary size must be positive, got {vocab_size}")
        self.config = config
        self.vocab_size = vocab_size
        self.logger = logger
        d, h = config.embed_dim, config.hidden_dim

        self.atom_mlp = nn.Sequential(
            nn.Linear(config.feature_size, d, dtype=DTYPE), nn.Tanh(),
            nn.Linear(d, d, dtype=DTYPE), nn.Tanh(),
        )
        self.projection = nn.Linear(d, d, dtype=DTYPE)
        self.token_embedding = nn.Embedding(vocab_size, d, dtype=DTYPE)
        self.text_ff = nn.Sequential(
            nn.Linear(d, h, dtype=DTYPE), nn.Tanh(),
            nn.Linear(h, d, dtype=DTYPE),
        )
        self.trunk = nn.Sequential(
            nn.Linear(2 * d, h, dtype=DTYPE), nn.Tanh(),
            nn.Linear(h, h, dtype=DTYPE), nn.Tanh(),
        )
        self.reg_head = nn.Linear(h, 1, dtype=DTYPE)
        self.cls_head = nn.Linear(h, config.bin_count, dtype=DTYPE)
        self.missing = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(int(seed))
        d = self.config.embed_dim
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    module.weight.uniform_(-bound, bound, generator=generator)
                    module.bias.uniform_(-bound, bound, generator=generator)
                elif isinstance(module, nn.Embedding):
                    module.weight.uniform_(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d), generator=generator)
            self.missing.uniform_(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d), generator=generator)
            for layer in self.text_ff:
                if isinstance(layer, nn.Linear):
                    layer.bias.zero_()

    def group_of(self, name: str) -> str:
        for group, prefixes in PARAMETER_GROUPS.items():
            if any(name.startswith(p) for p in prefixes):
                return group
        raise KeyError(f"parameter '{name}' belongs to no group")

    def parameter_groups(self) -> Dict[str, List[Tuple[str, nn.Parameter]]]:
        groups: Dict[str, List[Tuple[str, nn.Parameter]]] = {g: [] for g in PARAMETER_GROUPS}
        for name, param in self.named_parameters():
            groups[self.group_of(name)].append((name, param))
        return groups

    def set_stage(self, stage: int) -> List[str]:
        """
        Apply the freeze mask of a training stage.

        Returns:
            Sorted names of the trainable parameters
        """
        if stage not in STAGE_TRAINABLE:
            raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
        trainable = set(STAGE_TRAINABLE[stage])
        names = []
        for name, param in self.named_parameters():
            active = self.group_of(name) in trainable
            param.requires_grad_(active)
            if active:
                names.append(name)
        self.logger.debug(f"Stage {stage}: {len(names)} trainable tensors in groups {sorted(trainable)}")
        return sorted(names)

    def encode_structures(self, features: torch.Tensor, atom_mask: torch.Tensor) -> torch.Tensor:
        """B x N x F padded atom features -> B x d geometric embeddings."""
        per_atom = self.atom_mlp(features)
        per_atom = per_atom.masked_fill(~atom_mask.unsqueeze(-1), float("-inf"))
        pooled = per_atom.max(dim=1).values
        return self.projection(pooled)

    def encode_texts(self, token_ids: torch.Tensor, token_mask: torch.Tensor) -> torch.Tensor:
        """B x T padded token ids -> B x d text embeddings."""
        weights = token_mask.to(DTYPE).unsqueeze(-1)
        summed = (self.token_embedding(token_ids) * weights).sum(dim=1)
        mean = summed / weights.sum(dim=1)
        return self.text_ff(mean)

    def heads(self, geo: Optional[torch.Tensor], text: torch.Tensor,
              geo_missing: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Fuse both channels and evaluate the two heads.

        Args:
            geo: B x d geometric embeddings, or None when the structure is unknown
            text: B x d text embeddings
            geo_missing: Optional boolean mask of samples whose geo embedding is
                replaced by the missing-modality vector

        Returns:
            Tuple of (e_reg with shape B, logits with shape B x K)
        """
        batch = text.shape[0]
        fill = self.missing.unsqueeze(0).expand(batch, -1)
        if geo is None:
            geo = fill
        elif geo_missing is not None:
            geo = torch.where(geo_missing.unsqueeze(-1), fill, geo)
        hidden = self.trunk(torch.cat([geo, text], dim=1))
        lo, hi = self.config.energy_range
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        e_reg = center + half * self.reg_head(hidden).squeeze(-1)
        return e_reg, self.cls_head(hidden)

    def finalize(self, e_reg: torch.Tensor, logits: torch.Tensor) -> Prediction:
        """Turn head outputs into a Prediction: e_cls from the argmax bin, e_final the mean."""
        e_reg_np = e_reg.detach().cpu().numpy().astype(float)
        logits_np = logits.detach().cpu().numpy().astype(float)
        e_cls = self.config.bin_midpoints(np.argmax(logits_np, axis=1))
        return Prediction(e_reg_np, logits_np, e_cls, (e_reg_np + e_cls) / 2.0)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
