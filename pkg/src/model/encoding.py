"""
Sample featurization, batching and the single-sample inference helpers.
"""
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch

from src.config import STRICT_SCALE
from src.core.elements import RadiiTable, load_radii_table
from src.core.errors import UnknownElement
from src.core.neighbors import NeighborList, build_neighbor_list, environment_distances
from src.core.structure import Structure
from src.model.multimodal import DTYPE, TAG_COUNT, ModelConfig, MultimodalModel, Prediction
from src.text.stringify import ConfigString
from src.text.tokens import TokenVocabulary

# Prediction chunk size for evaluation passes
EVAL_CHUNK = 256


@dataclass(frozen=True)
class EncodedSample:
    """Model-ready view of one sample."""
    features: np.ndarray
    token_ids: Tuple[int, ...]
    unk_count: int
    energy: float
    label: int


class Batch(NamedTuple):
    features: torch.Tensor
    atom_mask: torch.Tensor
    token_ids: torch.Tensor
    token_mask: torch.Tensor
    energies: torch.Tensor
    labels: torch.Tensor


def rbf_centers(config: ModelConfig) -> Tuple[np.ndarray, float]:
    lo, hi = config.rbf_range
    centers = np.linspace(lo, hi, config.rbf_count)
    width = (hi - lo) / max(config.rbf_count - 1, 1)
    return centers, width


def _element_counts(indices, elements: Sequence[str], index: Dict[str, int]) -> np.ndarray:
    counts = np.zeros(len(index))
    for j in indices:
        counts[index[elements[j]]] += 1.0
    return counts


def featurize(structure: Structure, nl: NeighborList, config: ModelConfig) -> np.ndarray:
    """
    Per-atom features.

    Layout: [element one-hot | tag one-hot | environment RBFs | strict-neighbor
    element counts | second-shell element counts]. The RBF block sums a
    Gaussian basis over every periodic image within the top of the RBF range,
    damped by a cosine envelope so atoms crossing the cutoff enter smoothly.
    The second shell holds neighbors of neighbors that are not the atom or
    its own neighbors.

    Depends only on elements, tags and interatomic distances, so it is
    unchanged by rigid motion of the structure.

    Raises:
        UnknownElement: if a site element is not in config.elements
    """
    index = {e: i for i, e in enumerate(config.elements)}
    n_el = len(config.elements)
    elements = structure.elements
    feats = np.zeros((len(structure), config.feature_size))
    for i, element in enumerate(elements):
        if element not in index:
            raise UnknownElement(element)
        feats[i, index[element]] = 1.0
    feats[np.arange(len(structure)), n_el + structure.tags] = 1.0

    centers, width = rbf_centers(config)
    cutoff = config.rbf_range[1]
    rbf_at = n_el + TAG_COUNT
    shells_at = rbf_at + config.rbf_count
    for i, d in enumerate(environment_distances(structure, cutoff)):
        if d.size:
            envelope = 0.5 * (np.cos(np.pi * d / cutoff) + 1.0)
            basis = np.exp(-(((d[:, None] - centers) / width) ** 2))
            feats[i, rbf_at:shells_at] = (basis * envelope[:, None]).sum(axis=0)

        first = nl.indices(i)
        second = set().union(*(nl.indices(j) for j in first)) - first - {i}
        feats[i, shells_at:shells_at + n_el] = _element_counts(first, elements, index)
        feats[i, shells_at + n_el:] = _element_counts(second, elements, index)
    return feats


def encode_sample(structure: Structure, config_string: ConfigString, energy: float,
                  config: ModelConfig, vocab: TokenVocabulary,
                  radii: Optional[RadiiTable] = None) -> EncodedSample:
    radii = radii or load_radii_table()
    nl = build_neighbor_list(structure, radii, STRICT_SCALE)
    ids, unk = vocab.encode(config_string)
    return EncodedSample(featurize(structure, nl, config), tuple(ids), unk, float(energy), config.bin_of(energy))


def encode_samples(samples: Sequence, config: ModelConfig, vocab: TokenVocabulary,
                   radii: Optional[RadiiTable] = None) -> List[EncodedSample]:
    """Encode dataset Samples (structure, config_string, energy)."""
    radii = radii or load_radii_table()
    return [encode_sample(s.structure, s.config_string, s.energy, config, vocab, radii) for s in samples]


def distinct_texts(items: Sequence[EncodedSample], count: int) -> List[EncodedSample]:
    """
    First `count` samples whose token multisets differ pairwise.

    Mean pooling maps equal multisets to one text embedding, so retrieval
    cannot tell such samples apart.
    """
    seen = set()
    kept: List[EncodedSample] = []
    for item in items:
        key = tuple(sorted(item.token_ids))
        if key in seen:
            continue
        seen.add(key)
        kept.append(item)
        if len(kept) == count:
            break
    return kept


def pad_tokens(id_lists: Sequence[Sequence[int]]) -> Tuple[torch.Tensor, torch.Tensor]:
    width = max(len(ids) for ids in id_lists)
    ids = torch.zeros((len(id_lists), width), dtype=torch.long)
    mask = torch.zeros((len(id_lists), width), dtype=torch.bool)
    for row, seq in enumerate(id_lists):
        ids[row, :len(seq)] = torch.tensor(list(seq), dtype=torch.long)
        mask[row, :len(seq)] = True
    return ids, mask


def collate(items: Sequence[EncodedSample]) -> Batch:
    """Pad a list of encoded samples into batch tensors."""
    n_max = max(item.features.shape[0] for item in items)
    n_feat = items[0].features.shape[1]
    features = np.zeros((len(items), n_max, n_feat))
    atom_mask = np.zeros((len(items), n_max), dtype=bool)
    for row, item in enumerate(items):
        n = item.features.shape[0]
        features[row, :n] = item.features
        atom_mask[row, :n] = True
    token_ids, token_mask = pad_tokens([item.token_ids for item in items])
    return Batch(
        features=torch.from_numpy(features).to(DTYPE),
        atom_mask=torch.from_numpy(atom_mask),
        token_ids=token_ids,
        token_mask=token_mask,
        energies=torch.tensor([item.energy for item in items], dtype=DTYPE),
        labels=torch.tensor([item.label for item in items], dtype=torch.long),
    )


def encode_structure(model: MultimodalModel, structure: Structure, nl_strict: NeighborList) -> np.ndarray:
    """Geometric embedding (d components) of one structure."""
    feats = torch.from_numpy(featurize(structure, nl_strict, model.config)).to(DTYPE).unsqueeze(0)
    mask = torch.ones((1, feats.shape[1]), dtype=torch.bool)
    with torch.no_grad():
        return model.encode_structures(feats, mask)[0].numpy().copy()


def encode_text(model: MultimodalModel, vocab: TokenVocabulary, config_string: ConfigString) -> np.ndarray:
    """Text embedding (d components) of one configuration string or prompt."""
    ids, _ = vocab.encode(config_string)
    token_ids, token_mask = pad_tokens([ids])
    with torch.no_grad():
        return model.encode_texts(token_ids, token_mask)[0].numpy().copy()


def predict(model: MultimodalModel, geo_emb: Optional[np.ndarray], text_emb: np.ndarray) -> Prediction:
    """
    Both head outputs and their average for one sample.

    Args:
        model: Trained or fresh model
        geo_emb: Geometric embedding, or None (MISSING) for text-only inference
        text_emb: Text embedding

    Returns:
        Prediction with length-1 arrays
    """
    text = torch.from_numpy(np.asarray(text_emb, dtype=float)).to(DTYPE).unsqueeze(0)
    geo = None if geo_emb is None else torch.from_numpy(np.asarray(geo_emb, dtype=float)).to(DTYPE).unsqueeze(0)
    with torch.no_grad():
        e_reg, logits = model.heads(geo, text)
    return model.finalize(e_reg, logits)


def predict_encoded(model: MultimodalModel, items: Sequence[EncodedSample], text_only: bool = False) -> Prediction:
    """Batched predictions; in text-only mode the atom features are never read."""
    parts = []
    with torch.no_grad():
        for start in range(0, len(items), EVAL_CHUNK):
            chunk = items[start:start + EVAL_CHUNK]
            token_ids, token_mask = pad_tokens([item.token_ids for item in chunk])
            text = model.encode_texts(token_ids, token_mask)
            geo = None
            if not text_only:
                batch = collate(chunk)
                geo = model.encode_structures(batch.features, batch.atom_mask)
            parts.append(model.finalize(*model.heads(geo, text)))
    return Prediction(*(np.concatenate([getattr(p, f) for p in parts]) for f in Prediction._fields))


def predict_texts(model: MultimodalModel, vocab: TokenVocabulary, configs: Sequence[ConfigString]) -> Prediction:
    """Text-only predictions for strings with no structure (prompts, indicative configs)."""
    ids = [vocab.encode(c)[0] for c in configs]
    parts = []
    with torch.no_grad():
        for start in range(0, len(ids), EVAL_CHUNK):
            token_ids, token_mask = pad_tokens(ids[start:start + EVAL_CHUNK])
            parts.append(model.finalize(*model.heads(None, model.encode_texts(token_ids, token_mask))))
    return Prediction(*(np.concatenate([getattr(p, f) for p in parts]) for f in Prediction._fields))


def embed_encoded(model: MultimodalModel, items: Sequence[EncodedSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Geometric and text embeddings (N x d each) of encoded samples."""
    geo_parts, text_parts = [], []
    with torch.no_grad():
        for start in range(0, len(items), EVAL_CHUNK):
            batch = collate(items[start:start + EVAL_CHUNK])
            geo_parts.append(model.encode_structures(batch.features, batch.atom_mask).numpy())
            text_parts.append(model.encode_texts(batch.token_ids, batch.token_mask).numpy())
    return np.concatenate(geo_parts), np.concatenate(text_parts)
