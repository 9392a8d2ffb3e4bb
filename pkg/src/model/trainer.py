"""
Three-stage training schedule, loss evaluation and the end-to-end gradient check.

Stage 1 aligns the geometric channel to the frozen text channel with InfoNCE.
Stage 2 trains everything on the gated (or plain) multitask loss plus
beta * InfoNCE, with modality dropout on the geometric embedding.
Stage 3 freezes the geometric channel and alternates batches with and without
it so the text channel learns to predict alone.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.config import DEFAULT_PALETTE, RETRIEVAL_EVAL_SIZE
from src.core.errors import EmptyDataset, NonFiniteLoss
from src.eval.metrics import diagonal_dominance, retrieval_top1, similarity_matrix
from src.model import objectives
from src.model.encoding import Batch, EncodedSample, collate, distinct_texts, embed_encoded
from src.model.multimodal import ModelConfig, MultimodalModel
from src.text.tokens import TokenVocabulary
from src.utils.logger import setup_logger
from src.utils.runtime import configure_deterministic

logger = setup_logger(__name__)

CSV_HEADER = ("epoch", "L_MAE", "L_CE", "combined", "retrieval_top1")
ENERGY_MARGIN = 0.05


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    l_mae: float
    l_ce: float
    combined: float
    retrieval_top1: float


@dataclass
class TrainingLog:
    """Per-epoch means plus the per-step loss curve of one stage."""
    stage: int
    loss: str
    epochs: List[EpochRecord] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    unk_count: int = 0

    @property
    def final(self) -> EpochRecord:
        if not self.epochs:
            raise ValueError("training log has no epochs")
        return self.epochs[-1]

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for rec in self.epochs:
                writer.writerow([rec.epoch, repr(rec.l_mae), repr(rec.l_ce),
                                 repr(rec.combined), repr(rec.retrieval_top1)])
        return path


def stage_objective(model: MultimodalModel, batch: Batch, stage: int, config: ModelConfig,
                    geo_missing: Optional[torch.Tensor] = None,
                    exact_gate: bool = False) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Objective of one training stage on one batch.

    The MMTG loss back-propagates monotone gate weights unless exact_gate is
    set, in which case its gradient is the exact derivative of the value.

    Returns:
        Tuple of (objective, L_MAE, L_CE); in stage 1 the two sub-losses are
        reported but carry no gradient
    """
    geo = model.encode_structures(batch.features, batch.atom_mask)
    text = model.encode_texts(batch.token_ids, batch.token_mask)
    if stage == 1:
        align = objectives.info_nce(geo, text, config.align)
        with torch.no_grad():
            e_reg, logits = model.heads(geo, text)
            lm = objectives.mae(e_reg, batch.energies)
            lc = objectives.cross_entropy(logits, batch.labels)
        return align, lm, lc

    e_reg, logits = model.heads(geo, text, geo_missing)
    lm = objectives.mae(e_reg, batch.energies)
    lc = objectives.cross_entropy(logits, batch.labels)
    objective = objectives.combined(config.loss, lm, lc, config.mmtg_lambda, config.plain_lambda,
                                   monotone=not exact_gate)
    if stage == 2 and config.beta > 0.0:
        objective = objective + config.beta * objectives.info_nce(geo, text, config.align)
    return objective, lm, lc


def _geo_missing(stage: int, global_step: int, size: int, config: ModelConfig,
                 rng: np.random.Generator) -> Optional[torch.Tensor]:
    if stage == 2:
        return torch.from_numpy(rng.random(size) < config.modality_dropout)
    if stage == 3:
        # even steps of the stage run text-only, odd steps see the structure
        return torch.full((size,), global_step % 2 == 0, dtype=torch.bool)
    return None


def retrieval_metrics(model: MultimodalModel, items: Sequence[EncodedSample]) -> Tuple[float, float]:
    """Top-1 retrieval (percent) and diagonal dominance of the geo/text similarity matrix."""
    geo, text = embed_encoded(model, items)
    sim = similarity_matrix(geo, text)
    dominance = diagonal_dominance(sim) if len(items) >= 2 else 0.0
    return retrieval_top1(sim), dominance


def train_stage(model: MultimodalModel, stage: int, items: Sequence[EncodedSample],
                config: Optional[ModelConfig] = None,
                retrieval_items: Optional[Sequence[EncodedSample]] = None) -> TrainingLog:
    """
    Run one training stage in place.

    Plain gradient descent with a fixed step over seeded mini-batch shuffles.
    Parameters outside the stage's trainable groups are left bit-identical.

    Args:
        model: Model to train
        stage: 1, 2 or 3
        items: Encoded training samples
        config: Training settings (defaults to model.config)
        retrieval_items: Samples for the per-epoch retrieval metric
            (defaults to the training samples); only the first samples with
            distinct token multisets are scored

    Returns:
        TrainingLog of the stage

    Raises:
        EmptyDataset: if items is empty
        NonFiniteLoss: if a loss or gradient stops being finite
    """
    if not items:
        raise EmptyDataset(f"stage {stage} needs at least one training sample")
    config = config or model.config
    configure_deterministic()
    model.set_stage(stage)
    params = [p for p in model.parameters() if p.requires_grad]
    rng = np.random.default_rng([config.seed, stage])
    scored = distinct_texts(retrieval_items if retrieval_items is not None else items, RETRIEVAL_EVAL_SIZE)

    log = TrainingLog(stage=stage, loss=config.loss, unk_count=sum(item.unk_count for item in items))
    if log.unk_count:
        logger.info(f"Stage {stage}: {log.unk_count} tokens mapped to <unk>")

    n = len(items)
    epochs = config.epochs_of(stage)
    global_step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        steps = 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            chunk = [items[i] for i in order[start:start + config.batch_size]]
            batch = collate(chunk)
            missing = _geo_missing(stage, global_step, len(chunk), config, rng)
            try:
                objective, lm, lc = stage_objective(model, batch, stage, config, missing)
            except ValueError as e:
                raise NonFiniteLoss(stage, epoch, step, str(e)) from None
            values = (float(lm), float(lc), float(objective))
            if not np.all(np.isfinite(values)):
                raise NonFiniteLoss(stage, epoch, step, f"L_MAE={values[0]}, L_CE={values[1]}, objective={values[2]}")

            model.zero_grad(set_to_none=True)
            objective.backward()
            with torch.no_grad():
                for p in params:
                    if p.grad is None:
                        continue
                    if not torch.all(torch.isfinite(p.grad)):
                        raise NonFiniteLoss(stage, epoch, step, "non-finite gradient")
                    p.sub_(config.learning_rate * p.grad)

            sums += values
            steps += 1
            global_step += 1
            log.step_losses.append(values[2])

        top1, _ = retrieval_metrics(model, scored)
        mean = sums / steps
        record = EpochRecord(stage, epoch, float(mean[0]), float(mean[1]), float(mean[2]), top1)
        log.epochs.append(record)
        logger.info(
            f"Stage {stage} epoch {epoch}/{epochs}: L_MAE={record.l_mae:.4f} "
            f"L_CE={record.l_ce:.4f} combined={record.combined:.4f} top1={record.retrieval_top1:.1f}%"
        )

    model.zero_grad(set_to_none=True)
    return log


def run_schedule(model: MultimodalModel, items: Sequence[EncodedSample], stages: Sequence[int] = (1, 2, 3),
                 retrieval_items: Optional[Sequence[EncodedSample]] = None) -> Dict[int, TrainingLog]:
    """Run several stages in order and return their logs."""
    return {stage: train_stage(model, stage, items, retrieval_items=retrieval_items) for stage in stages}


def evaluate_losses(model: MultimodalModel, items: Sequence[EncodedSample],
                    config: Optional[ModelConfig] = None) -> Dict[str, float]:
    """
    Full-data L_MAE, L_CE and combined loss with the structure present.

    Returns:
        Dict with keys 'l_mae', 'l_ce', 'combined'
    """
    if not items:
        raise EmptyDataset("cannot evaluate losses on an empty dataset")
    config = config or model.config
    batch = collate(list(items))
    with torch.no_grad():
        _, lm, lc = stage_objective(model, batch, 3, config)
        combined = objectives.combined(config.loss, lm, lc, config.mmtg_lambda, config.plain_lambda)
    return {"l_mae": float(lm), "l_ce": float(lc), "combined": float(combined)}


def gradient_check(model: MultimodalModel, items: Sequence[EncodedSample], epsilon: float = 1e-5,
                   samples: int = 200, seed: int = 0) -> float:
    """
    Compare autograd gradients of the stage-2 objective with central differences.

    Modality dropout is off and the MMTG gate uses its exact derivative, so
    the objective is a deterministic function of the parameters with a true
    gradient. Parameters are restored exactly afterwards.

    Args:
        model: Model to check
        items: Batch of encoded samples (at least one)
        epsilon: Finite-difference step
        samples: Number of randomly chosen scalar parameters
        seed: Seed of the parameter choice

    Returns:
        Maximum relative error |a - n| / max(|a|, |n|, 1e-6)
    """
    if not items:
        raise EmptyDataset("gradient check needs at least one sample")
    config = model.config
    batch = collate(list(items))
    model.set_stage(2)
    model.zero_grad(set_to_none=True)
    objective, _, _ = stage_objective(model, batch, 2, config, exact_gate=True)
    objective.backward()

    named = list(model.named_parameters())
    sizes = np.array([p.numel() for _, p in named])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(samples, int(offsets[-1])), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat in np.sort(picks):
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, param = named[which]
            k = int(flat - offsets[which])
            view = param.data.view(-1)
            analytic = 0.0 if param.grad is None else float(param.grad.view(-1)[k])
            original = float(view[k])
            view[k] = original + epsilon
            f_plus = float(stage_objective(model, batch, 2, config, exact_gate=True)[0])
            view[k] = original - epsilon
            f_minus = float(stage_objective(model, batch, 2, config, exact_gate=True)[0])
            view[k] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            if error > worst:
                logger.debug(f"Gradient check {name}[{k}]: analytic={analytic:.6e} numeric={numeric:.6e}")
            worst = max(worst, error)
    model.zero_grad(set_to_none=True)
    return worst


def config_for_dataset(samples: Sequence, seed: int = 0, **overrides) -> ModelConfig:
    """
    Fresh ModelConfig sized to a dataset.

    The element one-hot covers the dataset elements plus the default palette;
    the energy range pads the observed range by 5% of its span on each side.
    """
    if not samples:
        raise EmptyDataset("cannot size a model from an empty dataset")
    elements = set(DEFAULT_PALETTE)
    for sample in samples:
        elements.update(sample.structure.elements)
    energies = np.array([sample.energy for sample in samples], dtype=float)
    lo, hi = float(energies.min()), float(energies.max())
    margin = max(ENERGY_MARGIN * (hi - lo), 1e-3)
    return ModelConfig(elements=tuple(sorted(elements)), energy_range=(lo - margin, hi + margin),
                       seed=seed, **overrides)


def build_model(samples: Sequence, seed: int = 0, **overrides) -> Tuple[MultimodalModel, TokenVocabulary]:
    """Seeded fresh model plus the vocabulary of the samples' config strings."""
    config = config_for_dataset(samples, seed, **overrides)
    vocab = TokenVocabulary.build(sample.config_string for sample in samples)
    model = MultimodalModel(config, len(vocab))
    logger.info(f"Initialized model: {model.parameter_count()} parameters, {len(vocab)} tokens, "
                f"energy range [{config.energy_range[0]:.3f}, {config.energy_range[1]:.3f}] eV")
    return model, vocab
