"""
Evaluation protocols built on the model, the generator and the metrics:
split scoring in multimodal and text-only mode, head ablation, the MMTG vs
plain loss comparison, the PIR experiment, embedding similarity summaries and
heatmap exports.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.config import (
    DEFAULT_PIR_ATTEMPTS, DEFAULT_PIR_CONFIGURATIONS, DEFAULT_PIR_DELTA, RETRIEVAL_EVAL_SIZE, STRICT_SCALE,
)
from src.core.elements import load_radii_table
from src.core.errors import AdsorbKitError, EmptyInput, TooSmall
from src.core.neighbors import build_neighbor_list
from src.data.dataset import Sample
from src.data.synth import GenSpec, OracleParams, enumerate_configurations, generate_indicative_cif
from src.eval.metrics import (
    PirSpec, autocorrelation_heatmap, late_stage_summary, mae_r2, pir, similarity_matrix, write_matrix_csv,
)
from src.model.encoding import embed_encoded, encode_samples, encode_structure, predict_encoded, predict_texts
from src.model.multimodal import MultimodalModel
from src.model.trainer import build_model, evaluate_losses, train_stage
from src.parsers.cif import composition_matches, parse_cif, truncate_at_double_newline
from src.text.stringify import ConfigString, SystemMeta, permissive_config_string, two_part_prompt
from src.text.tokens import TokenVocabulary
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass
class SplitMetrics:
    mae: float
    r2: float
    count: int
    text_only: bool


def evaluate_split(model: MultimodalModel, vocab: TokenVocabulary, samples: Sequence[Sample],
                   text_only: bool = False) -> SplitMetrics:
    """
    MAE and R^2 of e_final on one split.

    Args:
        model: Model to score
        vocab: Its vocabulary
        samples: Dataset samples
        text_only: Replace every geometric embedding by the missing-modality vector

    Returns:
        SplitMetrics of the split
    """
    if not samples:
        raise EmptyInput("cannot evaluate an empty split")
    items = encode_samples(samples, model.config, vocab)
    prediction = predict_encoded(model, items, text_only=text_only)
    mae, r2 = mae_r2(prediction.e_final, [s.energy for s in samples])
    logger.info(f"{'Text-only' if text_only else 'Multimodal'} evaluation on {len(samples)} samples: "
                f"MAE={mae:.4f} eV R2={r2:.4f}")
    return SplitMetrics(mae, r2, len(samples), text_only)


def head_ablation(model: MultimodalModel, vocab: TokenVocabulary, samples: Sequence[Sample]) -> Dict[str, float]:
    """
    MAE of the regression head, the bin classifier and their average.

    Returns:
        Dict with keys 'regression', 'classifier', 'combined'
    """
    items = encode_samples(samples, model.config, vocab)
    prediction = predict_encoded(model, items)
    targets = np.array([s.energy for s in samples])
    return {
        "regression": float(np.mean(np.abs(prediction.e_reg - targets))),
        "classifier": float(np.mean(np.abs(prediction.e_cls - targets))),
        "combined": float(np.mean(np.abs(prediction.e_final - targets))),
    }


@dataclass
class LossDynamicsRow:
    seed: int
    loss: str
    final_sum: float
    late_mean: float
    late_std: float


def compare_loss_dynamics(samples: Sequence[Sample], seeds: Sequence[int], align_first: bool = True,
                          **overrides) -> List[LossDynamicsRow]:
    """
    Stage 2 with the gated and with the plain loss from identical starting points.

    For every seed both runs share initialization, data order and step count;
    only the combined objective differs.

    Args:
        samples: Training samples
        seeds: Seeds to run
        align_first: Run stage 1 before the stage-2 comparison
        **overrides: ModelConfig fields (epochs, learning_rate, ...)

    Returns:
        One row per (seed, loss) with final L_MAE + L_CE on the training data
        and the late-stage mean and standard deviation of the step losses
    """
    rows = []
    for seed in seeds:
        for loss in ("mmtg", "plain"):
            model, vocab = build_model(samples, seed, loss=loss, **overrides)
            items = encode_samples(samples, model.config, vocab)
            if align_first:
                train_stage(model, 1, items)
            log = train_stage(model, 2, items)
            losses = evaluate_losses(model, items)
            late_mean, late_std = late_stage_summary(log.step_losses)
            rows.append(LossDynamicsRow(seed, loss, losses["l_mae"] + losses["l_ce"], late_mean, late_std))
            logger.info(f"Seed {seed} {loss}: final L_MAE+L_CE={rows[-1].final_sum:.4f}")
    return rows


def select_systems(samples: Sequence[Sample], count: int) -> List[SystemMeta]:
    """First `count` distinct systems in dataset order."""
    seen: List[SystemMeta] = []
    for sample in samples:
        if sample.meta not in seen:
            seen.append(sample.meta)
            if len(seen) == count:
                break
    return seen


@dataclass
class PirRow:
    meta: SystemMeta
    target: PirSpec
    with_config: float
    without_config: float
    config_string: Optional[str]


@dataclass
class PirResult:
    with_config: float
    without_config: float
    rows: List[PirRow] = field(default_factory=list)


def indicative_config(spec: GenSpec, meta: SystemMeta, attempts: int,
                      params: Optional[OracleParams] = None) -> Optional[ConfigString]:
    """
    Permissive config string of the first indicative CIF that survives filtering.

    Each attempt is truncated at the blank line and must parse with exactly
    the system's composition. Returns None if no attempt survives.
    """
    radii = load_radii_table()
    for attempt in range(attempts):
        text = truncate_at_double_newline(generate_indicative_cif(spec, meta, attempt, params))
        if not composition_matches(text, meta.full_formula):
            logger.debug(f"{meta.full_formula}: attempt {attempt} rejected by the composition filter")
            continue
        try:
            return permissive_config_string(parse_cif(text).structure, meta, radii)
        except AdsorbKitError as e:
            logger.debug(f"{meta.full_formula}: attempt {attempt} has no usable adsorbate: {e}")
    return None


def run_pir_experiment(model: MultimodalModel, vocab: TokenVocabulary, spec: GenSpec,
                       metas: Sequence[SystemMeta], delta: float = DEFAULT_PIR_DELTA,
                       configurations: int = DEFAULT_PIR_CONFIGURATIONS,
                       attempts: int = DEFAULT_PIR_ATTEMPTS,
                       params: Optional[OracleParams] = None) -> PirResult:
    """
    PIR of text-only predictions with and without a configuration segment.

    For each system the oracle energies of `configurations` enumerated
    configurations give the target range [min - delta, min + delta]. The
    with-config prediction reads the permissive string of an indicative CIF;
    the without-config prediction reads the two-part prompt. A system whose
    indicative CIFs all fail the filter falls back to the prompt.

    Raises:
        EmptyInput: if metas is empty
        UnrealizableMeta: if a system cannot be built from spec
    """
    if not metas:
        raise EmptyInput("PIR experiment needs at least one system")
    params = params or OracleParams(spec.seed)
    rows = []
    for meta in metas:
        energies = [s.energy for s in enumerate_configurations(spec, meta, configurations, params)]
        target = PirSpec.from_energies(energies, delta)
        prompt = two_part_prompt(meta)
        config = indicative_config(spec, meta, attempts, params)
        if config is None:
            logger.warning(f"{meta.full_formula}: no indicative CIF survived {attempts} attempts; using the prompt")
        strings = [config or prompt, prompt]
        prediction = predict_texts(model, vocab, strings).e_final
        rows.append(PirRow(meta, target, float(prediction[0]), float(prediction[1]),
                           None if config is None else config.text))

    with_config = pir([r.with_config for r in rows], [r.target for r in rows])
    without_config = pir([r.without_config for r in rows], [r.target for r in rows])
    logger.info(f"PIR over {len(rows)} systems: with config {with_config:.1f}%, without {without_config:.1f}%")
    return PirResult(with_config, without_config, rows)


@dataclass
class SimilaritySummary:
    within_mean: float
    within_std: float
    cross_mean: float


def system_similarity_summary(model: MultimodalModel, spec: GenSpec, metas: Sequence[SystemMeta],
                              configurations: int = DEFAULT_PIR_CONFIGURATIONS) -> SimilaritySummary:
    """
    Cosine similarity of geometric embeddings within and across systems.

    Each system contributes `configurations` enumerated configurations. The
    within statistics cover off-diagonal pairs of one system; the cross mean
    covers pairs drawn from two different systems.

    Raises:
        TooSmall: with fewer than two systems or two configurations
    """
    if len(metas) < 2 or configurations < 2:
        raise TooSmall("similarity summary needs two systems with two configurations each")
    radii = load_radii_table()
    blocks = []
    for meta in metas:
        embeddings = []
        for sample in enumerate_configurations(spec, meta, configurations):
            nl = build_neighbor_list(sample.structure, radii, STRICT_SCALE)
            embeddings.append(encode_structure(model, sample.structure, nl))
        blocks.append(np.array(embeddings))

    sim = autocorrelation_heatmap(np.concatenate(blocks))
    owner = np.repeat(np.arange(len(blocks)), [len(b) for b in blocks])
    same = owner[:, None] == owner[None, :]
    within = sim[same & ~np.eye(len(owner), dtype=bool)]
    cross = sim[~same]
    summary = SimilaritySummary(float(within.mean()), float(within.std()), float(cross.mean()))
    logger.info(f"Similarity over {len(metas)} systems: within {summary.within_mean:.4f} "
                f"(std {summary.within_std:.4f}), cross {summary.cross_mean:.4f}")
    return summary


def export_heatmaps(model: MultimodalModel, vocab: TokenVocabulary, samples: Sequence[Sample],
                    spec: GenSpec, out_dir: Path,
                    configurations: int = DEFAULT_PIR_CONFIGURATIONS) -> Dict[str, Path]:
    """
    Write the geo/text similarity matrix of a split and the autocorrelation
    of one system's configurations as CSV.

    Returns:
        Mapping of heatmap name to written path
    """
    if not samples:
        raise EmptyInput("heatmaps need at least one sample")
    out_dir = Path(out_dir)
    items = encode_samples(list(samples)[:RETRIEVAL_EVAL_SIZE], model.config, vocab)
    geo, text = embed_encoded(model, items)
    paths = {"similarity": write_matrix_csv(out_dir / "similarity.csv", similarity_matrix(geo, text))}

    radii = load_radii_table()
    meta = samples[0].meta
    embeddings = []
    for sample in enumerate_configurations(spec, meta, configurations):
        nl = build_neighbor_list(sample.structure, radii, STRICT_SCALE)
        embeddings.append(encode_structure(model, sample.structure, nl))
    paths["autocorrelation"] = write_matrix_csv(out_dir / "autocorrelation.csv",
                                                autocorrelation_heatmap(np.array(embeddings)))
    logger.info(f"Heatmaps written to {out_dir}")
    return paths
