"""
Evaluation metrics: MAE and R^2, the prediction inclusion ratio (PIR), and
cross-modal similarity diagnostics.
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from sklearn.metrics import mean_absolute_error, r2_score
from sklearn.metrics.pairwise import cosine_similarity

from src.core.errors import (
    ConstantTargets, EmptyInput, LengthMismatch, ShapeMismatch, TooSmall, ZeroNormRow,
)
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class PirSpec:
    """Inclusive target energy range [lo, hi] of one system, in eV."""
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"PIR range needs lo <= hi, got [{self.lo}, {self.hi}]")

    @classmethod
    def from_energies(cls, energies: Sequence[float], delta: float) -> "PirSpec":
        """Range [min - delta, min + delta] around the lowest enumerated energy."""
        if len(energies) == 0:
            raise EmptyInput("need at least one energy to form a PIR range")
        low = float(np.min(energies))
        return cls(low - delta, low + delta)

    def contains(self, energy: float) -> bool:
        return self.lo <= energy <= self.hi


def _paired(preds, targets) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=float).reshape(-1)
    t = np.asarray(targets, dtype=float).reshape(-1)
    if p.size != t.size:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise EmptyInput("metrics need at least one prediction")
    return p, t


def mae_r2(preds: Sequence[float], targets: Sequence[float]) -> Tuple[float, float]:
    """
    Mean absolute error and coefficient of determination.

    Raises:
        EmptyInput: for empty inputs
        LengthMismatch: for unequal lengths
        ConstantTargets: if the targets have zero variance (R^2 undefined)
    """
    p, t = _paired(preds, targets)
    if np.all(t == t[0]):
        raise ConstantTargets("R^2 is undefined for constant targets")
    return float(mean_absolute_error(t, p)), float(r2_score(t, p))


def pir(preds: Sequence[float], ranges: Sequence[PirSpec]) -> float:
    """Percentage of predictions inside their system's inclusive target range."""
    if len(preds) != len(ranges):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(ranges)} ranges")
    if len(preds) == 0:
        raise EmptyInput("pir needs at least one prediction")
    inside = sum(1 for e, r in zip(preds, ranges) if r.contains(float(e)))
    return 100.0 * inside / len(preds)


def _check_rows(x: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormRow(f"{name} row {int(np.argmin(norms))} has zero norm")


def similarity_matrix(geo_embs: np.ndarray, text_embs: np.ndarray) -> np.ndarray:
    """Cosine similarity, rows = geometric embeddings, columns = text embeddings."""
    geo = np.atleast_2d(np.asarray(geo_embs, dtype=float))
    text = np.atleast_2d(np.asarray(text_embs, dtype=float))
    if geo.shape != text.shape:
        raise ShapeMismatch(f"geo {geo.shape} vs text {text.shape}")
    _check_rows(geo, "geo")
    _check_rows(text, "text")
    return np.clip(cosine_similarity(geo, text), -1.0, 1.0)


def _square(sim: np.ndarray) -> np.ndarray:
    s = np.atleast_2d(np.asarray(sim, dtype=float))
    if s.shape[0] != s.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got {s.shape}")
    return s


def diagonal_dominance(sim: np.ndarray) -> float:
    """Mean of the diagonal minus mean of the off-diagonal entries."""
    s = _square(sim)
    n = s.shape[0]
    if n < 2:
        raise TooSmall(f"diagonal dominance needs N >= 2, got {n}")
    diag = np.diag(s)
    off = (s.sum() - diag.sum()) / (n * n - n)
    return float(diag.mean() - off)


def retrieval_top1(sim: np.ndarray) -> float:
    """Percentage of rows whose argmax (first on ties) is the diagonal entry."""
    s = _square(sim)
    if s.shape[0] == 0:
        raise EmptyInput("retrieval needs at least one row")
    hits = np.argmax(s, axis=1) == np.arange(s.shape[0])
    return 100.0 * float(np.mean(hits))


def autocorrelation_heatmap(embs: np.ndarray) -> np.ndarray:
    """Symmetric cosine self-similarity with a unit diagonal."""
    x = np.atleast_2d(np.asarray(embs, dtype=float))
    _check_rows(x, "embedding")
    s = cosine_similarity(x)
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    return np.clip(s, -1.0, 1.0)


def relative_change(baseline: float, improved: float, lower_is_better: bool = True) -> float:
    """
    Percent improvement of a metric over a baseline.

    For MAE-like metrics (lower_is_better) a drop from 0.713 to 0.486 is a
    31.8% improvement; for R^2-like metrics a rise counts as positive.
    """
    if baseline == 0.0:
        raise ValueError("relative change is undefined for a zero baseline")
    delta = baseline - improved if lower_is_better else improved - baseline
    return 100.0 * delta / abs(baseline)


def late_stage_summary(losses: Sequence[float], fraction: float = 0.1) -> Tuple[float, float]:
    """
    Mean and standard deviation of the last fraction of a loss curve.

    Returns:
        Tuple of (mean, population standard deviation)
    """
    values = np.asarray(losses, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptyInput("loss curve is empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    tail = values[-max(1, math.ceil(fraction * values.size)):]
    return float(tail.mean()), float(tail.std())


def write_matrix_csv(path: Path, matrix: np.ndarray) -> Path:
    """Write a matrix as CSV: a header row of column indices, then one row per matrix row."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(range(m.shape[1]))
        for row in m:
            writer.writerow(repr(float(v)) for v in row)
    logger.debug(f"Wrote {m.shape[0]}x{m.shape[1]} matrix to {path}")
    return path
