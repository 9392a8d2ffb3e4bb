"""
Scalar training objectives with analytic partial derivatives.

Every function returns a LossValue whose partials are keyed by argument name,
so the autograd bridges in src.model.objectives can hand them back to torch
unchanged.
"""
from dataclasses import dataclass, field
from typing import Dict, Sequence, Union

import numpy as np

from src.config import DEFAULT_BATCH_SIZE, DEFAULT_TEMPERATURE
from src.core.errors import EmptyInput, IndexOutOfRange, LengthMismatch, ShapeMismatch, ZeroNormRow

Partial = Union[float, np.ndarray]


@dataclass(frozen=True)
class LossValue:
    """Loss value and its partial derivatives with respect to each input."""
    value: float
    partials: Dict[str, Partial] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"loss value is not finite: {self.value}")


@dataclass(frozen=True)
class AlignConfig:
    """Contrastive alignment settings."""
    temperature: float = DEFAULT_TEMPERATURE
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {self.batch_size}")


def _log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def mae_loss(preds: Sequence[float], targets: Sequence[float]) -> LossValue:
    """
    Mean absolute error.

    The partial with respect to each prediction is sign(p - t)/n, zero at an
    exact tie.

    Raises:
        LengthMismatch: if the sequences differ in length
        EmptyInput: if they are empty
    """
    p = np.asarray(preds, dtype=float).reshape(-1)
    t = np.asarray(targets, dtype=float).reshape(-1)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise EmptyInput("mae_loss needs at least one prediction")
    residual = p - t
    grad = np.sign(residual) / p.size
    return LossValue(float(np.mean(np.abs(residual))), {"preds": grad, "targets": -grad})


def ce_loss(logits: Sequence[float], label: int) -> LossValue:
    """
    Cross-entropy of one logit vector against a class index.

    Computed through a max-shifted log-sum-exp; partials are softmax - onehot.

    Raises:
        IndexOutOfRange: if label is not a valid class
    """
    z = np.asarray(logits, dtype=float).reshape(-1)
    if not 0 <= label < z.size:
        raise IndexOutOfRange(f"label {label} out of range for {z.size} classes")
    log_p = _log_softmax(z, axis=0)
    grad = np.exp(log_p)
    grad[label] -= 1.0
    return LossValue(float(-log_p[label]), {"logits": grad})


def ce_loss_batch(logits: np.ndarray, labels: Sequence[int]) -> LossValue:
    """Mean cross-entropy over the rows of a B x K logit matrix."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.asarray(labels, dtype=int).reshape(-1)
    if z.shape[0] != y.size:
        raise LengthMismatch(f"{z.shape[0]} logit rows vs {y.size} labels")
    if y.size == 0:
        raise EmptyInput("ce_loss_batch needs at least one row")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise IndexOutOfRange(f"labels must lie in [0, {z.shape[1]})")
    rows = np.arange(y.size)
    log_p = _log_softmax(z, axis=1)
    grad = np.exp(log_p)
    grad[rows, y] -= 1.0
    return LossValue(float(-np.mean(log_p[rows, y])), {"logits": grad / y.size})


def _check_sub_losses(lm: float, lc: float) -> None:
    if lm < 0.0 or lc < 0.0:
        raise ValueError(f"sub-losses must be non-negative, got L_MAE={lm}, L_CE={lc}")


def plain_combined(lm: float, lc: float, lam: float) -> LossValue:
    """Linear weighting lam * L_MAE + L_CE."""
    _check_sub_losses(lm, lc)
    if not lam > 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return LossValue(lam * lm + lc, {"lm": float(lam), "lc": 1.0})


def mmtg_combined(lm: float, lc: float, lam: float) -> LossValue:
    """
    Max-min tanh-gated combination M * (2 - lam * tanh(m)).

    M is the larger and m the smaller of the two sub-losses. On a tie L_MAE
    takes the role of M.

    Args:
        lm: Regression loss L_MAE
        lc: Classification loss L_CE
        lam: Gating strength in (0, 1]

    Returns:
        LossValue with partials 'lm' and 'lc'
    """
    _check_sub_losses(lm, lc)
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lambda must lie in (0, 1], got {lam}")
    mae_is_max = lm >= lc
    big, small = (lm, lc) if mae_is_max else (lc, lm)
    gate = np.tanh(small)
    value = big * (2.0 - lam * gate)
    d_big = 2.0 - lam * gate
    d_small = -lam * big * (1.0 - gate * gate)
    if mae_is_max:
        partials = {"lm": float(d_big), "lc": float(d_small)}
    else:
        partials = {"lm": float(d_small), "lc": float(d_big)}
    return LossValue(float(value), partials)


def _normalize_rows(x: np.ndarray, name: str):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormRow(f"{name} embedding row {int(np.argmin(norms))} has zero norm")
    return x / norms[:, None], norms


def info_nce(geo_emb: np.ndarray, text_emb: np.ndarray, temperature: float = DEFAULT_TEMPERATURE) -> LossValue:
    """
    Symmetric InfoNCE over a batch of paired embeddings.

    Rows are L2-normalized first, then S = g t^T / tau and the loss is the
    mean of the row-wise and column-wise cross-entropies against the diagonal.

    Args:
        geo_emb: B x d geometric embeddings
        text_emb: B x d text embeddings
        temperature: Softmax temperature tau

    Returns:
        LossValue with partials 'geo' and 'text' (B x d each)

    Raises:
        ShapeMismatch: if the two matrices differ in shape
        ZeroNormRow: if a row cannot be normalized
    """
    geo = np.atleast_2d(np.asarray(geo_emb, dtype=float))
    text = np.atleast_2d(np.asarray(text_emb, dtype=float))
    if geo.shape != text.shape:
        raise ShapeMismatch(f"geo {geo.shape} vs text {text.shape}")
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    batch = geo.shape[0]
    g, g_norm = _normalize_rows(geo, "geo")
    t, t_norm = _normalize_rows(text, "text")

    sim = g @ t.T / temperature
    eye = np.eye(batch)
    log_rows = _log_softmax(sim, axis=1)
    log_cols = _log_softmax(sim, axis=0)
    value = 0.5 * (-np.mean(np.diag(log_rows)) - np.mean(np.diag(log_cols)))

    d_sim = 0.5 * ((np.exp(log_rows) - eye) + (np.exp(log_cols) - eye)) / batch
    d_g = d_sim @ t / temperature
    d_t = d_sim.T @ g / temperature
    # back through x / |x|
    d_geo = (d_g - g * np.sum(g * d_g, axis=1, keepdims=True)) / g_norm[:, None]
    d_text = (d_t - t * np.sum(t * d_t, axis=1, keepdims=True)) / t_norm[:, None]
    return LossValue(float(value), {"geo": d_geo, "text": d_text})
