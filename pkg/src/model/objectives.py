"""
Torch autograd bridges over the analytic losses in src.model.losses.

Forward passes evaluate the numpy reference implementation; backward passes
return its stored partials, so model gradients use exactly the derivatives
the loss tests verify. The gated loss can instead hand back the magnitudes
of its partials (monotone mode), so a training step never ascends either
sub-loss.
"""
import numpy as np
import torch

from src.model import losses


def _np(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy()


class _MaeFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, preds, targets):
        result = losses.mae_loss(_np(preds), _np(targets))
        ctx.save_for_backward(torch.from_numpy(result.partials["preds"]).to(preds.dtype))
        return preds.new_tensor(result.value)

    @staticmethod
    def backward(ctx, grad_output):
        (d_preds,) = ctx.saved_tensors
        return grad_output * d_preds, None


class _CrossEntropyFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logits, labels):
        result = losses.ce_loss_batch(_np(logits), _np(labels))
        ctx.save_for_backward(torch.from_numpy(result.partials["logits"]).to(logits.dtype))
        return logits.new_tensor(result.value)

    @staticmethod
    def backward(ctx, grad_output):
        (d_logits,) = ctx.saved_tensors
        return grad_output * d_logits, None


class _MmtgFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, lm, lc, lam, monotone):
        result = losses.mmtg_combined(float(lm), float(lc), lam)
        d_lm, d_lc = result.partials["lm"], result.partials["lc"]
        if monotone:
            # the smaller loss is weighted by |lam * L_max * sech^2(L_min)|
            d_lm, d_lc = abs(d_lm), abs(d_lc)
        ctx.partials = (d_lm, d_lc)
        return lm.new_tensor(result.value)

    @staticmethod
    def backward(ctx, grad_output):
        d_lm, d_lc = ctx.partials
        return grad_output * d_lm, grad_output * d_lc, None, None


class _PlainFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, lm, lc, lam):
        result = losses.plain_combined(float(lm), float(lc), lam)
        ctx.partials = (result.partials["lm"], result.partials["lc"])
        return lm.new_tensor(result.value)

    @staticmethod
    def backward(ctx, grad_output):
        d_lm, d_lc = ctx.partials
        return grad_output * d_lm, grad_output * d_lc, None


class _InfoNceFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, geo, text, temperature):
        result = losses.info_nce(_np(geo), _np(text), temperature)
        ctx.save_for_backward(
            torch.from_numpy(result.partials["geo"]).to(geo.dtype),
            torch.from_numpy(result.partials["text"]).to(text.dtype),
        )
        return geo.new_tensor(result.value)

    @staticmethod
    def backward(ctx, grad_output):
        d_geo, d_text = ctx.saved_tensors
        geo_grad = grad_output * d_geo if ctx.needs_input_grad[0] else None
        text_grad = grad_output * d_text if ctx.needs_input_grad[1] else None
        return geo_grad, text_grad, None


def mae(preds: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return _MaeFunction.apply(preds, targets)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return _CrossEntropyFunction.apply(logits, labels)


def mmtg(lm: torch.Tensor, lc: torch.Tensor, lam: float, monotone: bool = False) -> torch.Tensor:
    return _MmtgFunction.apply(lm, lc, lam, monotone)


def plain(lm: torch.Tensor, lc: torch.Tensor, lam: float) -> torch.Tensor:
    return _PlainFunction.apply(lm, lc, lam)


def info_nce(geo: torch.Tensor, text: torch.Tensor, align: losses.AlignConfig) -> torch.Tensor:
    return _InfoNceFunction.apply(geo, text, align.temperature)


def combined(loss_name: str, lm: torch.Tensor, lc: torch.Tensor, mmtg_lambda: float,
             plain_lambda: float, monotone: bool = False) -> torch.Tensor:
    """Dispatch to the MMTG or the plain weighting by name."""
    if loss_name == "mmtg":
        return mmtg(lm, lc, mmtg_lambda, monotone)
    if loss_name == "plain":
        return plain(lm, lc, plain_lambda)
    raise ValueError(f"unknown loss '{loss_name}'")
