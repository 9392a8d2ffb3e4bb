"""
Exception hierarchy shared by every AdsorbKit module.
"""
from typing import Optional


class AdsorbKitError(Exception):
    """Base class for all toolkit errors."""


class UnknownElement(AdsorbKitError, KeyError):
    """Element symbol missing from the radii table or the model's element list."""

    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"unknown element '{symbol}'")

    def __str__(self) -> str:
        return f"unknown element '{self.symbol}'"


class ParseError(AdsorbKitError, ValueError):
    """Malformed input text; line_number is 1-based when known."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class NonPositiveCell(AdsorbKitError, ValueError):
    """Cell lengths, angles or lattice determinant out of range."""


class CellTooSmall(AdsorbKitError, ValueError):
    """Cell too narrow for the minimum-image convention at the requested cutoff."""


class IndexOutOfRange(AdsorbKitError, IndexError):
    """Site or label index outside the valid range."""


class NoAdsorbate(AdsorbKitError, ValueError):
    """No adsorbate site could be identified."""


class AmbiguousAdsorbate(NoAdsorbate):
    """Tag-free matching found only part of the declared adsorbate."""


class LengthMismatch(AdsorbKitError, ValueError):
    """Paired sequences differ in length."""


class EmptyInput(AdsorbKitError, ValueError):
    """An operation received an empty sequence."""


class ShapeMismatch(AdsorbKitError, ValueError):
    """Paired matrices differ in shape."""


class ZeroNormRow(AdsorbKitError, ValueError):
    """A row with zero norm cannot be cosine-normalized."""


class ConstantTargets(AdsorbKitError, ValueError):
    """R^2 is undefined for constant targets."""


class TooSmall(AdsorbKitError, ValueError):
    """Matrix too small for the requested statistic."""


class EmptyDataset(AdsorbKitError, ValueError):
    """Training was requested on an empty dataset."""


class NonFiniteLoss(AdsorbKitError, RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, stage: int, epoch: int, step: int, details: str):
        self.stage = stage
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss at stage {stage}, epoch {epoch}, step {step}: {details}")


class UnrealizableMeta(AdsorbKitError, ValueError):
    """The synthetic generator cannot build a system matching the metadata."""


class CheckpointMismatch(AdsorbKitError, ValueError):
    """Checkpoint contents disagree with the expected configuration."""


class ConfigError(AdsorbKitError, ValueError):
    """Invalid run configuration."""
