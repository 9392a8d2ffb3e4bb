"""
Runtime detection and deterministic numeric setup.
"""
import os
import platform
from dataclasses import dataclass
from typing import Optional

from src.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass
class RuntimeInfo:
    """Numeric runtime information."""
    os_name: str
    python_version: str
    cpu_name: str
    cpu_count: int
    numpy_version: Optional[str]
    torch_version: Optional[str]
    torch_threads: Optional[int]
    deterministic: bool


class RuntimeDetector:
    """Detects the numeric stack and pins it to a reproducible configuration."""

    def __init__(self):
        self.logger = logger

    def detect(self) -> RuntimeInfo:
        """
        Detect the runtime.

        Returns:
            RuntimeInfo describing the interpreter, numpy and torch
        """
        numpy_version = self._check_numpy()
        torch_version, threads, deterministic = self._check_torch()
        info = RuntimeInfo(
            os_name=platform.system(),
            python_version=platform.python_version(),
            cpu_name=platform.processor() or platform.machine(),
            cpu_count=os.cpu_count() or 1,
            numpy_version=numpy_version,
            torch_version=torch_version,
            torch_threads=threads,
            deterministic=deterministic,
        )
        self.logger.debug(f"Runtime detection complete: numpy={numpy_version}, torch={torch_version}")
        return info

    def _check_numpy(self) -> Optional[str]:
        try:
            import numpy
            return numpy.__version__
        except ImportError as e:
            self.logger.error(f"numpy is not available: {e}")
            return None

    def _check_torch(self):
        try:
            import torch
            return torch.__version__, torch.get_num_threads(), torch.are_deterministic_algorithms_enabled()
        except ImportError as e:
            self.logger.error(f"torch is not available: {e}")
            return None, None, False

    def configure_deterministic(self) -> RuntimeInfo:
        """
        Pin torch to one CPU thread with deterministic algorithms.

        Training is single-threaded so that a fixed seed reproduces parameters
        bit for bit.
        """
        import torch

        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
        return self.detect()

    def get_summary(self, info: RuntimeInfo) -> str:
        """
        Get a human-readable summary of the runtime.

        Args:
            info: RuntimeInfo object

        Returns:
            Formatted string summary
        """
        lines = [
            f"Operating System: {info.os_name}",
            f"Python: {info.python_version}",
            f"CPU: {info.cpu_name} ({info.cpu_count} cores)",
            f"numpy: {info.numpy_version or 'missing'}",
            f"torch: {info.torch_version or 'missing'}",
        ]
        if info.torch_threads is not None:
            lines.append(f"Torch threads: {info.torch_threads}")
        lines.append(f"Deterministic algorithms: {'Yes' if info.deterministic else 'No'}")
        return "\n".join(lines)


def configure_deterministic() -> RuntimeInfo:
    """Apply the deterministic setup and log the runtime summary at DEBUG."""
    detector = RuntimeDetector()
    info = detector.configure_deterministic()
    logger.debug(detector.get_summary(info))
    return info
