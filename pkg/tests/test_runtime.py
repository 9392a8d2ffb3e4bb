"""Tests for runtime detection."""
import torch

from src.utils.runtime import RuntimeDetector, configure_deterministic


class TestRuntimeDetector:
    def test_detect(self):
        info = RuntimeDetector().detect()
        assert info.torch_version == torch.__version__
        assert info.numpy_version is not None
        assert info.cpu_count >= 1

    def test_summary_lists_stack(self):
        detector = RuntimeDetector()
        summary = detector.get_summary(detector.detect())
        assert "torch: " in summary and "numpy: " in summary


def test_configure_deterministic():
    info = configure_deterministic()
    assert info.torch_threads == 1
    assert info.deterministic
    assert torch.are_deterministic_algorithms_enabled()
