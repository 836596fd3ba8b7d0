import numpy as np
import pytest

from tsmix.data import synth_generate
from tsmix.model import ModelConfig, TransformerClassifier


def rel_err(a, b, floor: float = 1e-12) -> float:
    """Max abs difference over the larger magnitude; ``floor`` bounds the denominator
    for gradients that are exactly zero (finite differences only see roundoff there)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(n_classes=3, n_channels=2, seq_len=8, n_layers=1, n_heads=2, d_model=10, dropout_p=0.0)


@pytest.fixture
def tiny_model(tiny_config):
    return TransformerClassifier(tiny_config, seed=0)


@pytest.fixture
def small_synth():
    return synth_generate(3, 20, 8, 2, 0.3, seed=0)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
