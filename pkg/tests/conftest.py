import numpy as np
import pytest

from swin_tuna.backbone import toy_config
from swin_tuna.head import HeadConfig
from swin_tuna.model import build_model
from swin_tuna.tuna import TunaConfig

_CRITERIA: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_tuna_cfg():
    return TunaConfig(bottleneck_dims=[16, 16, 24, 48])


@pytest.fixture
def toy_model(toy_tuna_cfg):
    return build_model(toy_config(), HeadConfig(32, 3), toy_tuna_cfg, "tuna", seed=0)


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, title, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
