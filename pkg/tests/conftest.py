import numpy as np
import pytest

from bidecode import data as D
from bidecode import model as M
from bidecode.model import ModelDims


TOY_DIMS = ModelDims(
    vocab_size=4,
    feature_dim=4,
    embed_dim=4,
    hidden_dim=8,
    state_dim=8,
    attn_dim=6,
    conv_filters=4,
    conv_width=5,
)


@pytest.fixture(scope="session")
def toy_dims():
    return TOY_DIMS


@pytest.fixture(scope="session")
def toy_task():
    return D.build_task(vocab_size=4, feature_dim=4, noise_std=0.01, seed=3)


@pytest.fixture(scope="session")
def toy_pair(toy_task):
    """One utterance with T'<=6 for fast gradient checks."""
    x = M.SymbolSequence([0, 2, 1])
    y = D.oracle_render(toy_task, x)
    return x, M.FeatureSequence(y.frames[:6])


@pytest.fixture(scope="session")
def toy_split(toy_task):
    return D.gen_split(toy_task, "train", 16, (2, 4), 7)


def pytest_terminal_summary(terminalreporter):
    """Echo the one-line acceptance verdicts after capture is released."""
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "REPORT_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
