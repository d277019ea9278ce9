import numpy as np
import pytest

from lir.model import LIR, ModelConfig
from lir.tensor import Tensor

TINY = ModelConfig(width=8, laa_counts=(1, 1, 1, 1, 1))


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def conditioned(model, seed=1):
    """Move a float64 model to a well-conditioned point for finite differences.

    Random biases, gains and alphas make every parameter matter; the first half
    of each expand bias is lifted by one so SimpleGate behaves almost linearly
    and activations neither vanish nor blow up through the chained gates.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters():
        if name.endswith("gamma"):
            p.data = np.full(1, 0.5)
        elif name.endswith("alpha"):
            p.data = rng.uniform(-0.3, 0.3, p.shape)
            p.data[0] += 1.0
        elif name.endswith("bias"):
            p.data = rng.uniform(-0.2, 0.2, p.shape)
        elif "tail" in name:
            p.data = rng.uniform(-0.3, 0.3, p.shape)
        if name.endswith("expand.bias"):
            p.data[: p.shape[0] // 2] += 1.0
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_model():
    return LIR(TINY, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
