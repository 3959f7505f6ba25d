import numpy as np
import pytest

from fwl.numerics import Rng


@pytest.fixture
def rng():
    return Rng(1234)


def random_spd(gen: np.random.Generator, n: int, eps: float = 1e-3) -> np.ndarray:
    b = gen.standard_normal((n, n))
    return b @ b.T + eps * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
