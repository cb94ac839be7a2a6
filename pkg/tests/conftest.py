import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blockapg.problems import build_problem, gen_sparse_ls  # noqa: E402
from blockapg.regularizers import RegularizerSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_instance(seed, m=12, n=8, s=2, reg=None, density=1.0, loss_scale="cols"):
    A, b, _ = gen_sparse_ls(m, n, density, seed, noise=0.1, support=max(1, n // 4))
    return build_problem(A, b, reg or RegularizerSpec.l1(0.05), s, loss_scale)


@pytest.fixture
def lasso_small():
    return small_instance(3)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[num])
