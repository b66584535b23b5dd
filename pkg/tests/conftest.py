import sys

import numpy as np
import pytest

from onlinehuber.simgen import SimSpec, gen_stream


@pytest.fixture
def case1_batches():
    return list(gen_stream(SimSpec(n_t=100, b=12, seed=123)))


def random_batches(seed, b, n=30, p=3):
    rng = np.random.default_rng(seed)
    from onlinehuber.streaming import BatchData

    theta = rng.standard_normal(p)
    out = []
    for t in range(1, b + 1):
        X = rng.standard_normal((n, p))
        out.append(BatchData(X, X @ theta + rng.standard_t(3, n), t))
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[n])
