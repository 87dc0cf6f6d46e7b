from __future__ import annotations

import functools

import numpy as np
import pytest

from mirnet import datagen as dg
from mirnet import estimator as est

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def preset_run(name: str, seed: int, reference: str = "none"):
    """Generate a preset, optionally attach a reference pair, estimate MIR-bar.

    Cached so the slow 100k-sample runs are shared between test modules.
    """
    data = dg.generate_preset(name, seed)
    if reference == "uniform":
        data = dg.attach_reference_pair(data, dg.gen_uniform_pair(data.n_samples, seed + 500))
    elif reference == "directed":
        data = dg.attach_reference_pair(
            data, dg.gen_directed_logistic_pair(length=data.n_samples, seed=seed + 500)
        )
    mir, table = est.estimate_mir(data)
    return data, mir, table


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
