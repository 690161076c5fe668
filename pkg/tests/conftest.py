import numpy as np
import pytest

from codeclab.encoder import EncoderConfig, init_weights
from codeclab.tasks import gen_synth_corpus


@pytest.fixture(scope="session")
def corpus():
    return gen_synth_corpus(1, 256)


@pytest.fixture(scope="session")
def std_corpus():
    # the standard 1024-image corpus
    return gen_synth_corpus(1, 1024)


@pytest.fixture(scope="session")
def toy64():
    return init_weights(EncoderConfig(), 7, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}")
