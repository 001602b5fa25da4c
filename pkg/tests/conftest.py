import sys

import numpy as np
import pytest
import torch
from skimage import data as skdata

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def natural_image():
    """A fixed natural photograph, 128x128, float in [0, 1]."""
    img = skdata.astronaut()[::4, ::4].astype(np.float64) / 255.0
    return np.ascontiguousarray(img)


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion that ran."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
