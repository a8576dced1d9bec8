import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blob_image(cx, cy, sigma, size=(96, 96), dark=True):
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    g = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    return 0.8 - 0.6 * g if dark else 0.2 + 0.6 * g


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six training and two test synthetic scenes at quarter size."""
    from terrainseg import synth

    out = tmp_path_factory.mktemp("corpus")
    tr, te = synth.generate_corpus(str(out), 6, 2, seed=3, width=320, height=240)
    return out, tr, te


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
