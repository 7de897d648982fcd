import sys

import numpy as np
import pytest

from ppfmatch.config import PipelineConfig
from ppfmatch.geom import PointCloudTriplet
from ppfmatch.synthetic import SyntheticPairSpec, generate_pair
from ppfmatch.weights import init_random_weights


def unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_cloud(rng, n, width=None):
    pts = rng.standard_normal((n, 3))
    nrm = unit_rows(rng.standard_normal((n, 3)))
    feats = np.ones((n, 1)) if width is None else rng.standard_normal((n, width))
    return PointCloudTriplet(pts, nrm, feats)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@pytest.fixture(scope="session")
def cfg():
    return PipelineConfig()


@pytest.fixture(scope="session")
def loose_cfg():
    """Default config without the confidence floor, so random weights still yield pairs."""
    return PipelineConfig().with_updates(match={"min_confidence": 0.0})


@pytest.fixture(scope="session")
def weights(cfg):
    return init_random_weights(cfg, seed=0)


@pytest.fixture(scope="session")
def pair():
    return generate_pair(SyntheticPairSpec(n=1024, overlap=0.7), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
