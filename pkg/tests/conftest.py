import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from blendiff.data import OracleSpec, oracle_clips
from blendiff.diffusion import build_schedule
from blendiff.layout import default_layout

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def small_schedule():
    return build_schedule(10, 1e-3, 0.3)


@pytest.fixture(scope="session")
def oracle():
    return oracle_clips(OracleSpec(seed=3, n_clips=4, frames_per_clip=48))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b, floor=1e-6):
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(loss, vector, idx, h=1e-5):
    """Central differences of scalar ``loss()`` w.r.t. ``vector[idx]`` (perturbed in place)."""
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        old = vector[i]
        vector[i] = old + h
        up = loss()
        vector[i] = old - h
        down = loss()
        vector[i] = old
        out[k] = (up - down) / (2 * h)
    return out
