import sys

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from smd import body, spectral

settings.register_profile("smd", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("smd")


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    mp.setenv("SMD_CACHE_DIR", str(tmp_path_factory.mktemp("basis-cache")))
    yield
    mp.undo()


@pytest.fixture(scope="session")
def body_model():
    return body.make_body_model(0)


@pytest.fixture(scope="session")
def full_basis(body_model):
    return spectral.cached_basis(body_model.topology, body_model.n_vertices)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
