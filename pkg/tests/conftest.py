import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hdrwm.corpus import logo_watermark, make_corpus, scene_names
from hdrwm.keys import SecretKey

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def key():
    return SecretKey.from_int(1)


@pytest.fixture(scope="session")
def logo():
    return logo_watermark(256, 256)


@pytest.fixture(scope="session")
def corpus():
    return list(zip(scene_names(5), make_corpus(5)))


@pytest.fixture(scope="session")
def scene(corpus):
    return corpus[0][1]


@pytest.fixture(scope="session")
def embedded(scene, logo, key):
    from hdrwm.watermark import embed_watermark
    return embed_watermark(scene, logo, key)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
