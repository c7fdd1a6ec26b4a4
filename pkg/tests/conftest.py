import os

import numpy as np
import pytest
from hypothesis import settings

from mgnav import simworld as sw
from mgnav.smg import GraphParams, build_graph

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def scene():
    return sw.generate_scene(sw.SceneParams(seed=3))


@pytest.fixture(scope="session")
def tour(scene):
    return sw.generate_tour(scene, 0.95, 0)


@pytest.fixture(scope="session")
def graph(tour):
    return build_graph(tour, GraphParams())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
