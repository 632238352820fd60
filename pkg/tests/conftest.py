import os

import numpy as np
import pytest

from risorch.scene import Panel, SceneConfig

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DESK_CFG = os.path.join(ROOT, "configs", "desk.cfg")

NO_WALLS = {w: 0.0 for w in ("x0", "xL", "y0", "yL", "z0", "zL")}


def small_scene(**kw) -> SceneConfig:
    """Two 4x4 panels, fast enough for per-test compilation."""
    base = dict(panels=(Panel("x0", 4, 4), Panel("y0", 4, 4)))
    base.update(kw)
    return SceneConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
