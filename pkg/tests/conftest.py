import math

import numpy as np
import pytest

from edgeobb.edges import adaptive_canny
from edgeobb.geometry import OrientedBox
from edgeobb.scenes import SceneObject, SceneSpec, render_scene

_CRITERIA: list[tuple[int, bool, str]] = []


class CriterionLog:
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def record(self, number: int, passed: bool, detail: str) -> bool:
        _CRITERIA.append((number, bool(passed), detail))
        return bool(passed)


@pytest.fixture
def criterion():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_CRITERIA):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        terminalreporter.write_line(line)


def rect_scene(box: OrientedBox, canvas=(128, 128), fg=200.0, bg=50.0, **kw):
    spec = SceneSpec(canvas, (SceneObject("rectangle", box, fg),), background=bg, **kw)
    img, _ = render_scene(spec)
    return img


@pytest.fixture(scope="session")
def rect30():
    """Clean 60 x 20 rectangle at 30 degrees with its edge field."""
    gt = OrientedBox.from_params(64.0, 64.0, 60.0, 20.0, math.radians(30.0))
    img = rect_scene(gt)
    return gt, img, adaptive_canny(img)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
