import numpy as np
import pytest

from vehfit.assets import default_model
from vehfit.observer import cached_lut
from vehfit.scene import GroundPlane, StereoRig


@pytest.fixture(scope="session")
def model():
    return default_model(3)


@pytest.fixture(scope="session")
def rig():
    return StereoRig()


@pytest.fixture(scope="session")
def plane():
    return GroundPlane.canonical()


@pytest.fixture(scope="session")
def lut(model):
    return cached_lut(model, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def zero_frame(model, rig):
    """A noise-free synthetic vehicle with its scene."""
    from vehfit.observer import NoiseSpec, sample_frame
    from vehfit.scene import StereoScene
    frame = sample_frame(model, rig, NoiseSpec.zero(), np.random.default_rng(2024))
    return frame, StereoScene.from_points(rig, frame.points, frame.flags)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Records one verdict line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(number, ok, detail):
        lines[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
