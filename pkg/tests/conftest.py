import numpy as np
import pytest
from hypothesis import settings

from artpose.assets import load_clamp
from artpose.observation import default_camera
from artpose.se3 import Pose, TriangleMesh

# first calls pay for JIT compilation
settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def clamp():
    return load_clamp()


@pytest.fixture(scope="session")
def camera():
    return default_camera()


def square_mesh(side=1.0, z=0.0):
    """Two triangles spanning a side x side square in the z plane, centered on the axis."""
    h = side / 2
    v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def random_pose(rng, scale=1.0):
    q = rng.normal(size=4)
    return Pose(rng.normal(scale=scale, size=3), q)


# acceptance verdicts, echoed once at the end of the run
VERDICTS = []


@pytest.fixture
def verdict():
    def record(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
