import numpy as np
import pytest

from gaussbev import quaternion as quat
from gaussbev.camera_geometry import CameraCalib
from gaussbev.gaussian_scene import GaussianScene


def rot_z(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])


def make_calib(fx=100.0, fy=100.0, cx=50.0, cy=50.0, R=None, t=(0.0, 0.0, 0.0), width=100,
               height=100, f_ref=100.0):
    return CameraCalib(fx, fy, cx, cy, np.eye(3) if R is None else R, t, width, height, f_ref)


def single(center=(0.0, 0.0, 0.0), scale=(1.0, 1.0, 1.0), q=(1.0, 0.0, 0.0, 0.0), opacity=0.8,
           embedding=(1.0,)):
    return GaussianScene([center], [scale], [q], [opacity], [embedding])


def random_scene(rng, n, C, extent=5.0, scale=(0.4, 2.0)):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    centers = np.c_[rng.uniform(-extent, extent, (n, 2)), rng.uniform(-2.0, 2.0, n)]
    return GaussianScene(centers, rng.uniform(*scale, (n, 3)), q, rng.uniform(0.05, 0.95, n),
                         rng.normal(size=(n, C)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


__all__ = ["rot_z", "make_calib", "single", "random_scene", "quat", "record"]


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def record(number, title, ok, detail):
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}\tcriterion {number}\t{title}\t{detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
