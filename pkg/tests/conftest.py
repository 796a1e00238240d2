import math

import numpy as np
import pytest

from polarbev.camera import CameraModel, look_extrinsics
from polarbev.harness.scene import RigConfig, make_rig

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and rep.when == "call":
        detail = dict(item.user_properties).get("detail", "")
        _criteria.append((mark.args[0], mark.args[1], rep.outcome, rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num, text, outcome, dur, detail in sorted(_criteria):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{status}] criterion {num}: {text} ({dur:.1f}s)"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)


def simple_camera(f=100.0, c=(0.0, 0.0), T=None, size=(200, 200)):
    return CameraModel.from_pinhole(f, f, c[0], c[1], T, size)


def random_camera(rng) -> CameraModel:
    pos = rng.uniform(-3, 3, 3)
    T = look_extrinsics(pos, rng.uniform(-math.pi, math.pi), rng.uniform(-0.4, 0.4))
    f = rng.uniform(50, 800)
    h, w = rng.integers(32, 1000, 2)
    return CameraModel.from_pinhole(f, f * rng.uniform(0.8, 1.2), rng.uniform(0, w),
                                    rng.uniform(0, h), T, (h, w))


def random_rig(rng, n_cameras, feature_size, stride):
    h_f, w_f = feature_size
    cfg = RigConfig(
        n_cameras=n_cameras,
        focal=float(rng.uniform(0.4, 1.5) * w_f * stride),
        image_size=(h_f * stride, w_f * stride),
        mount_radius=float(rng.uniform(0.0, 2.0)),
        mount_height=float(rng.uniform(0.5, 2.0)),
        yaw_offset=float(rng.uniform(-math.pi, math.pi)),
    )
    return make_rig(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
