import numpy as np
import pytest
from hypothesis import settings

from gcdance.motion import load_skeleton

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def skel52():
    return load_skeleton("smpl52")


@pytest.fixture(scope="session")
def skel24():
    return load_skeleton("smpl24")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_frames(skel, k, rng, scale=1.0, contacts=None):
    """Frames from random rotations (valid 6D) with random translation."""
    from scipy.spatial.transform import Rotation

    R = Rotation.random(k * skel.n_joints, random_state=int(rng.integers(1 << 30))).as_matrix()
    R = R.reshape(k, skel.n_joints, 3, 3)
    rot6 = np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1).reshape(k, -1)
    trans = rng.standard_normal((k, 3)) * scale
    c = rng.integers(0, 2, (k, 4)).astype(float) if contacts is None else np.full((k, 4), float(contacts))
    return np.concatenate([rot6, trans, c], axis=1)


# acceptance summary -------------------------------------------------------

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
