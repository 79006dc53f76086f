import sys

import numpy as np
import pytest

from posehyp import skeleton as sk
from posehyp.baseline import TorsoSeed
from posehyp.experiments import CameraDistribution
from posehyp.prior import sample_pose, stream
from posehyp.synthetic import default_dictionary, default_model


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def dictionary():
    return default_dictionary()


def true_seed(pose, cam):
    """Torso seed built from the ground-truth pose and camera."""
    t = cam.t + cam.s * cam.R[:2] @ pose[0]
    return TorsoSeed(pose[sk.TORSO_IDX] - pose[0], sk.CameraWP(cam.s, cam.R, t))


def synthetic_view(model, seed, *index):
    rng = stream(seed, *index)
    X = sample_pose(model, rng)
    cam = CameraDistribution().sample(rng)
    return X, cam, sk.project_weak_perspective(X, cam)


@pytest.fixture(scope="session")
def small_corpus():
    from posehyp.synthetic import synthetic_corpus

    return synthetic_corpus(500, np.random.default_rng(123))


@pytest.fixture(scope="session")
def learned(small_corpus):
    from posehyp.anatomy import learn_anatomy

    return learn_anatomy(small_corpus, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("."))):
        terminalreporter.write_line(line)
