import numpy as np
import pytest

from posehyp import plots
from posehyp import skeleton as sk
from posehyp.anatomy import is_pose_valid
from posehyp.config import RunConfig
from posehyp.experiments import (
    CameraDistribution,
    drop_limb_joints,
    missing_joint_experiment,
    synth_benchmark,
    synthetic_frames,
)
from posehyp.hypotheses import InfeasibleContextError, accepts
from posehyp.pipeline import hypothesize_frame
from posehyp.prior import stream


@pytest.fixture(scope="module")
def frames(model):
    return synthetic_frames(model, 4, 2)


def test_synthetic_frames_consistent(model, frames):
    for fr in frames:
        assert is_pose_valid(fr.gt3d, model)
        assert np.allclose(fr.detections.points, fr.gt2d)
    assert [f.frame_id for f in frames] == [f.frame_id for f in synthetic_frames(model, 4, 2)]


def test_camera_distribution_bounds():
    cams = CameraDistribution()
    for i in range(50):
        c = cams.sample(stream(1, i))
        assert 0.4 <= c.s <= 0.6 and np.allclose(c.R @ c.R.T, np.eye(3))


def test_drop_limb_joints():
    det = sk.Detections2D(np.zeros((15, 2)), np.ones(15))
    d = drop_limb_joints(det, 3, stream(0))
    gone = [sk.JOINTS[j] for j in np.flatnonzero(~d.present)]
    assert len(gone) == 3 and set(gone) <= set(sk.LIMB_JOINTS)


def test_hypothesize_frame_outputs(model, dictionary, frames):
    cfg = RunConfig(seed=1)
    res = hypothesize_frame(frames[0].detections, model, dictionary, cfg, (0,), ks=[1, 5])
    assert set(res.sets) == {1, 5}
    for hs in res.sets.values():
        assert np.all(is_pose_valid(hs.poses, model))
        assert accepts(hs.poses, res.context).all()
        assert np.array_equal(hs.poses, res.pool[hs.sample_index])
    assert res.stats["torso"] in ("fitted", "flipped")


def test_hypothesize_frame_deterministic(model, dictionary, frames):
    cfg = RunConfig(seed=3)
    a = hypothesize_frame(frames[1].detections, model, dictionary, cfg, (1,))
    b = hypothesize_frame(frames[1].detections, model, dictionary, cfg, (1,))
    assert np.array_equal(a.sets[5].poses, b.sets[5].poses)


def test_no_fallback_raises(model, dictionary, frames):
    pts = frames[2].detections.points.copy()
    pts[sk.J["r_ankle"]] += 1e5
    det = sk.Detections2D(pts, np.ones(15))
    with pytest.raises(InfeasibleContextError):
        hypothesize_frame(det, model, dictionary, RunConfig(fallback=False), (2,))


def test_benchmark_workers_match_serial(model, dictionary):
    a = synth_benchmark(model, dictionary, 2, (1, 2), seed=5)
    b = synth_benchmark(model, dictionary, 2, (1, 2), seed=5, workers=2)
    assert a == b
    assert a["summary"]["k=2"] <= a["summary"]["k=1"]


def test_missing_joint_report_shape(model, dictionary, frames):
    rep = missing_joint_experiment(frames[:2], model, dictionary, (0, 1), k=3, seed=0)
    assert set(rep["summary"]) == {"m=0", "m=1"}
    assert len(rep["frames"]) == 4
    for s in rep["summary"].values():
        assert np.isclose(s["gap"], s["baseline"] - s["k=3"])


def test_plots_stable(model, dictionary, tmp_path):
    rep = synth_benchmark(model, dictionary, 2, (1,), seed=6)
    pose = synthetic_frames(model, 1, 0)[0].gt3d
    assert plots.pck_svg(rep) == plots.pck_svg(rep)
    assert plots.skeleton_svg(pose) == plots.skeleton_svg(pose)
    table = plots.pck_table(rep).splitlines()
    assert table[0] == "threshold_mm,baseline,k=1" and len(table) == 42
    assert "best.1.mpjpe" in plots.frames_table(rep).splitlines()[0]
    paths = plots.emit(rep, tmp_path)
    assert sorted(p.name for p in paths) == ["frames.csv", "pck.csv", "pck.svg"]
