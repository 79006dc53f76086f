import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from posehyp import skeleton as sk
from posehyp.metrics import (
    PCK_THRESHOLDS,
    best_of_k,
    evaluate_pose,
    joint_errors,
    mpjpe,
    pck_curve,
    procrustes_align,
    rescale_limbs,
)
from posehyp.prior import sample_pose, stream

seeds = st.integers(0, 2**31 - 1)


def random_similarity(rng):
    R = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
    return rng.uniform(0.2, 5.0), R, rng.normal(0, 500, 3)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_procrustes_recovers_similarity(model, seed):
    rng = np.random.default_rng(seed)
    X = sample_pose(model, stream(seed))
    s, R, t = random_similarity(rng)
    Y = s * X @ R.T + t
    tf, Z = procrustes_align(Y, X)
    assert mpjpe(Y, X) < 1e-9
    assert np.allclose(Z, X, atol=1e-9)
    assert np.isclose(tf.scale, 1 / s)
    assert np.isclose(np.linalg.det(tf.rotation), 1.0)


def test_procrustes_no_reflection(model):
    X = sample_pose(model, stream(3))
    mirrored = X * np.array([-1.0, 1.0, 1.0])
    tf, _ = procrustes_align(mirrored, X)
    assert np.isclose(np.linalg.det(tf.rotation), 1.0)
    assert mpjpe(mirrored, X) > 1.0


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_procrustes_beats_random_transforms(model, seed):
    rng = np.random.default_rng(seed)
    A = sample_pose(model, stream(seed, 0))
    B = sample_pose(model, stream(seed, 1))
    best = np.sum((procrustes_align(A, B)[1] - B) ** 2)
    tf, _ = procrustes_align(A, B)
    for _ in range(50):
        dR = Rotation.from_rotvec(rng.normal(0, 0.05, 3)).as_matrix()
        c = tf.scale * rng.uniform(0.95, 1.05)
        t = tf.translation + rng.normal(0, 5, 3)
        assert np.sum((c * A @ (dR @ tf.rotation).T + t - B) ** 2) >= best - 1e-6


def test_procrustes_errors():
    with pytest.raises(ValueError):
        procrustes_align(np.zeros((15, 3)), np.zeros((14, 3)))
    with pytest.raises(ValueError):
        procrustes_align(np.ones((15, 3)), np.zeros((15, 3)))


def test_rescale_limbs_matches_reference_lengths(model):
    A = sample_pose(model, stream(4, 0))
    B = sample_pose(model, stream(4, 1))
    C = rescale_limbs(A, B)
    assert np.allclose(sk.bone_lengths(C), sk.bone_lengths(B))
    for p, c in sk.BONES:
        u, v = A[c] - A[p], C[c] - C[p]
        assert np.isclose(u @ v, np.linalg.norm(u) * np.linalg.norm(v))
    assert evaluate_pose(A * 1.3, A).max() < 1e-9


def test_unaligned_errors(model):
    X = sample_pose(model, stream(5))
    e = joint_errors(X + [10.0, 0.0, 0.0], X, align=False)
    assert np.allclose(e, 10.0)


def test_pck_thresholds():
    assert PCK_THRESHOLDS[0] == 0 and PCK_THRESHOLDS[-1] == 200 and len(PCK_THRESHOLDS) == 41


@given(st.lists(st.floats(0, 400, allow_nan=False), min_size=1, max_size=200))
def test_pck_monotone_and_counts(errs):
    c = pck_curve(errs)
    assert np.all(np.diff(c) >= 0)
    assert np.all((0 <= c) & (c <= 1))
    e = np.array(errs)
    assert np.allclose(c, [(e <= t).mean() for t in PCK_THRESHOLDS])
    assert pck_curve(errs, [np.inf])[0] == 1.0


def test_pck_empty():
    with pytest.raises(ValueError):
        pck_curve([])


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 4))
def test_best_of_k_superset_never_worse(model, seed, k, extra):
    ref = sample_pose(model, stream(seed, 99))
    H = np.array([sample_pose(model, stream(seed, i)) for i in range(k + extra)])
    _, e_small = best_of_k(H[:k], ref)
    _, e_big = best_of_k(H, ref)
    assert e_big <= e_small
    i, e = best_of_k(H, ref)
    assert np.isclose(e, evaluate_pose(H[i], ref).mean())


def test_best_of_k_ties_and_exact_member(model):
    ref = sample_pose(model, stream(6))
    other = sample_pose(model, stream(7))
    i, e = best_of_k([other, ref, ref], ref)
    assert i == 1 and e < 1e-9
    with pytest.raises(ValueError):
        best_of_k(np.zeros((0, 15, 3)), ref)
