"""Pose error metrics: similarity alignment, limb rescaling, MPJPE, PCK, best-of-k."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import skeleton as sk

PCK_THRESHOLDS = np.arange(0.0, 200.0 + 1e-9, 5.0)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, X) -> np.ndarray:
        return self.scale * np.asarray(X, float) @ self.rotation.T + self.translation


def procrustes_align(estimate, reference, scale: bool = True, translate: bool = True):
    """Similarity transform of ``estimate`` minimising squared joint distances to ``reference``.

    Closed form from the SVD of the cross-covariance, with the sign of the
    last singular direction flipped when needed to exclude reflections.
    Returns ``(transform, aligned_estimate)``.
    """
    A = np.asarray(estimate, float)
    B = np.asarray(reference, float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    ma = A.mean(0) if translate else np.zeros(3)
    mb = B.mean(0) if translate else np.zeros(3)
    Ac, Bc = A - ma, B - mb
    if np.sum(Bc * Bc) <= 1e-24:
        raise ValueError("degenerate reference: all joints coincide")
    U, S, Vt = np.linalg.svd(Bc.T @ Ac)
    D = np.ones(3)
    if np.linalg.det(U @ Vt) < 0:
        D[-1] = -1
    R = (U * D) @ Vt
    va = np.sum(Ac * Ac)
    c = float(np.sum(S * D) / va) if scale and va > 0 else 1.0
    t = mb - c * R @ ma
    tf = SimilarityTransform(c, R, t)
    return tf, tf.apply(A)


def rescale_to_lengths(pose, lengths) -> np.ndarray:
    """Re-place joints root-outward so bone ``k`` has length ``lengths[k]``, keeping directions."""
    X = np.asarray(pose, float)
    out = X.copy()
    for k, (p, c) in enumerate(sk.BONES):
        v = X[c] - X[p]
        n = np.linalg.norm(v)
        if n <= 0:
            raise ValueError(f"zero-length bone {sk.JOINTS[p]}->{sk.JOINTS[c]}")
        out[c] = out[p] + v * (lengths[k] / n)
    return out


def rescale_limbs(estimate, reference) -> np.ndarray:
    """Give every bone of ``estimate`` the reference's length; the root is kept."""
    return rescale_to_lengths(estimate, sk.bone_lengths(np.asarray(reference, float)))


def joint_errors(estimate, reference, align: bool = True) -> np.ndarray:
    est = np.asarray(estimate, float)
    if align:
        _, est = procrustes_align(est, reference)
    return np.linalg.norm(est - np.asarray(reference, float), axis=-1)


def mpjpe(estimate, reference, align: bool = True) -> float:
    return float(joint_errors(estimate, reference, align).mean())


def pck_curve(errors, thresholds=PCK_THRESHOLDS) -> np.ndarray:
    """Fraction of joint errors at or below each threshold."""
    e = np.sort(np.ravel(np.asarray(errors, float)))
    if e.size == 0:
        raise ValueError("no joint errors")
    return np.searchsorted(e, np.asarray(thresholds, float), side="right") / e.size


def evaluate_pose(estimate, reference) -> np.ndarray:
    """Per-joint errors after limb rescaling and then similarity alignment."""
    return joint_errors(rescale_limbs(estimate, reference), reference, align=True)


def best_of_k(hypotheses, reference):
    """``(index, mm)`` of the hypothesis with the lowest aligned MPJPE; ties go to the lowest index."""
    poses = getattr(hypotheses, "poses", hypotheses)
    poses = np.asarray(poses, float)
    if len(poses) == 0:
        raise ValueError("need at least one hypothesis")
    errs = np.array([evaluate_pose(p, reference).mean() for p in poses])
    i = int(np.argmin(errs))
    return i, float(errs[i])
