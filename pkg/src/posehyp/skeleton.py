"""Skeleton definition, pose containers, weak-perspective projection and
torso-anchored spherical coordinates.

Poses are plain ``(15, 3)`` float arrays in millimetres, pelvis first. Most
functions also accept a leading batch axis, ``(N, 15, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

JOINTS = (
    "pelvis",
    "thorax",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
)
NUM_JOINTS = len(JOINTS)
J = {name: i for i, name in enumerate(JOINTS)}

PARENT = {
    "thorax": "pelvis",
    "head": "thorax",
    "l_shoulder": "thorax",
    "l_elbow": "l_shoulder",
    "l_wrist": "l_elbow",
    "r_shoulder": "thorax",
    "r_elbow": "r_shoulder",
    "r_wrist": "r_elbow",
    "l_hip": "pelvis",
    "l_knee": "l_hip",
    "l_ankle": "l_knee",
    "r_hip": "pelvis",
    "r_knee": "r_hip",
    "r_ankle": "r_knee",
}
# parent index per joint, -1 for the root
PARENTS = np.array([-1] + [J[PARENT[j]] for j in JOINTS[1:]], dtype=int)

# bones are identified by their child joint; mirrored bones share a class
BONE_CLASS = {
    "thorax": "spine",
    "head": "head",
    "l_shoulder": "shoulder",
    "r_shoulder": "shoulder",
    "l_elbow": "upper_arm",
    "r_elbow": "upper_arm",
    "l_wrist": "forearm",
    "r_wrist": "forearm",
    "l_hip": "hip",
    "r_hip": "hip",
    "l_knee": "upper_leg",
    "r_knee": "upper_leg",
    "l_ankle": "lower_leg",
    "r_ankle": "lower_leg",
}
BONES = tuple((J[PARENT[c]], J[c]) for c in JOINTS[1:])
# classes whose lengths are sampled by the prior; torso bones come from the dictionary
LIMB_CLASSES = ("head", "upper_arm", "forearm", "upper_leg", "lower_leg")

LIMB_JOINTS = ("l_elbow", "l_wrist", "r_elbow", "r_wrist", "l_knee", "l_ankle", "r_knee", "r_ankle")
TORSO_JOINTS = ("pelvis", "thorax", "l_shoulder", "r_shoulder", "l_hip", "r_hip")
TORSO_IDX = np.array([J[j] for j in TORSO_JOINTS])

REGIONS = ("arms", "legs")


@dataclass(frozen=True)
class UpperFamily:
    name: str
    parent: str
    child: str
    region: str
    bone_class: str


@dataclass(frozen=True)
class LowerFamily:
    name: str
    parent: str
    child: str
    upper: str
    region: str
    bone_class: str


UPPER_FAMILIES = {
    f.name: f
    for f in (
        UpperFamily("head", "thorax", "head", "arms", "head"),
        UpperFamily("l_upper_arm", "l_shoulder", "l_elbow", "arms", "upper_arm"),
        UpperFamily("r_upper_arm", "r_shoulder", "r_elbow", "arms", "upper_arm"),
        UpperFamily("l_upper_leg", "l_hip", "l_knee", "legs", "upper_leg"),
        UpperFamily("r_upper_leg", "r_hip", "r_knee", "legs", "upper_leg"),
    )
}
LOWER_FAMILIES = {
    f.name: f
    for f in (
        LowerFamily("l_forearm", "l_elbow", "l_wrist", "l_upper_arm", "arms", "forearm"),
        LowerFamily("r_forearm", "r_elbow", "r_wrist", "r_upper_arm", "arms", "forearm"),
        LowerFamily("l_lower_leg", "l_knee", "l_ankle", "l_upper_leg", "legs", "lower_leg"),
        LowerFamily("r_lower_leg", "r_knee", "r_ankle", "r_upper_leg", "legs", "lower_leg"),
    )
}

# independent kinematic chains hanging off the torso
CHAINS = {
    "head": ("head", None),
    "l_arm": ("l_upper_arm", "l_forearm"),
    "r_arm": ("r_upper_arm", "r_forearm"),
    "l_leg": ("l_upper_leg", "l_lower_leg"),
    "r_leg": ("r_upper_leg", "r_lower_leg"),
}


class DegenerateTorsoError(ValueError):
    """Backbone and lateral torso vectors are zero-length or parallel."""


def bone_lengths(poses: np.ndarray) -> np.ndarray:
    """Lengths of the 14 bones, ordered like :data:`BONES`."""
    poses = np.asarray(poses, dtype=float)
    child = poses[..., 1:, :]
    parent = poses[..., PARENTS[1:], :]
    return np.linalg.norm(child - parent, axis=-1)


def class_lengths(poses: np.ndarray) -> dict[str, np.ndarray]:
    """Bone lengths grouped by symmetry class, shape ``(..., n_bones_in_class)``."""
    lengths = bone_lengths(poses)
    out: dict[str, list[int]] = {}
    for k, child in enumerate(JOINTS[1:]):
        out.setdefault(BONE_CLASS[child], []).append(k)
    return {c: lengths[..., idx] for c, idx in out.items()}


@dataclass(frozen=True)
class CameraWP:
    """Weak-perspective camera; image point = ``s * R[:2] @ X + t``."""

    s: float
    R: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(2)
        if not (np.isfinite(self.s) and self.s > 0):
            raise ValueError(f"camera scale must be positive, got {self.s}")
        if np.linalg.norm(R.T @ R - np.eye(3)) >= 1e-9 or np.linalg.det(R) <= 0:
            raise ValueError("camera rotation must be orthonormal with det +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("camera translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def M(self) -> np.ndarray:
        """The 2x3 scaled projection ``s * R[:2]``."""
        return self.s * self.R[:2]

    def __eq__(self, other):
        if not isinstance(other, CameraWP):
            return NotImplemented
        return (
            self.s == other.s
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.t, other.t)
        )

    def __hash__(self):
        return hash((self.s, self.R.tobytes(), self.t.tobytes()))


def project_weak_perspective(pose: np.ndarray, cam: CameraWP) -> np.ndarray:
    """Project ``(..., P, 3)`` points to ``(..., P, 2)`` pixels."""
    pose = np.asarray(pose, dtype=float)
    return cam.s * (pose @ cam.R[:2].T) + cam.t


def center_pose(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=float)
    return pose - pose.mean(axis=-2, keepdims=True)


center_points = center_pose


def root_relative(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=float)
    return pose - pose[..., :1, :]


@dataclass(frozen=True)
class Detections2D:
    """Per-joint 2D detections in pixels; absent joints carry NaN coordinates."""

    points: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(NUM_JOINTS, 2)
        sc = np.array(self.scores, dtype=float).reshape(NUM_JOINTS)
        present = ~np.isnan(pts).any(axis=1)
        if not np.all(np.isfinite(pts[present])):
            raise ValueError("present detection points must be finite")
        if np.any(~np.isfinite(sc)) or np.any(sc < 0):
            raise ValueError("detection scores must be finite and non-negative")
        pts[~present] = np.nan
        pts.setflags(write=False)
        sc.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "scores", sc)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.points).any(axis=1)

    @classmethod
    def from_points(cls, points, scores=None, missing=()):
        pts = np.array(points, dtype=float).copy()
        sc = np.ones(NUM_JOINTS) if scores is None else np.asarray(scores, dtype=float)
        for j in missing:
            pts[J[j] if isinstance(j, str) else j] = np.nan
        return cls(pts, sc)

    def __eq__(self, other):
        if not isinstance(other, Detections2D):
            return NotImplemented
        return np.array_equal(self.points, other.points, equal_nan=True) and np.array_equal(
            self.scores, other.scores
        )


@dataclass(frozen=True)
class LocalFrame:
    """Orthonormal basis (columns are the axes) anchored at ``origin``."""

    basis: np.ndarray
    origin: np.ndarray


_LATERAL = {"arms": ("r_shoulder", "l_shoulder", "thorax"), "legs": ("r_hip", "l_hip", "pelvis")}


def frame_bases(poses: np.ndarray, region: str) -> np.ndarray:
    """Vectorised local-frame bases ``(..., 3, 3)`` for ``region``.

    Axis 1 is the pelvis->thorax backbone, axis 2 the right->left shoulder
    (``arms``) or hip (``legs``) vector after one Gram-Schmidt step, axis 3
    their cross product.
    """
    if region not in _LATERAL:
        raise ValueError(f"unknown region {region!r}")
    poses = np.asarray(poses, dtype=float)
    right, left, _ = _LATERAL[region]
    back = poses[..., J["thorax"], :] - poses[..., J["pelvis"], :]
    lat = poses[..., J[left], :] - poses[..., J[right], :]
    nb = np.linalg.norm(back, axis=-1, keepdims=True)
    nl = np.linalg.norm(lat, axis=-1, keepdims=True)
    if np.any(nb < 1e-6) or np.any(nl < 1e-6):
        raise DegenerateTorsoError("zero-length backbone or lateral vector")
    a1 = back / nb
    lat_u = lat / nl
    if np.any(np.linalg.norm(np.cross(a1, lat_u), axis=-1) < 1e-6):
        raise DegenerateTorsoError("backbone parallel to lateral vector")
    a2 = lat_u - np.sum(lat_u * a1, axis=-1, keepdims=True) * a1
    a2 /= np.linalg.norm(a2, axis=-1, keepdims=True)
    a3 = np.cross(a1, a2)
    return np.stack([a1, a2, a3], axis=-1)


def build_local_frame(pose: np.ndarray, region: str) -> LocalFrame:
    pose = np.asarray(pose, dtype=float)
    origin = pose[J[_LATERAL[region][2]]].copy()
    return LocalFrame(frame_bases(pose, region), origin)


def wrap_angle(theta):
    """Map angles into ``[-pi, pi)``."""
    out = (np.asarray(theta, dtype=float) + np.pi) % (2 * np.pi) - np.pi
    return np.where(out >= np.pi, out - 2 * np.pi, out)


def spherical_to_local(theta, phi, length=1.0) -> np.ndarray:
    """Local-frame coordinates; polar axis is frame axis 3, azimuth 0 is axis 1."""
    theta, phi, length = np.broadcast_arrays(
        np.asarray(theta, float), np.asarray(phi, float), np.asarray(length, float)
    )
    sp = np.sin(phi)
    return np.stack(
        [length * sp * np.cos(theta), length * sp * np.sin(theta), length * np.cos(phi)], axis=-1
    )


def local_to_spherical(v):
    """Return ``(theta, phi, length)`` of local-frame vectors.

    At the poles the azimuth is undefined and reported as 0.
    """
    v = np.asarray(v, dtype=float)
    length = np.linalg.norm(v, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cphi = np.clip(v[..., 2] / length, -1.0, 1.0)
    phi = np.arccos(cphi)
    rho = np.hypot(v[..., 0], v[..., 1])
    theta = np.where(rho > 0, wrap_angle(np.arctan2(v[..., 1], v[..., 0])), 0.0)
    phi = np.where(length > 0, phi, 0.0)
    return theta, phi, length


def spherical_to_cart(theta, phi, length, frame) -> np.ndarray:
    """World-frame vector from spherical coordinates in ``frame``.

    ``frame`` is a :class:`LocalFrame` or a ``(..., 3, 3)`` basis array.
    """
    basis = frame.basis if isinstance(frame, LocalFrame) else np.asarray(frame)
    loc = spherical_to_local(theta, phi, length)
    return np.einsum("...ij,...j->...i", basis, loc)


def cart_to_spherical(v, frame):
    basis = frame.basis if isinstance(frame, LocalFrame) else np.asarray(frame)
    loc = np.einsum("...ji,...j->...i", basis, np.asarray(v, dtype=float))
    return local_to_spherical(loc)


def rotation_from_euler(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Rotation ``Rz(roll) @ Rx(pitch) @ Ry(yaw)``; yaw turns about the vertical y axis."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    R = Rz @ Rx @ Ry
    # re-orthonormalise so CameraWP's 1e-9 gate never trips on round-off
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    u, _, vt = np.linalg.svd(R)
    return u @ vt
