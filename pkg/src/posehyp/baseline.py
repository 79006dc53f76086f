"""Sparse-coding 2D-to-3D baseline used to seed the torso and camera.

The pose is ``mean + sum_i w_i D_i`` over a few atoms picked by orthogonal
matching pursuit; the camera is a weak-perspective fit. The two are
alternated, minimising the weighted reprojection cost plus ``beta`` times
the squared bone-length deviation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from . import skeleton as sk
from .metrics import procrustes_align, rescale_to_lengths

log = logging.getLogger(__name__)


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class PoseDictionary:
    mean: np.ndarray  # (15, 3)
    atoms: np.ndarray  # (K, 15, 3), unit Frobenius norm
    labels: tuple[str, ...]
    bone_lengths: np.ndarray  # (14,) reference lengths for the length penalty
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        mean = np.asarray(self.mean, float).reshape(sk.NUM_JOINTS, 3)
        atoms = np.asarray(self.atoms, float).reshape(-1, sk.NUM_JOINTS, 3)
        if len(self.labels) != len(atoms):
            raise ValueError("one label per atom required")
        if len(atoms) and np.any(np.abs(np.linalg.norm(atoms.reshape(len(atoms), -1), axis=1) - 1) > 1e-9):
            raise ValueError("atoms must have unit Frobenius norm")
        bl = np.asarray(self.bone_lengths, float).reshape(len(sk.BONES))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "bone_lengths", bl)

    def __len__(self):
        return len(self.atoms)

    def reconstruct(self, support, weights) -> np.ndarray:
        X = self.mean.copy()
        for i, w in zip(support, weights):
            X += w * self.atoms[i]
        return X


@dataclass(frozen=True)
class SparseCode:
    support: tuple[int, ...]
    weights: np.ndarray
    pose: np.ndarray


@dataclass
class FitResult:
    pose: np.ndarray
    camera: sk.CameraWP
    trace: list[float]
    code: SparseCode
    valid: bool | None = None
    weights: np.ndarray = field(default=None, repr=False)


def normalize_corpus(poses, model=None, lengths=None):
    """Rescale bones to reference lengths and rotate poses onto a common torso.

    Reference lengths come from ``lengths`` (14 values) or, by default, the
    per-class corpus means. Orientation is normalised by one rotation-only
    Procrustes pass against the mean of torso-canonicalised poses.
    """
    from .anatomy import canonical_rotation

    X = sk.root_relative(np.asarray(poses, float))
    if lengths is None:
        bl = sk.bone_lengths(X).mean(0)
        cls = np.array([sk.BONE_CLASS[c] for c in sk.JOINTS[1:]])
        for c in set(cls):
            bl[cls == c] = bl[cls == c].mean()
        if model is not None:
            for c, m in model.lengths.items():
                bl[cls == c] = m.mean
        lengths = bl
    out = np.empty_like(X)
    for k, p in enumerate(X):
        p = rescale_to_lengths(p, lengths)
        out[k] = p @ canonical_rotation(p).T
    ref = out.mean(0)
    for k, p in enumerate(out):
        _, aligned = procrustes_align(p, ref, scale=False, translate=False)
        out[k] = aligned
    return out


def build_dictionary(groups: dict, atoms_per_group: int) -> PoseDictionary:
    """Concatenate per-group principal directions about the corpus mean.

    Each group's atoms are the leading right singular vectors of its poses
    minus the overall mean, so group offsets from the mean are captured.
    """
    groups = {k: sk.root_relative(np.asarray(v, float)) for k, v in groups.items()}
    allp = np.concatenate(list(groups.values()))
    if len(allp) == 0:
        raise FitError("empty corpus")
    mu = allp.mean(0)
    atoms, labels, warns = [], [], []
    for name, X in groups.items():
        if len(X) < atoms_per_group + 1:
            raise FitError(f"group {name!r} has {len(X)} poses; need at least {atoms_per_group + 1}")
        Y = (X - mu).reshape(len(X), -1)
        _, S, Vt = np.linalg.svd(Y, full_matrices=False)
        rank = int(np.sum(S > 1e-10 * max(S[0], 1e-300)))
        r = min(atoms_per_group, rank)
        if r < atoms_per_group:
            msg = f"group {name!r}: rank {rank} < {atoms_per_group}; kept {r} atoms"
            log.warning(msg)
            warns.append(msg)
        for a in range(r):
            v = Vt[a] / np.linalg.norm(Vt[a])
            atoms.append(v.reshape(sk.NUM_JOINTS, 3))
            labels.append(f"{name}:{a}")
    bl = sk.bone_lengths(allp).mean(0)
    return PoseDictionary(mu, np.array(atoms).reshape(-1, sk.NUM_JOINTS, 3), tuple(labels), bl, tuple(warns))


# --------------------------------------------------------------------------
# costs


def _observed(points, weights):
    w = np.asarray(weights, float)
    present = ~np.isnan(points).any(axis=1)
    return (w > 0) & present


def reprojection_cost(pose, cam: sk.CameraWP, points, weights) -> float:
    """Weighted reprojection cost over joints with positive weight."""
    obs = _observed(points, weights)
    r = points[obs] - sk.project_weak_perspective(pose[obs], cam)
    return float(np.sum(np.asarray(weights)[obs] * np.sum(r * r, axis=1)))


def length_cost(pose, ref_lengths) -> float:
    return float(np.sum(np.abs(sk.bone_lengths(pose) ** 2 - np.asarray(ref_lengths) ** 2)))


# --------------------------------------------------------------------------
# camera


def _complete(Q):
    R = np.vstack([Q, np.cross(Q[0], Q[1])])
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    if np.linalg.det(R) < 0:
        R = u @ np.diag([1, 1, -1]) @ vt
    return R


def _best_scale(xc, Xc, w, R):
    P = Xc @ R[:2].T
    num = np.sum(w[:, None] * xc * P)
    den = np.sum(w[:, None] * P * P)
    return num / den if den > 0 else 0.0


def _cost_rot(xc, Xc, w, R):
    s = max(_best_scale(xc, Xc, w, R), 1e-12)
    r = xc - s * (Xc @ R[:2].T)
    return float(np.sum(w * np.sum(r * r, axis=1))), s


def fit_camera(pose, points, weights=None) -> sk.CameraWP:
    """Weighted weak-perspective camera for a fixed 3D pose.

    Weighted least squares for the 2x3 matrix on centred data, projection of
    that matrix onto scaled orthonormal rows, then a local rotation
    refinement with closed-form scale. The planar-flip alternative is also
    refined and the cheaper of the two kept. Translation follows from the
    weighted centroids.
    """
    pose = np.asarray(pose, float)
    points = np.asarray(points, float)
    weights = np.ones(sk.NUM_JOINTS) if weights is None else np.asarray(weights, float)
    obs = _observed(points, weights)
    if obs.sum() < 3:
        raise FitError(f"need at least 3 observed joints, got {int(obs.sum())}")
    X, x, w = pose[obs], points[obs], weights[obs] / weights[obs].sum()
    Xbar, xbar = w @ X, w @ x
    Xc, xc = X - Xbar, x - xbar
    C = (w[:, None] * Xc).T @ Xc
    ev, evec = np.linalg.eigh(C)
    if ev[-2] <= 1e-12 * max(ev[-1], 1e-300):
        raise FitError("observed joints are collinear")
    A = (w[:, None] * xc).T @ Xc
    M = A @ np.linalg.pinv(C, rcond=1e-12)
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    Q0 = U @ Vt
    normal = evec[:, 0]
    H = np.eye(3) - 2 * np.outer(normal, normal)
    best = None
    for Q in (Q0, Q0 @ H):
        R0 = _complete(Q)

        def f(v, R0=R0):
            return _cost_rot(xc, Xc, w, Rotation.from_rotvec(v).as_matrix() @ R0)[0]

        res = minimize(f, np.zeros(3), method="BFGS", options={"gtol": 1e-12, "maxiter": 200})
        for v in (np.zeros(3), res.x):
            R = _complete((Rotation.from_rotvec(v).as_matrix() @ R0)[:2])
            c, s = _cost_rot(xc, Xc, w, R)
            if best is None or c < best[0]:
                best = (c, s, R)
    _, s, R = best
    t = xbar - s * (R[:2] @ Xbar)
    return sk.CameraWP(s, R, t)


# --------------------------------------------------------------------------
# sparse coding


def _design(dct: PoseDictionary, cam, points, weights, obs):
    sw = np.sqrt(np.asarray(weights, float)[obs])[:, None]
    target = (points[obs] - sk.project_weak_perspective(dct.mean[obs], cam)) * sw
    proj = cam.s * np.einsum("kpj,ij->kpi", dct.atoms[:, obs], cam.R[:2]) * sw[None]
    return target.ravel(), proj.reshape(len(dct), -1).T


def omp_path(dct, cam, points, weights, sparsity, tol=1e-6, atol=1e-12):
    """Greedy OMP; returns the code after each accepted step, starting empty."""
    if len(dct) == 0:
        raise FitError("empty dictionary")
    obs = _observed(np.asarray(points, float), weights)
    y, A = _design(dct, cam, np.asarray(points, float), weights, obs)
    norms = np.linalg.norm(A, axis=0)
    support: list[int] = []
    coef = np.zeros(0)
    r = y.copy()
    path = [((), np.zeros(0))]
    rr = float(r @ r)
    for _ in range(min(sparsity, len(dct))):
        if rr <= atol:
            break
        corr = np.abs(A.T @ r) / np.where(norms > 0, norms, np.inf)
        corr[support] = -1
        j = int(corr.argmax())
        if corr[j] <= 0:
            break
        trial = support + [j]
        c, *_ = np.linalg.lstsq(A[:, trial], y, rcond=None)
        r_new = y - A[:, trial] @ c
        rr_new = float(r_new @ r_new)
        if rr - rr_new <= tol * rr:
            break
        support, coef, r, rr = trial, c, r_new, rr_new
        path.append((tuple(support), coef.copy()))
    return path


def omp_fit_pose(points, weights, cam, dct: PoseDictionary, sparsity: int, beta: float = 1e-3, tol=1e-6):
    """Sparse code along the OMP path minimising ``C_r + beta * C_l``."""
    points = np.asarray(points, float)
    best = None
    for support, coef in omp_path(dct, cam, points, weights, sparsity, tol=tol):
        X = dct.reconstruct(support, coef)
        obj = reprojection_cost(X, cam, points, weights) + beta * length_cost(X, dct.bone_lengths)
        if best is None or obj < best[0]:
            best = (obj, SparseCode(support, coef, X))
    return best[1]


def refit_code(support, dct: PoseDictionary, cam, points, weights) -> SparseCode:
    """Least-squares weights on a fixed support."""
    support = tuple(support)
    if not support:
        return SparseCode((), np.zeros(0), dct.mean.copy())
    points = np.asarray(points, float)
    obs = _observed(points, weights)
    y, A = _design(dct, cam, points, weights, obs)
    c, *_ = np.linalg.lstsq(A[:, list(support)], y, rcond=None)
    return SparseCode(support, c, dct.reconstruct(support, c))


def objective(pose, cam, points, weights, dct, beta):
    return reprojection_cost(pose, cam, points, weights) + beta * length_cost(pose, dct.bone_lengths)


def _alternate(points, weights, dct, cam, iters, beta, sparsity):
    code = SparseCode((), np.zeros(0), dct.mean.copy())
    X = code.pose
    obj = objective(X, cam, points, weights, dct, beta)
    trace = [obj]
    for _ in range(iters):
        # fresh greedy code, or the current support refitted under the new camera
        for new_code in (omp_fit_pose(points, weights, cam, dct, sparsity, beta), refit_code(code.support, dct, cam, points, weights)):
            new_obj = objective(new_code.pose, cam, points, weights, dct, beta)
            if new_obj <= obj:
                code, X, obj = new_code, new_code.pose, new_obj
        cam_new = fit_camera(X, points, weights)
        cam_obj = objective(X, cam_new, points, weights, dct, beta)
        if cam_obj <= obj:
            cam, obj = cam_new, cam_obj
        improved = trace[-1] - obj
        trace.append(obj)
        if improved <= 1e-12 * max(1.0, trace[-2]):
            break
    return code, cam, trace


def alternate_fit(points, weights, dct: PoseDictionary, model=None, iters: int = 10, beta: float = 1e-3, sparsity: int = 8):
    """Alternate camera and sparse-pose updates from the mean pose.

    A step is kept only if it does not raise the objective, so the
    returned trace is non-increasing. The final pose's anatomical validity
    is reported in ``valid`` (when ``model`` is given), never repaired.
    """
    points = np.asarray(points, float)
    weights = np.asarray(weights, float)
    obs = _observed(points, weights)
    if not obs.any():
        raise FitError("no observed joints")
    cam = fit_camera(dct.mean, points, weights)
    code, cam, trace = _alternate(points, weights, dct, cam, iters, beta, sparsity)
    X = code.pose
    valid = None
    if model is not None:
        from .anatomy import is_pose_valid

        valid = bool(is_pose_valid(X, model))
    return FitResult(X, cam, trace, code, valid, weights)


@dataclass(frozen=True)
class TorsoSeed:
    """Fixed torso (pelvis at the origin) and camera for conditional sampling."""

    torso: np.ndarray  # (6, 3) in TORSO_JOINTS order
    camera: sk.CameraWP

    def __post_init__(self):
        t = np.array(self.torso, float).reshape(6, 3)
        t.setflags(write=False)
        object.__setattr__(self, "torso", t)


def extract_torso(fit: FitResult) -> TorsoSeed:
    """Torso joints of the fitted pose, re-rooted at the pelvis.

    The camera translation absorbs the shift so projections are unchanged.
    """
    pelvis = fit.pose[sk.J["pelvis"]]
    cam = fit.camera
    t = cam.t + cam.s * cam.R[:2] @ pelvis
    return TorsoSeed(fit.pose[sk.TORSO_IDX] - pelvis, sk.CameraWP(cam.s, cam.R, t))


def flip_depth(seed: TorsoSeed) -> TorsoSeed:
    """Mirror the torso through the image plane; projections are unchanged."""
    R = seed.camera.R
    F = R.T @ np.diag([1.0, 1.0, -1.0]) @ R
    return TorsoSeed(seed.torso @ F.T, seed.camera)
