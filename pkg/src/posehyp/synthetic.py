"""Synthetic anatomy used in place of motion-capture data.

A hand-written joint-limit generator produces a pose corpus, from which the
bundled anatomy model is learned. The bundled pose dictionary is built from
samples of that model. Both are shipped under ``posehyp/data`` and can be
regenerated with ``python -m posehyp.synthetic``.
"""
from __future__ import annotations

import functools
from importlib import resources
from pathlib import Path

import numpy as np

from . import skeleton as sk

MEAN_LENGTHS = {"head": 200.0, "upper_arm": 280.0, "forearm": 250.0, "upper_leg": 440.0, "lower_leg": 430.0}

_UP = np.array([1.0, 0.0, 0.0])
_LEFT = np.array([0.0, 1.0, 0.0])
_FWD = np.array([0.0, 0.0, 1.0])


def default_torsos() -> np.ndarray:
    """Twelve canonical torsos (backbone +y, right->left +x), TORSO_JOINTS order."""
    base = {
        "pelvis": (0.0, 0.0, 0.0),
        "thorax": (0.0, 480.0, 0.0),
        "l_shoulder": (160.0, 450.0, 0.0),
        "r_shoulder": (-160.0, 450.0, 0.0),
        "l_hip": (120.0, -30.0, 0.0),
        "r_hip": (-120.0, -30.0, 0.0),
    }
    P = np.array([base[j] for j in sk.TORSO_JOINTS])
    upper = np.array([j in ("thorax", "l_shoulder", "r_shoulder") for j in sk.TORSO_JOINTS])
    shoulders = np.array([j in ("l_shoulder", "r_shoulder") for j in sk.TORSO_JOINTS])
    out = []
    for lean in np.deg2rad([-8.0, 0.0, 10.0, 22.0]):
        for twist in np.deg2rad([-15.0, 0.0, 15.0]):
            Q = P.copy()
            # twist shoulders about the backbone, then lean the upper body about x
            c, s = np.cos(twist), np.sin(twist)
            Ry = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
            th = Q[1]
            Q[shoulders] = (Q[shoulders] - th) @ Ry.T + th
            c, s = np.cos(lean), np.sin(lean)
            Rx = np.array([[1, 0, 0], [0, c, s], [0, -s, c]])
            Q[upper] = Q[upper] @ Rx.T
            out.append(Q)
    return np.array(out)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _directions(rng, n, accept):
    out = np.empty((0, 3))
    while len(out) < n:
        v = _unit(rng.normal(size=(4 * n + 16, 3)))
        out = np.vstack([out, v[accept(v)]])
    return out[:n]


def _hinge(rng, u, ref, kappa_max, twist_max, n):
    """Rotate ``u`` towards ``ref`` (made orthogonal to ``u``) by a flexion angle."""
    w = ref - np.sum(ref * u, axis=1, keepdims=True) * u
    bad = np.linalg.norm(w, axis=1) < 1e-3
    w[bad] = _UP - np.sum(_UP * u[bad], axis=1, keepdims=True) * u[bad]
    w = _unit(w)
    rho = rng.uniform(-twist_max, twist_max, n)[:, None]
    w = np.cos(rho) * w + np.sin(rho) * np.cross(u, w)
    kappa = rng.uniform(0, kappa_max, n)[:, None]
    return np.cos(kappa) * u + np.sin(kappa) * w


def _limb_lengths(rng, n):
    x = rng.beta(2.0, 2.0, size=(n, len(MEAN_LENGTHS)))
    return {c: MEAN_LENGTHS[c] * (0.88 + 0.24 * x[:, k]) for k, c in enumerate(MEAN_LENGTHS)}


def synthetic_corpus(n: int, rng: np.random.Generator, torsos: np.ndarray | None = None) -> np.ndarray:
    """Poses ``(n, 15, 3)`` drawn from hand-written joint-limit rules.

    Local directions use (up, left, forward) = frame axes 1..3.
    """
    torsos = default_torsos() if torsos is None else np.asarray(torsos)
    poses = np.zeros((n, sk.NUM_JOINTS, 3))
    poses[:, sk.TORSO_IDX] = torsos[rng.integers(len(torsos), size=n)]
    B = {r: sk.frame_bases(poses, r) for r in sk.REGIONS}
    L = _limb_lengths(rng, n)

    def place(parent, child, local, length, region):
        v = np.einsum("nij,nj->ni", B[region], local) * length[:, None]
        poses[:, sk.J[child]] = poses[:, sk.J[parent]] + v

    tilt = _unit(np.cos(np.deg2rad(10)) * _UP + np.sin(np.deg2rad(10)) * _FWD)
    head = _directions(rng, n, lambda v: v @ tilt >= np.cos(np.deg2rad(35)))
    place("thorax", "head", head, L["head"], "arms")

    for side, sgn in (("l", 1.0), ("r", -1.0)):
        arm = _directions(
            rng, n, lambda v: (sgn * v[:, 1] >= -0.25) & (v[:, 0] <= 0.9) & (v[:, 2] >= -0.6)
        )
        fore = _hinge(rng, arm, np.tile(_FWD, (n, 1)), np.deg2rad(150), np.deg2rad(60), n)
        place(f"{side}_shoulder", f"{side}_elbow", arm, L["upper_arm"], "arms")
        place(f"{side}_elbow", f"{side}_wrist", fore, L["forearm"], "arms")

        def leg_ok(v):
            lat = sgn * v[:, 1]
            ok = (v[:, 0] <= 0.5) & (v[:, 2] >= -0.45) & (lat >= -0.3) & (lat <= 0.75)
            return ok & ((v[:, 0] <= -0.2) | (v[:, 2] >= 0.3))

        thigh = _directions(rng, n, leg_ok)
        shin = _hinge(rng, thigh, np.tile(-_FWD, (n, 1)), np.deg2rad(140), np.deg2rad(20), n)
        place(f"{side}_hip", f"{side}_knee", thigh, L["upper_leg"], "legs")
        place(f"{side}_knee", f"{side}_ankle", shin, L["lower_leg"], "legs")
    return poses


MODEL_FILE = "default_model.json"
DICT_FILE = "default_dictionary.json"


def build_default_model(n: int = 20000, seed: int = 7):
    from .anatomy import learn_anatomy

    corpus = synthetic_corpus(n, np.random.default_rng(seed))
    return learn_anatomy(corpus, torso_dict_size=12, seed=seed)


def build_default_dictionary(model, n: int = 4000, groups: int = 8, atoms: int = 8, seed: int = 11):
    """Dictionary from prior samples clustered into ``groups`` pseudo-action classes."""
    from .baseline import build_dictionary, normalize_corpus
    from .cluster import kmeans
    from .prior import sample_poses

    rng = np.random.default_rng(seed)
    poses = normalize_corpus(sample_poses(model, rng, n), model)
    _, labels, _ = kmeans(poses.reshape(n, -1), groups, rng)
    grouped = {f"group{g:02d}": poses[labels == g] for g in range(groups)}
    return build_dictionary(grouped, atoms)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("posehyp") / "data" / name))


@functools.lru_cache(maxsize=None)
def default_model():
    from .formats import load_model

    path = _data_path(MODEL_FILE)
    if path.exists():
        return load_model(path)
    return build_default_model()


@functools.lru_cache(maxsize=None)
def default_dictionary():
    from .formats import load_dictionary

    path = _data_path(DICT_FILE)
    if path.exists():
        return load_dictionary(path)
    return build_default_dictionary(default_model())


def main():
    from .formats import save_dictionary, save_model

    model = build_default_model()
    save_model(model, _data_path(MODEL_FILE))
    default_model.cache_clear()
    save_dictionary(build_default_dictionary(model), _data_path(DICT_FILE))


if __name__ == "__main__":
    main()
