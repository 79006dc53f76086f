"""Unconditional pose prior: sampling and exact log density.

Sampling walks the kinematic chain: a torso from the dictionary, head and
upper-limb directions from occupied grid cells, one Beta length per bone
class, then forearms and lower legs from the per-cell bounding box with
sign disambiguation against the separating plane.
"""
from __future__ import annotations

import numpy as np

from . import skeleton as sk
from .anatomy import PLANE_MARGIN, AnatomyModel, cell_params, limb_geometry, lower_candidates, lower_checks, is_pose_valid

# keeps uniform draws off cell and box edges so validity re-checks are stable
_EDGE = 1e-9


class CellInfeasibleError(RuntimeError):
    """No valid lower-limb candidate was found within the retry budget."""


def stream(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, index...)``; used to split work deterministically."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, index)]))


def _u(rng, size):
    return _EDGE + (1 - 2 * _EDGE) * rng.random(size)


def sample_torso(model: AnatomyModel, rng: np.random.Generator, n: int | None = None):
    """Uniformly chosen dictionary torsos; returns ``(indices, torsos)``."""
    K = len(model.torsos)
    if K == 0:
        raise ValueError("empty torso dictionary")
    idx = rng.integers(K, size=n)
    return idx, model.torsos[idx].copy()


def sample_bone_lengths(model: AnatomyModel, rng: np.random.Generator, n: int | None = None, classes=sk.LIMB_CLASSES):
    """One scaled-Beta draw per bone class (and per pose when ``n`` is given)."""
    out = {}
    for c in classes:
        bl = model.lengths[c]
        x = np.clip(rng.beta(bl.a, bl.b, size=n), _EDGE, 1 - _EDGE)
        out[c] = bl.lo + (bl.hi - bl.lo) * x
    return out


def sample_upper_dir(model: AnatomyModel, family: str, rng: np.random.Generator, n: int | None = None, mask=None):
    """``(theta, phi)`` uniform in angle over the family's occupied cells (or ``mask``)."""
    mask = model.grid.masks[family] if mask is None else mask
    cells = np.argwhere(mask)
    if len(cells) == 0:
        raise ValueError(f"{family}: no occupied cell")
    k = rng.integers(len(cells), size=n)
    i, j = cells[k, 0], cells[k, 1]
    shape = np.shape(i)
    theta = -np.pi + (i + _u(rng, shape)) * model.grid.d_theta
    phi = (j + _u(rng, shape)) * model.grid.d_phi
    return theta, phi


def sample_lower(
    model: AnatomyModel,
    family: str,
    parent_theta,
    parent_phi,
    length,
    rng: np.random.Generator,
    basis=None,
    max_tries: int = 1000,
    return_u: bool = False,
):
    """Lower-limb bone vectors for the given parent directions and lengths.

    Draws ``(u2, u3)`` uniformly in the parent cell's box, forms both sign
    candidates and keeps a valid one (a uniformly chosen one when both
    qualify). Rejected draws are retried up to ``max_tries`` times. Vectors
    are in the local frame unless ``basis`` is given.
    """
    pt = np.atleast_1d(np.asarray(parent_theta, float))
    pp = np.atleast_1d(np.asarray(parent_phi, float))
    L = np.broadcast_to(np.asarray(length, float), pt.shape).copy()
    i, j = model.grid.cell_index(pt, pp)
    n, d, T, bnd = cell_params(model, family, i, j)
    m = len(pt)
    out = np.full((m, 3), np.nan)
    us = np.full((m, 2), np.nan)
    pending = np.arange(m)
    for _ in range(max_tries):
        if len(pending) == 0:
            break
        bb = bnd[pending]
        u2 = bb[:, 0] + (bb[:, 1] - bb[:, 0]) * _u(rng, len(pending))
        u3 = bb[:, 2] + (bb[:, 3] - bb[:, 2]) * _u(rng, len(pending))
        Tp = T[pending]
        cp, cm = lower_candidates(u2, u3, Tp)
        lp = L[pending, None]
        args = (n[pending], d[pending], Tp, bb)
        okp = lower_checks(lp * cp, *args, margin=PLANE_MARGIN)
        okm = lower_checks(lp * cm, *args, margin=PLANE_MARGIN)
        coin = rng.random(len(pending)) < 0.5
        take_p = okp & (~okm | coin)
        ok = okp | okm
        chosen = np.where(take_p[:, None], cp, cm) * lp
        done = pending[ok]
        out[done] = chosen[ok]
        us[done, 0], us[done, 1] = u2[ok], u3[ok]
        pending = pending[~ok]
    if len(pending):
        raise CellInfeasibleError(
            f"{family}: no valid candidate after {max_tries} tries in {len(pending)} cell(s)"
        )
    if basis is not None:
        out = np.einsum("...ij,...j->...i", np.broadcast_to(basis, (m, 3, 3)), out)
    if np.ndim(parent_theta) == 0:
        out, us = out[0], us[0]
    return (out, us) if return_u else out


def sample_chain(model, chain: str, poses, bases, lengths, rng, mask=None):
    """Fill one chain (head, arm or leg) of ``poses`` in place.

    ``mask`` optionally restricts the upper direction to a subset of the
    occupied cells.
    """
    upper, lower = sk.CHAINS[chain]
    fu = sk.UPPER_FAMILIES[upper]
    n = len(poses)
    th, ph = sample_upper_dir(model, upper, rng, n, mask)
    B = bases[fu.region]
    v = sk.spherical_to_cart(th, ph, lengths[fu.bone_class], B)
    poses[:, sk.J[fu.child]] = poses[:, sk.J[fu.parent]] + v
    if lower is not None:
        fl = sk.LOWER_FAMILIES[lower]
        b = sample_lower(model, lower, th, ph, lengths[fl.bone_class], rng, basis=B)
        poses[:, sk.J[fl.child]] = poses[:, sk.J[fl.parent]] + b
    return poses


def sample_limbs(model, torso_poses, rng, lengths=None, chains=tuple(sk.CHAINS)):
    """Complete poses whose torso joints are already set."""
    poses = np.array(torso_poses, dtype=float)
    n = len(poses)
    if lengths is None:
        lengths = sample_bone_lengths(model, rng, n)
    bases = {r: sk.frame_bases(poses, r) for r in sk.REGIONS}
    for c in chains:
        sample_chain(model, c, poses, bases, lengths, rng)
    return poses


def sample_poses(model: AnatomyModel, rng: np.random.Generator, n: int) -> np.ndarray:
    poses = np.zeros((n, sk.NUM_JOINTS, 3))
    _, torsos = sample_torso(model, rng, n)
    poses[:, sk.TORSO_IDX] = torsos
    return sk.root_relative(sample_limbs(model, poses, rng))


def sample_pose(model: AnatomyModel, rng: np.random.Generator) -> np.ndarray:
    return sample_poses(model, rng, 1)[0]


def upper_log_density(local, family: str, model: AnatomyModel):
    """Log density of an upper-limb/head endpoint in Cartesian coordinates.

    ``log p(l) + log p(theta, phi) - 2 log l - log|sin phi|``, where the
    angular density is uniform over the family's occupied cells.
    """
    f = sk.UPPER_FAMILIES[family]
    th, ph, ln = sk.local_to_spherical(local)
    g = model.grid
    mask = g.masks[family]
    i, j = g.cell_index(th, ph)
    occ = mask[i, j]
    log_ang = -np.log(mask.sum() * g.d_theta * g.d_phi)
    with np.errstate(divide="ignore"):
        val = model.lengths[f.bone_class].logpdf(ln) + log_ang - 2 * np.log(ln) - np.log(np.abs(np.sin(ph)))
    return np.where(occ, val, -np.inf)


def lower_log_density(local, parent_theta, parent_phi, family: str, model: AnatomyModel):
    """``log p(l)`` plus the log of the uniform density over feasible ``(u2, u3, sign)``.

    The sampler picks ``(u2, u3)`` uniformly over the feasible part of the
    box and then one of the ``n_valid`` valid signs, so the density is
    ``1 / (area * n_valid)``. Invalid configurations get ``-inf``.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        return _lower_log_density(local, parent_theta, parent_phi, family, model)


def _lower_log_density(local, parent_theta, parent_phi, family, model):
    f = sk.LOWER_FAMILIES[family]
    local = np.asarray(local, float)
    i, j = model.grid.cell_index(parent_theta, parent_phi)
    pf = model.planes[family]
    fitted = pf.fitted[i, j]
    ii, jj = np.where(fitted, i, 0), np.where(fitted, j, 0)
    n, d, T, bnd = pf.normal[ii, jj], pf.offset[ii, jj], pf.T[ii, jj], pf.bounds[ii, jj]
    ln = np.linalg.norm(local, axis=-1)
    valid = fitted & lower_checks(local, n, d, T, bnd)
    u = local / np.where(ln > 0, ln, 1.0)[..., None]
    u2 = np.sum(T[..., 1, :] * u, axis=-1)
    u3 = np.sum(T[..., 2, :] * u, axis=-1)
    cp, cm = lower_candidates(u2, u3, T)
    nvalid = lower_checks(ln[..., None] * cp, n, d, T, bnd, PLANE_MARGIN).astype(int) + lower_checks(
        ln[..., None] * cm, n, d, T, bnd, PLANE_MARGIN
    ).astype(int)
    nvalid = np.maximum(nvalid, 1)
    val = model.lengths[f.bone_class].logpdf(ln) - np.log(pf.measure[ii, jj]) - np.log(nvalid)
    return np.where(valid, val, -np.inf)


def prior_log_density(poses, model: AnatomyModel):
    """Log prior density of complete poses; ``-inf`` for invalid ones."""
    poses = np.asarray(poses, float)
    single = poses.ndim == 2
    P = poses[None] if single else poses
    valid = np.asarray(is_pose_valid(P, model))
    geo = limb_geometry(P)
    total = np.full(len(P), -np.log(len(model.torsos)))
    for name in sk.UPPER_FAMILIES:
        total = total + upper_log_density(geo[name]["local"], name, model)
    for name, f in sk.LOWER_FAMILIES.items():
        up = geo[f.upper]
        total = total + lower_log_density(geo[name]["local"], up["theta"], up["phi"], name, model)
    total = np.where(valid, total, -np.inf)
    return float(total[0]) if single else total
