"""Pose-conditioned anatomical validity model.

Upper limbs and the head are constrained by binary occupancy grids over
(azimuth, polar) in torso-anchored frames. Forearms and lower legs are
constrained per parent cell by a separating plane ``b.n + d < 0`` and a
bounding box on the in-plane projections of the unit bone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import skeleton as sk
from .cluster import kmeans, nearest_members


class AnatomyError(ValueError):
    pass


class UnfittedCellError(AnatomyError):
    """A lower-limb query fell in a parent cell without a fitted plane."""


# --------------------------------------------------------------------------
# model containers


@dataclass
class OccupancyGrid:
    n_theta: int
    n_phi: int
    masks: dict[str, np.ndarray]

    @property
    def d_theta(self) -> float:
        return 2 * np.pi / self.n_theta

    @property
    def d_phi(self) -> float:
        return np.pi / self.n_phi

    def cell_index(self, theta, phi):
        i = np.floor((np.asarray(theta) + np.pi) / self.d_theta).astype(int)
        j = np.floor(np.asarray(phi) / self.d_phi).astype(int)
        return np.clip(i, 0, self.n_theta - 1), np.clip(j, 0, self.n_phi - 1)

    def cell_center(self, i, j):
        return -np.pi + (np.asarray(i) + 0.5) * self.d_theta, (np.asarray(j) + 0.5) * self.d_phi


@dataclass
class PlaneField:
    """Per-cell lower-limb constraints for one family (arrays indexed by cell)."""

    fitted: np.ndarray  # (nt, np) bool
    normal: np.ndarray  # (nt, np, 3)
    offset: np.ndarray  # (nt, np)
    T: np.ndarray  # (nt, np, 3, 3), rows T1..T3
    bounds: np.ndarray  # (nt, np, 4) bnd1..bnd4
    measure: np.ndarray  # (nt, np) area of the feasible (u2, u3) set

    @classmethod
    def empty(cls, nt, nph):
        return cls(
            np.zeros((nt, nph), bool),
            np.zeros((nt, nph, 3)),
            np.zeros((nt, nph)),
            np.zeros((nt, nph, 3, 3)),
            np.zeros((nt, nph, 4)),
            np.zeros((nt, nph)),
        )


@dataclass(frozen=True)
class BoneLength:
    mean: float
    a: float
    b: float
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 < self.lo < self.mean < self.hi):
            raise AnatomyError(f"bone length support must satisfy 0 < lo < mean < hi: {self}")
        if not (self.a > 0 and self.b > 0):
            raise AnatomyError(f"Beta shapes must be positive: {self}")

    def logpdf(self, length):
        """Log density of the scaled Beta, ``-inf`` outside ``[lo, hi]``."""
        from math import lgamma

        length = np.asarray(length, dtype=float)
        w = self.hi - self.lo
        x = (length - self.lo) / w
        inside = (x > 0) & (x < 1)
        xs = np.where(inside, x, 0.5)
        lbeta = lgamma(self.a) + lgamma(self.b) - lgamma(self.a + self.b)
        val = (self.a - 1) * np.log(xs) + (self.b - 1) * np.log1p(-xs) - lbeta - np.log(w)
        # endpoints have finite density only when the shape allows it
        return np.where(inside, val, -np.inf)

    @property
    def analytic_mean(self) -> float:
        return self.lo + (self.hi - self.lo) * self.a / (self.a + self.b)


@dataclass
class AnatomyModel:
    grid: OccupancyGrid
    planes: dict[str, PlaneField]
    lengths: dict[str, BoneLength]
    torsos: np.ndarray  # (K, 6, 3) in skeleton.TORSO_JOINTS order
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.torsos = np.asarray(self.torsos, dtype=float)
        if self.torsos.ndim != 3 or self.torsos.shape[1:] != (6, 3) or len(self.torsos) == 0:
            raise AnatomyError("torso dictionary must be a nonempty (K, 6, 3) array")
        if self.grid.n_theta < 2 or self.grid.n_phi < 2:
            raise AnatomyError("occupancy grid must be at least 2 x 2")
        for fam in sk.UPPER_FAMILIES:
            m = self.grid.masks.get(fam)
            if m is None or m.shape != (self.grid.n_theta, self.grid.n_phi):
                raise AnatomyError(f"missing or mis-shaped occupancy mask for {fam}")
            if not m.any():
                raise AnatomyError(f"occupancy mask for {fam} has no occupied cell")
        for fam, lf in sk.LOWER_FAMILIES.items():
            pf = self.planes.get(fam)
            if pf is None or pf.fitted.shape != (self.grid.n_theta, self.grid.n_phi):
                raise AnatomyError(f"missing or mis-shaped plane field for {fam}")
            if np.any(self.grid.masks[lf.upper] & ~pf.fitted):
                raise AnatomyError(f"{fam}: occupied parent cell without a fitted plane")
            check_plane_field(pf, fam)
        for c in sk.LIMB_CLASSES:
            if c not in self.lengths:
                raise AnatomyError(f"missing bone length model for {c}")

    @property
    def mean_limb_length(self) -> float:
        return float(np.mean([self.lengths[c].mean for c in ("upper_arm", "forearm", "upper_leg", "lower_leg")]))

    def __eq__(self, other):
        if not isinstance(other, AnatomyModel):
            return NotImplemented
        g, h = self.grid, other.grid
        if (g.n_theta, g.n_phi) != (h.n_theta, h.n_phi) or g.masks.keys() != h.masks.keys():
            return False
        if any(not np.array_equal(g.masks[k], h.masks[k]) for k in g.masks):
            return False
        if self.planes.keys() != other.planes.keys() or self.lengths != other.lengths:
            return False
        for k, p in self.planes.items():
            q = other.planes[k]
            for name in ("fitted", "normal", "offset", "T", "bounds", "measure"):
                if not np.array_equal(getattr(p, name), getattr(q, name)):
                    return False
        return np.array_equal(self.torsos, other.torsos) and self.report == other.report


def check_plane_field(pf: PlaneField, fam: str = ""):
    f = pf.fitted
    if not f.any():
        return
    n = pf.normal[f]
    T = pf.T[f]
    b = pf.bounds[f]
    if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1) > 1e-9):
        raise AnatomyError(f"{fam}: plane normals must be unit length")
    eye = np.einsum("kij,klj->kil", T, T)
    if np.any(np.abs(eye - np.eye(3)) > 1e-9):
        raise AnatomyError(f"{fam}: projection matrices must be orthonormal")
    if np.any(np.sum(T[:, 0] * n, axis=-1) <= 1 - 1e-9):
        raise AnatomyError(f"{fam}: first projection row must be parallel to the normal")
    if np.any(b[:, 0] > b[:, 1]) or np.any(b[:, 2] > b[:, 3]):
        raise AnatomyError(f"{fam}: bounds must satisfy bnd1 <= bnd2 and bnd3 <= bnd4")
    if np.any(np.abs(b) > 1):
        raise AnatomyError(f"{fam}: bounding box must lie in [-1, 1]^2")
    if np.any(pf.offset[f] > 0):
        raise AnatomyError(f"{fam}: plane offsets must be non-positive")


# --------------------------------------------------------------------------
# validity predicates


def _family(name, table):
    try:
        return table[name]
    except KeyError:
        raise AnatomyError(f"unknown family {name!r}") from None


def is_upper_valid(theta, phi, family: str, model: AnatomyModel):
    _family(family, sk.UPPER_FAMILIES)
    i, j = model.grid.cell_index(theta, phi)
    return model.grid.masks[family][i, j]


# absorbs round-off in recomputed box coordinates, so zero-width boxes still admit their point
BOX_TOL = 1e-12
# relative plane margin used when generating lower bones (and in the matching area measure)
PLANE_MARGIN = 1e-9


def lower_checks(b, n, d, T, bounds, margin: float = 0.0):
    """Elementwise plane and box tests; all arguments broadcast over cells.

    ``margin`` tightens the plane test to ``b.n + d < -margin * |b|``;
    samplers use a small positive margin so their output stays strictly
    valid after round-off.
    """
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    plane = np.sum(b * n, axis=-1) + d < -margin * nb[..., 0]
    u = b / np.where(nb > 0, nb, 1.0)
    u2 = np.sum(T[..., 1, :] * u, axis=-1)
    u3 = np.sum(T[..., 2, :] * u, axis=-1)
    box = (
        (bounds[..., 0] - BOX_TOL <= u2)
        & (u2 <= bounds[..., 1] + BOX_TOL)
        & (bounds[..., 2] - BOX_TOL <= u3)
        & (u3 <= bounds[..., 3] + BOX_TOL)
    )
    return plane & box & (nb[..., 0] > 0)


def cell_params(model: AnatomyModel, family: str, i, j):
    _family(family, sk.LOWER_FAMILIES)
    pf = model.planes[family]
    if not np.all(pf.fitted[i, j]):
        raise UnfittedCellError(f"{family}: parent direction in a cell without a fitted plane")
    return pf.normal[i, j], pf.offset[i, j], pf.T[i, j], pf.bounds[i, j]


def is_lower_valid(b, parent_theta, parent_phi, family: str, model: AnatomyModel):
    """Plane and bounding-box test for a lower-limb bone ``b`` (local frame, mm)."""
    i, j = model.grid.cell_index(parent_theta, parent_phi)
    n, d, T, bnd = cell_params(model, family, i, j)
    return lower_checks(b, n, d, T, bnd)


def limb_geometry(poses: np.ndarray):
    """Local-frame limb vectors and their spherical coordinates.

    Returns a dict keyed by family name with ``local`` vectors ``(N, 3)`` and,
    for upper families, ``theta``/``phi``/``length``.
    """
    poses = np.asarray(poses, dtype=float)
    bases = {r: sk.frame_bases(poses, r) for r in sk.REGIONS}
    out = {}
    for name, f in sk.UPPER_FAMILIES.items():
        v = poses[..., sk.J[f.child], :] - poses[..., sk.J[f.parent], :]
        loc = np.einsum("...ji,...j->...i", bases[f.region], v)
        th, ph, ln = sk.local_to_spherical(loc)
        out[name] = {"local": loc, "theta": th, "phi": ph, "length": ln}
    for name, f in sk.LOWER_FAMILIES.items():
        v = poses[..., sk.J[f.child], :] - poses[..., sk.J[f.parent], :]
        loc = np.einsum("...ji,...j->...i", bases[f.region], v)
        out[name] = {"local": loc, "length": np.linalg.norm(loc, axis=-1)}
    return out


def validity_breakdown(poses: np.ndarray, model: AnatomyModel) -> dict[str, np.ndarray]:
    """Per-constraint validity flags for a batch of poses."""
    poses = np.asarray(poses, dtype=float)
    geo = limb_geometry(poses)
    flags = {}
    for name, f in sk.UPPER_FAMILIES.items():
        g = geo[name]
        flags[name] = np.asarray(is_upper_valid(g["theta"], g["phi"], name, model))
    for name, f in sk.LOWER_FAMILIES.items():
        up = geo[f.upper]
        ok_parent = flags[f.upper]
        i, j = model.grid.cell_index(up["theta"], up["phi"])
        pf = model.planes[name]
        res = np.zeros(np.shape(ok_parent), bool)
        sel = np.asarray(ok_parent)
        if sel.any():
            ii, jj = i[sel], j[sel]
            if not np.all(pf.fitted[ii, jj]):
                raise UnfittedCellError(f"{name}: occupied parent cell without a fitted plane")
            res[sel] = lower_checks(
                geo[name]["local"][sel], pf.normal[ii, jj], pf.offset[ii, jj], pf.T[ii, jj], pf.bounds[ii, jj]
            )
        flags[name] = res
    lengths = sk.bone_lengths(poses)
    ok_len = np.ones(lengths.shape[:-1], bool)
    for k, child in enumerate(sk.JOINTS[1:]):
        c = sk.BONE_CLASS[child]
        if c in model.lengths:
            bl = model.lengths[c]
            ok_len &= (lengths[..., k] >= bl.lo) & (lengths[..., k] <= bl.hi)
    flags["lengths"] = ok_len
    return flags


def is_pose_valid(poses: np.ndarray, model: AnatomyModel):
    """True where every occupancy, plane, box and bone-length test passes.

    Accepts a single ``(15, 3)`` pose (returns a bool) or a batch.
    """
    flags = validity_breakdown(poses, model)
    ok = np.logical_and.reduce(list(flags.values()))
    return bool(ok) if np.ndim(ok) == 0 else ok


# --------------------------------------------------------------------------
# learning


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    ang = np.pi * (1 + 5**0.5) * k
    return np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)


def _tangent_basis(n):
    a = np.eye(3)[np.argmin(np.abs(n))]
    e1 = a - (a @ n) * n
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def fit_separating_plane(bones, n_candidates: int = 2000, tol: float = 1e-10):
    """Separating plane ``(n, d)`` with ``b.n + d < 0`` for every bone.

    Minimises the largest ``b.n`` over unit normals (grid search, then a
    shrinking compass search on the sphere). When that value is negative
    the plane passes through the origin (``d = 0``, widest margin);
    otherwise ``d`` sits just below ``-max(b.n)``, the smallest feasible
    ``|d|`` for the chosen normal.
    """
    B = np.atleast_2d(np.asarray(bones, dtype=float))
    if B.shape[-1] != 3 or len(B) == 0:
        raise AnatomyError("need at least one 3-vector bone")
    norms = np.linalg.norm(B, axis=1)
    if np.any(norms <= 0):
        raise AnatomyError("zero-length bone")
    cands = fibonacci_sphere(n_candidates)
    mean_dir = -(B / norms[:, None]).mean(0)
    if np.linalg.norm(mean_dir) > 1e-12:
        cands = np.vstack([cands, mean_dir / np.linalg.norm(mean_dir)])
    vals = (B @ cands.T).max(0)
    n = cands[vals.argmin()]
    best = vals.min()

    step = 0.1
    angles = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    it = 0
    while step > tol and it < 10000:
        it += 1
        e1, e2 = _tangent_basis(n)
        dirs = np.cos(angles)[:, None] * e1 + np.sin(angles)[:, None] * e2
        trial = np.cos(step) * n + np.sin(step) * dirs
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        tv = (B @ trial.T).max(0)
        k = tv.argmin()
        if tv[k] < best:
            n, best = trial[k], tv[k]
        else:
            step *= 0.5
    n = n / np.linalg.norm(n)
    g = float((B @ n).max())
    if g < 0:
        d = 0.0
    else:
        d = -g - max(1e-6 * norms.max(), 1e-12)
    # guard against round-off at the margin
    while np.any(B @ n + d >= 0):
        d -= max(1e-6 * norms.max(), 1e-12)
    return n, float(d)


def complete_basis(n) -> np.ndarray:
    """Orthonormal rows ``[n; T2; T3]``, deterministic and right-handed."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    e = np.eye(3)[np.argmin(np.abs(n))]
    t2 = e - (e @ n) * n
    t2 /= np.linalg.norm(t2)
    t3 = np.cross(n, t2)
    return np.stack([n, t2, t3])


def lower_candidates(u2, u3, T):
    """The two unit candidates ``T^-1 u+-`` for box coordinates ``(u2, u3)``."""
    u2 = np.asarray(u2, dtype=float)
    u3 = np.asarray(u3, dtype=float)
    u1 = np.sqrt(np.maximum(1 - u2 * u2 - u3 * u3, 0.0))
    out = []
    for sgn in (1.0, -1.0):
        u = np.stack(np.broadcast_arrays(sgn * u1, u2, u3), axis=-1)
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        out.append(np.einsum("...ji,...j->...i", T, u))
    return out[0], out[1]


def feasible_measure(n, d, T, bounds, length, grid: int = 64, rng=None) -> float:
    """Area of box points ``(u2, u3)`` with at least one valid candidate sign."""
    w2 = bounds[1] - bounds[0]
    w3 = bounds[3] - bounds[2]
    a = (np.arange(grid) + 0.5) / grid
    u2, u3 = np.meshgrid(bounds[0] + w2 * a, bounds[2] + w3 * a, indexing="ij")
    frac = _feasible_fraction(u2.ravel(), u3.ravel(), n, d, T, bounds, length)
    if frac == 0:
        rng = rng or np.random.default_rng(0)
        m = 100_000
        frac = _feasible_fraction(
            bounds[0] + w2 * rng.random(m), bounds[2] + w3 * rng.random(m), n, d, T, bounds, length
        )
    return float(w2 * w3 * frac)


def _feasible_fraction(u2, u3, n, d, T, bounds, length):
    bp, bm = lower_candidates(u2, u3, T)
    ok = lower_checks(length * bp, n, d, T, bounds, PLANE_MARGIN) | lower_checks(length * bm, n, d, T, bounds, PLANE_MARGIN)
    return ok.mean()


@dataclass(frozen=True)
class BetaConfig:
    """Bone-length prior fitting: support is ``mean * (1 -+ half_width)``."""

    half_width: float = 0.15
    default_shape: tuple[float, float] = (2.0, 2.0)


def fit_bone_length(samples, cfg: BetaConfig = BetaConfig()):
    """Moment-matched scaled Beta; returns ``(BoneLength, clipped_fraction, fallback)``."""
    x = np.asarray(samples, dtype=float).ravel()
    mean = float(x.mean())
    lo, hi = mean * (1 - cfg.half_width), mean * (1 + cfg.half_width)
    z = (x - lo) / (hi - lo)
    clipped = float(np.mean((z <= 0) | (z >= 1)))
    z = np.clip(z, 1e-6, 1 - 1e-6)
    m, v = z.mean(), z.var()
    common = m * (1 - m) / v - 1 if v > 0 else -1.0
    fallback = not (common > 0)
    if fallback:
        a, b = cfg.default_shape
    else:
        a, b = m * common, (1 - m) * common
    return BoneLength(mean, float(a), float(b), lo, hi), clipped, fallback


def canonical_rotation(pose: np.ndarray) -> np.ndarray:
    """Rotation taking the arms frame of ``pose`` to backbone +y, lateral +x."""
    B = sk.frame_bases(pose, "arms")
    C = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    return C @ B.T


def canonical_torsos(poses: np.ndarray) -> np.ndarray:
    poses = sk.root_relative(np.asarray(poses, dtype=float))
    out = np.empty((len(poses), 6, 3))
    for k, p in enumerate(poses):
        R = canonical_rotation(p)
        out[k] = p[sk.TORSO_IDX] @ R.T
    return out


def _wrapped_cell_distance(grid: OccupancyGrid, i0, j0, i1, j1):
    t0, p0 = grid.cell_center(i0, j0)
    t1, p1 = grid.cell_center(i1, j1)
    dt = np.abs(sk.wrap_angle(t0 - t1))
    return np.hypot(dt, p0 - p1)


def learn_anatomy(
    corpus,
    n_theta: int = 36,
    n_phi: int = 18,
    beta: BetaConfig = BetaConfig(),
    torso_dict_size: int = 16,
    min_bones: int = 3,
    measure_grid: int = 64,
    seed: int = 0,
) -> AnatomyModel:
    """Learn occupancy grids, per-cell planes/boxes, bone lengths and torsos.

    Cells holding fewer than ``min_bones`` child bones are fitted on their
    own bones pooled with those of the nearest well-populated cell, so
    every training bone still satisfies its cell's constraints. Such cells
    are listed in ``model.report["pooled_cells"]``.
    """
    X = np.asarray(corpus, dtype=float)
    if X.ndim != 3 or len(X) == 0:
        raise AnatomyError("empty corpus")
    if X.shape[1:] != (sk.NUM_JOINTS, 3) or not np.all(np.isfinite(X)):
        raise AnatomyError("corpus poses must be finite (15, 3) arrays")
    X = sk.root_relative(X)
    geo = limb_geometry(X)
    masks = {}
    for name in sk.UPPER_FAMILIES:
        m = np.zeros((n_theta, n_phi), bool)
        grid_tmp = OccupancyGrid(n_theta, n_phi, {})
        i, j = grid_tmp.cell_index(geo[name]["theta"], geo[name]["phi"])
        m[i, j] = True
        masks[name] = m
    grid = OccupancyGrid(n_theta, n_phi, masks)

    lengths, clipped, fallbacks = {}, {}, []
    for c in sk.LIMB_CLASSES:
        samples = sk.class_lengths(X)[c]
        lengths[c], clipped[c], fb = fit_bone_length(samples, beta)
        if fb:
            fallbacks.append(c)

    planes = {}
    pooled_report, zero_measure = {}, {}
    rng = np.random.default_rng(seed)
    for name, f in sk.LOWER_FAMILIES.items():
        up = geo[f.upper]
        ci, cj = grid.cell_index(up["theta"], up["phi"])
        flat = ci * n_phi + cj
        b_all = geo[name]["local"]
        order = np.argsort(flat, kind="stable")
        cells, starts = np.unique(flat[order], return_index=True)
        groups = np.split(order, starts[1:])
        members = dict(zip(cells.tolist(), groups))
        rich = [c for c, g in members.items() if len(g) >= min_bones]
        pf = PlaneField.empty(n_theta, n_phi)
        pooled = []
        lbar = lengths[f.bone_class].mean
        for cell, idx in members.items():
            i, j = divmod(cell, n_phi)
            bones = b_all[idx]
            if len(idx) < min_bones and rich:
                ri = np.array([r // n_phi for r in rich])
                rj = np.array([r % n_phi for r in rich])
                near = rich[int(_wrapped_cell_distance(grid, i, j, ri, rj).argmin())]
                bones = np.vstack([bones, b_all[members[near]]])
                pooled.append([int(i), int(j)])
            n, d = fit_separating_plane(bones)
            T = complete_basis(n)
            u = bones / np.linalg.norm(bones, axis=1, keepdims=True)
            p2, p3 = u @ T[1], u @ T[2]
            pad = 1e-9
            bnd = np.clip([p2.min() - pad, p2.max() + pad, p3.min() - pad, p3.max() + pad], -1.0, 1.0)
            pf.fitted[i, j] = True
            pf.normal[i, j] = T[0]
            pf.offset[i, j] = d
            pf.T[i, j] = T
            pf.bounds[i, j] = bnd
            pf.measure[i, j] = feasible_measure(T[0], d, T, bnd, lbar, grid=measure_grid, rng=rng)
        planes[name] = pf
        pooled_report[name] = pooled
        zero_measure[name] = [list(map(int, c)) for c in np.argwhere(pf.fitted & (pf.measure <= 0))]
        # zero-measure cells keep a tiny positive area so densities stay finite
        pf.measure[pf.fitted & (pf.measure <= 0)] = 1e-300

    torsos = canonical_torsos(X)
    k = min(torso_dict_size, len(torsos))
    flat_t = torsos.reshape(len(torsos), -1)
    C, _, _ = kmeans(flat_t, k, np.random.default_rng(seed))
    keep = np.sort(nearest_members(flat_t, C))
    report = {
        "n_poses": int(len(X)),
        "pooled_cells": pooled_report,
        "zero_measure_cells": zero_measure,
        "length_clipped_fraction": clipped,
        "length_shape_fallback": fallbacks,
    }
    return AnatomyModel(grid, planes, lengths, torsos[keep], report)
