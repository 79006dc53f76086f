"""Pose hypotheses consistent with 2D detections for a fixed torso and camera.

Posterior samples come from rejection against per-joint reprojection
thresholds (conditional sampling) or from a deterministic lattice over limb
configurations (grid diversification). kmeans++ then condenses a sample
pool into ``k`` representative members.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import skeleton as sk
from .anatomy import PLANE_MARGIN, AnatomyModel, cell_params, lower_candidates, lower_checks
from .cluster import kmeans, nearest_members
from .prior import sample_bone_lengths, sample_chain

log = logging.getLogger(__name__)

MISSING_THRESHOLD = 0.002
TAU_FACTOR = 0.25


class InfeasibleContextError(RuntimeError):
    """Acceptance rate fell below the floor; ``residuals`` maps joint -> (best px, tau px)."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


def detect_missing(scores, threshold: float = MISSING_THRESHOLD, present=None):
    """``(observed, missing)`` masks; a joint is missing if its score is below threshold or absent."""
    sc = np.asarray(scores, float)
    obs = sc >= threshold
    if present is not None:
        obs &= np.asarray(present, bool)
    return obs, ~obs


def normalize_scores(raw, observed) -> np.ndarray:
    """Scores divided by their mean over the observed joints; zero elsewhere."""
    raw = np.asarray(raw, float)
    obs = np.asarray(observed, bool)
    if not obs.any():
        raise ValueError("no observed joints")
    m = raw[obs].mean()
    if not m > 0:
        raise ValueError("observed scores are all zero")
    return np.where(obs, raw / m, 0.0)


def limb_mean_length(model: AnatomyModel) -> float:
    """Mean of the upper-arm, forearm, upper-leg and lower-leg length means."""
    return float(np.mean([model.lengths[c].mean for c in ("upper_arm", "forearm", "upper_leg", "lower_leg")]))


def constrained_joints(observed, constrain_head: bool = True) -> np.ndarray:
    names = sk.LIMB_JOINTS + (("head",) if constrain_head else ())
    mask = np.zeros(sk.NUM_JOINTS, bool)
    mask[[sk.J[n] for n in names]] = True
    return mask & np.asarray(observed, bool)


def compute_thresholds(s, limb_length, alpha, observed, tau_factor=TAU_FACTOR, constrain_head=True):
    """Pixel thresholds ``tau_factor * s * limb_length / alpha``; ``inf`` where unconstrained."""
    alpha = np.asarray(alpha, float)
    cons = constrained_joints(observed, constrain_head)
    if not s > 0:
        raise ValueError("camera scale must be positive")
    if np.any(alpha[cons] <= 0):
        raise ValueError("zero score on an observed joint")
    tau = np.full(sk.NUM_JOINTS, np.inf)
    tau[cons] = tau_factor * s * limb_length / alpha[cons]
    return tau


@dataclass(frozen=True)
class ConditioningContext:
    points: np.ndarray  # (15, 2); NaN where absent
    alpha: np.ndarray  # (15,), zero on missing joints
    observed: np.ndarray  # (15,) bool
    torso: np.ndarray  # (6, 3), TORSO_JOINTS order
    camera: sk.CameraWP
    thresholds: np.ndarray  # (15,), inf where unconstrained

    def __post_init__(self):
        for name, shape, dt in (
            ("points", (sk.NUM_JOINTS, 2), float),
            ("alpha", (sk.NUM_JOINTS,), float),
            ("observed", (sk.NUM_JOINTS,), bool),
            ("torso", (len(sk.TORSO_JOINTS), 3), float),
            ("thresholds", (sk.NUM_JOINTS,), float),
        ):
            a = np.array(getattr(self, name), dtype=dt).reshape(shape)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        obs = self.observed
        if obs.any() and abs(self.alpha[obs].mean() - 1) > 1e-9:
            raise ValueError("normalised scores must average to one over observed joints")
        if np.any(np.isnan(self.points[obs])):
            raise ValueError("observed joint without a detection")
        fin = np.isfinite(self.thresholds)
        if np.any(fin & ~obs) or np.any(self.thresholds[fin] <= 0):
            raise ValueError("thresholds must be positive and only on observed joints")

    @property
    def missing(self) -> np.ndarray:
        return ~self.observed

    @property
    def constrained(self) -> np.ndarray:
        return np.isfinite(self.thresholds)

    def torso_pose(self) -> np.ndarray:
        X = np.zeros((sk.NUM_JOINTS, 3))
        X[sk.TORSO_IDX] = self.torso
        return X

    def digest(self) -> str:
        from .formats import digest

        return digest(
            {
                "points": np.nan_to_num(self.points, nan=-1.0).tolist(),
                "alpha": self.alpha.tolist(),
                "observed": self.observed.tolist(),
                "torso": self.torso.tolist(),
                "camera": [self.camera.s, self.camera.R.tolist(), self.camera.t.tolist()],
                "thresholds": [float(x) if np.isfinite(x) else None for x in self.thresholds],
            }
        )


def make_context(
    detections: sk.Detections2D,
    seed,
    model: AnatomyModel,
    missing_threshold: float = MISSING_THRESHOLD,
    tau_factor: float = TAU_FACTOR,
    constrain_head: bool = True,
) -> ConditioningContext:
    """Context from detections and a fixed torso/camera (``baseline.TorsoSeed``)."""
    obs, _ = detect_missing(detections.scores, missing_threshold, detections.present)
    alpha = normalize_scores(detections.scores, obs)
    tau = compute_thresholds(seed.camera.s, limb_mean_length(model), alpha, obs, tau_factor, constrain_head)
    return ConditioningContext(detections.points, alpha, obs, seed.torso, seed.camera, tau)


def reprojection_residuals(poses, ctx: ConditioningContext) -> np.ndarray:
    """Pixel distance between each joint's projection and its detection; NaN where absent."""
    proj = sk.project_weak_perspective(poses, ctx.camera)
    return np.linalg.norm(proj - ctx.points, axis=-1)


def accepts(poses, ctx: ConditioningContext, joints=None) -> np.ndarray:
    """Acceptance indicator: strict ``residual < tau`` on every constrained joint."""
    cons = ctx.constrained if joints is None else joints
    idx = np.flatnonzero(cons)
    if len(idx) == 0:
        return np.ones(np.shape(poses)[:-2], bool)
    P = np.asarray(poses, float)[..., idx, :]
    proj = ctx.camera.s * (P @ ctx.camera.R[:2].T) + ctx.camera.t
    r = np.linalg.norm(proj - ctx.points[idx], axis=-1)
    return np.all(r < ctx.thresholds[idx], axis=-1)


# --------------------------------------------------------------------------
# conditional sampling


def _chain_joints(chain):
    upper, lower = sk.CHAINS[chain]
    out = [sk.J[sk.UPPER_FAMILIES[upper].child]]
    if lower is not None:
        out.append(sk.J[sk.LOWER_FAMILIES[lower].child])
    return out


@dataclass
class _Tally:
    proposals: int = 0
    accepted: int = 0
    best: dict = field(default_factory=dict)

    def update(self, poses, ctx, joints, ok):
        self.proposals += len(ok)
        self.accepted += int(ok.sum())
        if len(poses) == 0:
            return
        r = reprojection_residuals(poses[:, joints], _Sub(ctx, joints))
        for k, j in enumerate(joints):
            m = float(np.nanmin(r[:, k]))
            self.best[j] = min(self.best.get(j, np.inf), m)

    def check(self, ctx, floor_accepts, floor_proposals, max_proposals, what):
        low = self.proposals >= floor_proposals and self.accepted < floor_accepts * self.proposals / floor_proposals
        if low or self.proposals >= max_proposals:
            res = {sk.JOINTS[j]: (b, float(ctx.thresholds[j])) for j, b in sorted(self.best.items())}
            detail = ", ".join(f"{n}: {b:.1f}px (tau {t:.1f})" for n, (b, t) in res.items())
            raise InfeasibleContextError(
                f"{what}: {self.accepted} acceptances in {self.proposals} proposals; best residuals {detail}", res
            )


class _Sub:
    """View of a context restricted to a subset of joints."""

    def __init__(self, ctx, joints):
        self.camera = ctx.camera
        self.points = ctx.points[joints]


def _cell_radius(grid):
    """Angle from each cell centre to its farthest corner or edge midpoint, ``(n_phi,)``."""
    j = np.arange(grid.n_phi)
    pc = (j + 0.5) * grid.d_phi
    c = sk.spherical_to_local(0.0, pc)
    rad = np.zeros(grid.n_phi)
    for dt in (-0.5, 0.0, 0.5):
        for dp in (-0.5, 0.0, 0.5):
            q = sk.spherical_to_local(dt * grid.d_theta, pc + dp * grid.d_phi)
            rad = np.maximum(rad, np.arccos(np.clip(np.sum(c * q, axis=-1), -1, 1)))
    return rad


def reachable_cells(ctx: ConditioningContext, model: AnatomyModel, chain: str, basis=None) -> np.ndarray:
    """Occupied upper cells from which the chain's constrained joints can still be accepted.

    Conservative: a cell is dropped only if no direction in it and no bone
    length in range brings the upper joint (and, through the lower bone's
    maximal length, the end joint) within threshold. Uniform sampling over
    the kept cells is the prior restricted to a superset of the acceptance
    region, so rejection on top of it stays exact.
    """
    upper, lower = sk.CHAINS[chain]
    fu = sk.UPPER_FAMILIES[upper]
    g = model.grid
    mask = g.masks[upper].copy()
    T0 = ctx.torso_pose()
    B = sk.frame_bases(T0[None], fu.region)[0] if basis is None else basis
    cam = ctx.camera
    i, j = np.nonzero(mask)
    th = -np.pi + (i + 0.5) * g.d_theta
    ph = (j + 0.5) * g.d_phi
    a = cam.s * (sk.spherical_to_cart(th, ph, 1.0, B) @ cam.R[:2].T)
    slack = cam.s * 2 * np.sin(_cell_radius(g)[j] / 2)
    up_len = model.lengths[fu.bone_class]
    base = sk.project_weak_perspective(T0[sk.J[fu.parent]], cam)
    targets = [(sk.J[fu.child], 0.0)]
    if lower is not None:
        fl = sk.LOWER_FAMILIES[lower]
        targets.append((sk.J[fl.child], cam.s * model.lengths[fl.bone_class].hi))
    keep = np.ones(len(i), bool)
    for joint, reach in targets:
        if not ctx.constrained[joint]:
            continue
        r = ctx.points[joint] - base
        aa = np.sum(a * a, axis=1)
        l = np.clip(np.sum(a * r, axis=1) / np.maximum(aa, 1e-300), up_len.lo, up_len.hi)
        dist = np.linalg.norm(l[:, None] * a - r, axis=1)
        keep &= dist < ctx.thresholds[joint] + reach + up_len.hi * slack + 1e-9
    mask[i[~keep], j[~keep]] = False
    return mask


# chains that share bone-length classes are sampled as one block
_BLOCKS = (("head",), ("l_arm", "r_arm"), ("l_leg", "r_leg"))


def _chain_classes(chain):
    upper, lower = sk.CHAINS[chain]
    out = [sk.UPPER_FAMILIES[upper].bone_class]
    if lower is not None:
        out.append(sk.LOWER_FAMILIES[lower].bone_class)
    return out


@dataclass
class _Sampler:
    ctx: ConditioningContext
    model: AnatomyModel
    rng: np.random.Generator
    bases: dict
    floor_accepts: int
    floor_proposals: int
    max_proposals: int
    batch: int
    tallies: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    clipped: int = 0

    def mask(self, chain):
        if chain not in self.masks:
            m = reachable_cells(self.ctx, self.model, chain)
            if not m.any():
                joints = [sk.JOINTS[j] for j in _chain_joints(chain) if self.ctx.constrained[j]]
                raise InfeasibleContextError(f"{chain}: no occupied cell can reach the detections of {', '.join(joints)}")
            self.masks[chain] = m
        return self.masks[chain]

    def fill(self, out, lengths, chains, todo, fresh=True, budget=None):
        """Resample ``chains`` of ``out[todo]`` until accepted; returns indices that ran out of ``budget``."""
        ctx = self.ctx
        joints = [j for c in chains for j in _chain_joints(c)]
        cons = np.zeros(sk.NUM_JOINTS, bool)
        cons[joints] = True
        cons &= ctx.constrained
        what = "+".join(chains)
        tally = self.tallies.setdefault(what, _Tally())
        classes = [k for c in chains for k in _chain_classes(c)]
        pending = np.asarray(todo)
        tries = np.zeros(len(out), int)
        failed = []
        while len(pending):
            rate = max(tally.accepted / tally.proposals, 1e-7) if tally.proposals else 1.0
            rep = int(np.clip(np.ceil(1.5 / rate), 1, max(1, self.batch // len(pending))))
            if budget is not None:
                rep = min(rep, budget)
            idx = np.repeat(pending, rep)
            trial = out[idx]
            bases = {r: np.broadcast_to(B, (len(idx), 3, 3)) for r, B in self.bases.items()}
            if fresh:
                L = sample_bone_lengths(self.model, self.rng, len(idx), classes)
            else:
                L = {c: lengths[c][idx] for c in classes}
            for c in chains:
                sample_chain(self.model, c, trial, bases, L, self.rng, self.mask(c))
            if cons.any():
                ok = accepts(trial, ctx, cons)
                tally.update(trial, ctx, list(np.flatnonzero(cons)), ok)
            else:
                ok = np.ones(len(idx), bool)
                tally.proposals += len(idx)
                tally.accepted += len(idx)
            # the first accepted proposal of each pending sample wins
            owners, first = np.unique(idx[ok], return_index=True)
            sel = np.flatnonzero(ok)[first]
            out[owners] = trial[sel]
            if fresh:
                for c in classes:
                    lengths[c][owners] = L[c][sel]
            pending = np.setdiff1d(pending, owners, assume_unique=True)
            tries[pending] += rep
            if budget is not None:
                spent = tries[pending] >= budget
                failed.extend(pending[spent].tolist())
                pending = pending[~spent]
            if len(pending):
                tally.check(ctx, self.floor_accepts, self.floor_proposals, self.max_proposals, what)
        return np.array(sorted(failed), int)

    def mirror(self, out, lengths, chain, todo, retries, cap):
        """Complete ``chain`` at the lengths already fixed in ``out[todo]``.

        Each sample gets ``retries`` proposals; with ``A`` of them accepted
        the sample is kept with probability ``min(1, A / (retries * cap))``
        and one accepted proposal is picked uniformly. The keep probability
        is unbiased for the chain's acceptance rate at those lengths (up to
        the constant ``cap``), so the shared lengths keep their exact
        posterior weight whenever that rate stays below ``cap``. Returns the
        indices that were not kept.
        """
        ctx = self.ctx
        cons = np.zeros(sk.NUM_JOINTS, bool)
        cons[_chain_joints(chain)] = True
        cons &= ctx.constrained
        tally = self.tallies.setdefault(chain, _Tally())
        classes = _chain_classes(chain)
        todo = np.asarray(todo)
        failed = []
        step = max(1, self.batch // retries)
        for lo in range(0, len(todo), step):
            part = todo[lo : lo + step]
            idx = np.repeat(part, retries)
            trial = out[idx]
            bases = {r: np.broadcast_to(B, (len(idx), 3, 3)) for r, B in self.bases.items()}
            L = {c: lengths[c][idx] for c in classes}
            sample_chain(self.model, chain, trial, bases, L, self.rng, self.mask(chain))
            ok = accepts(trial, ctx, cons)
            tally.update(trial, ctx, list(np.flatnonzero(cons)), ok)
            ok = ok.reshape(len(part), retries)
            A = ok.sum(axis=1)
            self.clipped += int(np.sum(A > retries * cap))
            keep = self.rng.random(len(part)) < A / (retries * cap)
            for k in np.flatnonzero(keep):
                pick = self.rng.choice(np.flatnonzero(ok[k]))
                out[part[k]] = trial[k * retries + pick]
            failed.extend(part[~keep].tolist())
            tally.check(ctx, self.floor_accepts, self.floor_proposals, self.max_proposals, chain)
        return np.array(failed, int)

    def pilot_rate(self, chain, n=2000):
        """Acceptance rate of ``chain`` alone with fresh lengths, from ``n`` proposals."""
        if chain in self.rates:
            return self.rates[chain]
        joints = _chain_joints(chain)
        cons = np.zeros(sk.NUM_JOINTS, bool)
        cons[joints] = True
        cons &= self.ctx.constrained
        if not cons.any():
            self.rates[chain] = 1.0
            return 1.0
        trial = np.broadcast_to(self.ctx.torso_pose(), (n, sk.NUM_JOINTS, 3)).copy()
        bases = {r: np.broadcast_to(B, (n, 3, 3)) for r, B in self.bases.items()}
        L = sample_bone_lengths(self.model, self.rng, n, _chain_classes(chain))
        sample_chain(self.model, chain, trial, bases, L, self.rng, self.mask(chain))
        self.rates[chain] = float(accepts(trial, self.ctx, cons).mean())
        return self.rates[chain]


def conditional_sample(
    ctx: ConditioningContext,
    model: AnatomyModel,
    n_target: int,
    rng: np.random.Generator,
    mode: str = "chain",
    floor_accepts: int = 10,
    floor_proposals: int = 1_000_000,
    max_proposals: int = 20_000_000,
    batch: int = 50_000,
    cap_factor: float = 3.0,
    min_mirror_accepts: float = 4.0,
    return_stats: bool = False,
):
    """``n_target`` prior samples on the fixed torso that pass the acceptance test.

    ``mode="joint"`` rejects whole poses. ``mode="chain"`` rejects the head,
    arms and legs separately, which is exact for those parts because they
    are independent given the torso and bone lengths. Mirrored chains share
    their lengths: the chain with the lower pilot acceptance rate is
    accepted first with freshly drawn lengths, then its mirror is completed
    by :meth:`_Sampler.mirror` with ``cap = cap_factor * pilot rate`` and
    enough proposals to expect ``min_mirror_accepts`` acceptances. The
    floor aborts once ``floor_proposals`` proposals yield fewer than
    ``floor_accepts`` acceptances in proportion.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    if mode not in ("chain", "joint"):
        raise ValueError(f"unknown mode {mode!r}")
    out = np.broadcast_to(ctx.torso_pose(), (n_target, sk.NUM_JOINTS, 3)).copy()
    B0 = {r: sk.frame_bases(out[:1], r)[0] for r in sk.REGIONS}
    smp = _Sampler(ctx, model, rng, B0, floor_accepts, floor_proposals, max_proposals, batch)
    lengths = {c: np.full(n_target, np.nan) for c in sk.LIMB_CLASSES}
    everyone = np.arange(n_target)
    if mode == "joint":
        smp.fill(out, lengths, list(sk.CHAINS), everyone)
    else:
        for block in _BLOCKS:
            if len(block) == 1:
                smp.fill(out, lengths, list(block), everyone)
                continue
            # the harder chain of a pair goes first and fixes the shared lengths
            first, second = sorted(block, key=smp.pilot_rate)
            rate = max(smp.pilot_rate(second), 1.0 / smp.floor_proposals)
            cap = min(1.0, cap_factor * rate)
            retries = int(np.clip(np.ceil(min_mirror_accepts / rate), 1, batch))
            todo = everyone
            while len(todo):
                smp.fill(out, lengths, [first], todo)
                todo = smp.mirror(out, lengths, second, todo, retries, cap)
    if return_stats:
        stats = {k: {"proposals": t.proposals, "accepted": t.accepted} for k, t in smp.tallies.items()}
        stats["clipped"] = smp.clipped
        return out, stats
    return out


# --------------------------------------------------------------------------
# grid diversification

_GRID_EDGE = 1e-9


def lattice(n, lo, hi, midpoints=True):
    if midpoints:
        return lo + (np.arange(n) + 0.5) * (hi - lo) / n
    return np.linspace(lo, hi, n)


def _chain_options(ctx, model, chain, B, n_theta, n_phi, n_u2, n_u3):
    """Accepted (upper child, lower child) positions of one chain on the lattice."""
    upper, lower = sk.CHAINS[chain]
    fu = sk.UPPER_FAMILIES[upper]
    g = model.grid
    TH, PH = np.meshgrid(lattice(n_theta, -np.pi, np.pi), lattice(n_phi, 0.0, np.pi), indexing="ij")
    T0 = ctx.torso_pose()
    parent = T0[sk.J[fu.parent]]
    child = parent + sk.spherical_to_cart(TH.ravel(), PH.ravel(), model.lengths[fu.bone_class].mean, B[fu.region])
    # some lattice angles sit on cell edges; bin by the angles the positions actually encode
    th, ph, _ = sk.cart_to_spherical(child - parent, B[fu.region])
    i, j = g.cell_index(th, ph)
    keep = g.masks[upper][i, j]
    child, i, j = child[keep], i[keep], j[keep]
    if lower is None:
        pos = child[:, None]
    else:
        fl = sk.LOWER_FAMILIES[lower]
        n, d, T, bnd = cell_params(model, lower, i, j)
        lin = _GRID_EDGE + (1 - 2 * _GRID_EDGE) * lattice(n_u2, 0.0, 1.0, midpoints=False)
        lin3 = _GRID_EDGE + (1 - 2 * _GRID_EDGE) * lattice(n_u3, 0.0, 1.0, midpoints=False)
        a, b = np.meshgrid(lin, lin3, indexing="ij")
        a, b = a.ravel(), b.ravel()
        u2 = bnd[:, None, 0] + (bnd[:, None, 1] - bnd[:, None, 0]) * a
        u3 = bnd[:, None, 2] + (bnd[:, None, 3] - bnd[:, None, 2]) * b
        Tb = np.broadcast_to(T[:, None], u2.shape + (3, 3))
        cp, cm = lower_candidates(u2, u3, Tb)
        ln = model.lengths[fl.bone_class].mean
        cand = np.stack([cp, cm], axis=2) * ln  # (K, G, 2, 3) local
        args = [np.broadcast_to(x[:, None, None], u2.shape + (2,) + x.shape[1:]) for x in (n, d, T, bnd)]
        ok = lower_checks(cand, *args, margin=PLANE_MARGIN)
        k_idx, _, _ = np.nonzero(ok)
        world = np.einsum("ij,nj->ni", B[fu.region], cand[ok])
        pos = np.stack([child[k_idx], child[k_idx] + world], axis=1)
    joints = _chain_joints(chain)
    X = np.broadcast_to(T0, (len(pos), sk.NUM_JOINTS, 3)).copy()
    X[:, joints] = pos
    mask = np.zeros(sk.NUM_JOINTS, bool)
    mask[joints] = True
    ok = accepts(X, ctx, mask & ctx.constrained)
    return joints, pos[ok]


def grid_diversify(
    ctx: ConditioningContext,
    model: AnatomyModel,
    rng: np.random.Generator,
    n_theta: int = 15,
    n_phi: int = 15,
    n_u2: int = 5,
    n_u3: int = 5,
    budget: int = 200_000,
) -> np.ndarray:
    """Stage-I candidates ``(N, 15, 3)`` composed from per-chain lattice options.

    Upper directions lie on a midpoint ``(theta, phi)`` lattice restricted
    to occupied cells; lower limbs use a ``(u2, u3)`` lattice spanning each
    cell's box, with class-mean bone lengths. Each chain is filtered by its
    own acceptance test, so every combination of surviving options passes.
    When the product of option counts exceeds ``budget`` a uniform random
    subset of combinations is kept. Returns an empty array if some chain
    has no surviving option.
    """
    T0 = ctx.torso_pose()
    B = {r: sk.frame_bases(T0[None], r)[0] for r in sk.REGIONS}
    opts = [_chain_options(ctx, model, c, B, n_theta, n_phi, n_u2, n_u3) for c in sk.CHAINS]
    counts = [len(p) for _, p in opts]
    if min(counts) == 0:
        return np.zeros((0, sk.NUM_JOINTS, 3))
    total = int(np.prod([float(c) for c in counts]))
    if total <= budget:
        combo = np.stack(np.unravel_index(np.arange(total), counts), axis=1)
    else:
        combo = np.stack([rng.integers(c, size=budget) for c in counts], axis=1)
        combo = np.unique(combo, axis=0)
    X = np.broadcast_to(T0, (len(combo), sk.NUM_JOINTS, 3)).copy()
    for c, (joints, pos) in enumerate(opts):
        X[:, joints] = pos[combo[:, c]]
    return X


# --------------------------------------------------------------------------
# clustering


@dataclass(frozen=True)
class HypothesisSet:
    poses: np.ndarray  # (k, 15, 3)
    sample_index: np.ndarray  # (k,) index into the sample pool
    cluster_id: np.ndarray  # (k,)
    context: ConditioningContext | None = None
    source: str = "conditional"

    def __len__(self):
        return len(self.poses)


def diversify_kmeanspp(samples, k: int, rng: np.random.Generator, context=None, source="conditional", max_iter=20, tol=1e-6):
    """kmeans++ on root-relative joint vectors; returns the nearest sample to each centroid."""
    S = np.asarray(samples, float)
    if len(S) < k:
        raise ValueError(f"need at least {k} samples, got {len(S)}")
    V = sk.root_relative(S).reshape(len(S), -1)
    C, _, _ = kmeans(V, k, rng, max_iter=max_iter, tol=tol)
    idx = nearest_members(V, C)
    return HypothesisSet(S[idx].copy(), idx, np.arange(k), context, source)
