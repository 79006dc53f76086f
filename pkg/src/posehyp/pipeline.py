"""Per-frame hypothesis pipeline: baseline fit, posterior pool, kmeans++ selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import skeleton as sk
from .baseline import FitResult, alternate_fit, extract_torso, flip_depth
from .config import RunConfig
from .hypotheses import (
    ConditioningContext,
    HypothesisSet,
    InfeasibleContextError,
    conditional_sample,
    detect_missing,
    diversify_kmeanspp,
    grid_diversify,
    make_context,
    normalize_scores,
)
from .prior import stream

log = logging.getLogger(__name__)

# (torso variant, threshold scale) tried in order when a context is infeasible
FALLBACKS = (("fitted", 1.0), ("flipped", 1.0), ("fitted", 2.0), ("flipped", 2.0), ("fitted", 4.0))


@dataclass
class FrameResult:
    fit: FitResult
    context: ConditioningContext
    pool: np.ndarray
    source: str
    sets: dict[int, HypothesisSet] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


def fit_frame(det: sk.Detections2D, dct, model, cfg: RunConfig) -> FitResult:
    obs, _ = detect_missing(det.scores, cfg.missing_threshold, det.present)
    alpha = normalize_scores(det.scores, obs)
    pts = np.where(obs[:, None], det.points, np.nan)
    return alternate_fit(pts, alpha, dct, model, iters=cfg.iters, beta=cfg.beta, sparsity=cfg.sparsity)


def sample_pool(ctx: ConditioningContext, model, cfg: RunConfig, rng: np.random.Generator, need: int):
    """Grid candidates subsampled to ``n_samples``, topped up by conditional samples.

    Returns ``(pool, source, stats)``.
    """
    n = max(cfg.n_samples, need)
    grid = grid_diversify(ctx, model, rng, cfg.grid_theta, cfg.grid_phi, cfg.grid_u2, cfg.grid_u3, cfg.budget)
    stats = {"grid": len(grid)}
    if len(grid) > n:
        grid = grid[np.sort(rng.choice(len(grid), n, replace=False))]
    if len(grid) >= n:
        return grid, "grid", stats
    try:
        extra, st = conditional_sample(
            ctx, model, n - len(grid), rng, mode=cfg.sampling, max_proposals=cfg.max_proposals, return_stats=True
        )
    except InfeasibleContextError:
        if len(grid) >= need:
            stats["conditional"] = "infeasible"
            return grid, "grid", stats
        raise
    stats["conditional"] = st
    pool = np.concatenate([grid, extra])
    return pool, ("mixed" if len(grid) else "conditional"), stats


def hypothesize_frame(det: sk.Detections2D, model, dct, cfg: RunConfig, index=(0,), ks=None) -> FrameResult:
    """Hypothesis sets for one frame; ``index`` selects the frame's random stream.

    If the fitted torso and camera admit no accepted samples, the
    depth-mirrored torso and then wider thresholds are tried (when
    ``cfg.fallback`` is set); the attempt used is recorded in ``stats``.
    """
    ks = [cfg.k] if ks is None else sorted(set(ks))
    fit = fit_frame(det, dct, model, cfg)
    fitted = extract_torso(fit)
    seeds = {"fitted": fitted, "flipped": flip_depth(fitted)}
    ladder = FALLBACKS if cfg.fallback else FALLBACKS[:1]
    err = None
    for attempt, (variant, scale) in enumerate(ladder):
        ctx = make_context(
            det, seeds[variant], model, cfg.missing_threshold, cfg.tau_factor * scale, cfg.constrain_head
        )
        rng = stream(cfg.seed, *index, attempt)
        try:
            pool, source, stats = sample_pool(ctx, model, cfg, rng, max(ks))
        except InfeasibleContextError as e:
            log.info("frame %s: %s torso, tau x%g infeasible: %s", index, variant, scale, e)
            err = e
            continue
        stats.update(torso=variant, tau_scale=scale)
        res = FrameResult(fit, ctx, pool, source, stats=stats)
        for k in ks:
            res.sets[k] = diversify_kmeanspp(pool, k, stream(cfg.seed, *index, attempt, k), ctx, source)
        return res
    raise err
