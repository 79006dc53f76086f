import numpy as np
import pytest
from scipy import stats

from posehyp import anatomy as an
from posehyp import prior
from posehyp import skeleton as sk


def cartesian_integral(logf, radius, h):
    """Midpoint-rule integral of ``exp(logf)`` over the cube ``[-radius, radius]^3``."""
    ax = np.arange(-radius + h / 2, radius, h)
    Y, Z = np.meshgrid(ax, ax, indexing="ij")
    total = 0.0
    for x in ax:
        V = np.stack([np.full_like(Y, x), Y, Z], -1).reshape(-1, 3)
        lp = logf(V)
        total += np.exp(lp[np.isfinite(lp)]).sum()
    return total * h**3


def test_stream_deterministic_and_independent():
    a = prior.stream(3, 1, 2).random(5)
    assert np.array_equal(a, prior.stream(3, 1, 2).random(5))
    assert not np.array_equal(a, prior.stream(3, 2, 1).random(5))


def test_sample_poses_valid_and_root_relative(model):
    P = prior.sample_poses(model, np.random.default_rng(0), 2000)
    assert np.all(an.is_pose_valid(P, model))
    assert np.allclose(P[:, 0], 0)
    assert np.all(np.isfinite(prior.prior_log_density(P, model)))


def test_sample_pose_seed_determinism(model):
    a = prior.sample_pose(model, prior.stream(9))
    b = prior.sample_pose(model, prior.stream(9))
    assert np.array_equal(a, b)


def test_mirrored_bones_share_lengths(model):
    P = prior.sample_poses(model, np.random.default_rng(1), 200)
    L = sk.class_lengths(P)
    for c in ("upper_arm", "forearm", "upper_leg", "lower_leg"):
        assert np.allclose(L[c][:, 0], L[c][:, 1], rtol=0, atol=1e-9)


def test_bone_length_draws_match_beta_mean(model):
    L = prior.sample_bone_lengths(model, np.random.default_rng(2), 100_000)
    for c, x in L.items():
        bl = model.lengths[c]
        assert np.all((x >= bl.lo) & (x <= bl.hi))
        assert abs(x.mean() - bl.analytic_mean) < 0.02 * bl.analytic_mean


def test_torso_selection_uniform(model):
    idx, _ = prior.sample_torso(model, np.random.default_rng(3), 100_000)
    counts = np.bincount(idx, minlength=len(model.torsos))
    assert stats.chisquare(counts).pvalue > 0.01


def test_upper_cells_visited_uniformly(model):
    fam = "l_upper_arm"
    th, ph = prior.sample_upper_dir(model, fam, np.random.default_rng(4), 100_000)
    i, j = model.grid.cell_index(th, ph)
    assert np.all(model.grid.masks[fam][i, j])
    cells = np.flatnonzero(model.grid.masks[fam].ravel())
    flat = i * model.grid.n_phi + j
    counts = np.array([np.sum(flat == c) for c in cells])
    assert stats.chisquare(counts).pvalue > 0.01


def test_two_cell_split():
    from dataclasses import replace

    rng = np.random.default_rng(5)
    grid = an.OccupancyGrid(4, 4, {"x": np.zeros((4, 4), bool)})
    mask = np.zeros((4, 4), bool)
    mask[1, 2] = mask[3, 0] = True

    class M:
        pass

    m = M()
    m.grid = replace(grid, masks={"x": mask})
    th, ph = prior.sample_upper_dir(m, "x", rng, 10_000)
    i, _ = m.grid.cell_index(th, ph)
    assert stats.binomtest(int(np.sum(i == 1)), 10_000).pvalue > 0.01


def test_lower_samples_valid(model):
    fam = "r_lower_leg"
    f = sk.LOWER_FAMILIES[fam]
    rng = np.random.default_rng(6)
    th, ph = prior.sample_upper_dir(model, f.upper, rng, 20_000)
    L = model.lengths[f.bone_class].mean
    b = prior.sample_lower(model, fam, th, ph, L, rng)
    assert np.all(an.is_lower_valid(b, th, ph, fam, model))
    assert np.allclose(np.linalg.norm(b, axis=1), L)


def test_lower_degenerate_box_gives_minus_normal(model):
    import copy

    fam = "l_forearm"
    m = copy.deepcopy(model)
    pf = m.planes[fam]
    i, j = np.argwhere(m.grid.masks["l_upper_arm"])[0]
    pf.bounds[i, j] = 0.0
    pf.offset[i, j] = 0.0
    th, ph = m.grid.cell_center(i, j)
    # the only box point is u = (+-1, 0, 0); only the minus sign is behind the plane
    b = prior.sample_lower(m, fam, th, ph, 250.0, np.random.default_rng(0))
    assert np.allclose(b, -250.0 * pf.normal[i, j], atol=1e-3)


def test_lower_box_points_uniform_over_feasible_region(model):
    fam = "l_lower_leg"
    f = sk.LOWER_FAMILIES[fam]
    i, j = np.argwhere(model.grid.masks[f.upper])[3]
    th, ph = model.grid.cell_center(i, j)
    L = model.lengths[f.bone_class].mean
    n, d, T, bnd = an.cell_params(model, fam, i, j)
    _, us = prior.sample_lower(model, fam, np.full(40_000, th), np.full(40_000, ph), L, np.random.default_rng(7), return_u=True)
    # feasible fraction of each histogram bin from a fine enumeration
    nb, fine = 6, 240
    e2 = np.linspace(bnd[0], bnd[1], nb + 1)
    e3 = np.linspace(bnd[2], bnd[3], nb + 1)
    g2 = bnd[0] + (bnd[1] - bnd[0]) * (np.arange(fine) + 0.5) / fine
    g3 = bnd[2] + (bnd[3] - bnd[2]) * (np.arange(fine) + 0.5) / fine
    U2, U3 = np.meshgrid(g2, g3, indexing="ij")
    cp, cm = an.lower_candidates(U2, U3, T)
    feas = an.lower_checks(L * cp, n, d, T, bnd) | an.lower_checks(L * cm, n, d, T, bnd)
    w, _, _ = np.histogram2d(U2.ravel(), U3.ravel(), [e2, e3], weights=feas.ravel().astype(float))
    obs, _, _ = np.histogram2d(us[:, 0], us[:, 1], [e2, e3])
    keep = w.ravel() > 0
    expected = w.ravel()[keep] / w.sum() * len(us)
    assert obs.ravel()[~keep].sum() == 0
    assert stats.chisquare(obs.ravel()[keep], expected).pvalue > 0.01


@pytest.mark.parametrize("family", ["head", "l_upper_arm"])
def test_upper_density_integrates_to_one(model, family):
    hi = model.lengths[sk.UPPER_FAMILIES[family].bone_class].hi
    total = cartesian_integral(lambda V: prior.upper_log_density(V, family, model), 1.01 * hi, 4.0)
    assert abs(total - 1) < 0.02


def test_lower_density_integrates_to_one_in_box_coordinates(model):
    fam = "l_forearm"
    f = sk.LOWER_FAMILIES[fam]
    i, j = np.argwhere(model.grid.masks[f.upper])[5]
    th, ph = model.grid.cell_center(i, j)
    pf = model.planes[fam]
    T, bnd = pf.T[i, j], pf.bounds[i, j]
    bl = model.lengths[f.bone_class]
    nl, nu = 100, 100
    ls = bl.lo + (bl.hi - bl.lo) * (np.arange(nl) + 0.5) / nl
    u2 = bnd[0] + (bnd[1] - bnd[0]) * (np.arange(nu) + 0.5) / nu
    u3 = bnd[2] + (bnd[3] - bnd[2]) * (np.arange(nu) + 0.5) / nu
    Lg, U2, U3 = np.meshgrid(ls, u2, u3, indexing="ij")
    # box points off the unit disc all collapse onto the plane circle, a null set of bones
    disc = U2**2 + U3**2 < 1
    total = 0.0
    for c in an.lower_candidates(U2, U3, T):
        b = (Lg[..., None] * c)[disc]
        lp = prior.lower_log_density(b.reshape(-1, 3), th, ph, fam, model)
        total += np.exp(lp[np.isfinite(lp)]).sum()
    cell = (bl.hi - bl.lo) / nl * (bnd[1] - bnd[0]) / nu * (bnd[3] - bnd[2]) / nu
    assert abs(total * cell - 1) < 0.02


def test_density_invalid_is_minus_inf(model):
    X = prior.sample_pose(model, np.random.default_rng(8))
    Y = X.copy()
    Y[sk.J["head"]] = X[sk.J["thorax"]] + 3 * (X[sk.J["head"]] - X[sk.J["thorax"]])
    assert np.isfinite(prior.prior_log_density(X, model))
    assert prior.prior_log_density(Y, model) == -np.inf


def test_density_length_homogeneity(model):
    # scaling the upper arm (and carrying the forearm along) changes only p(l)/l^2
    rng = np.random.default_rng(9)
    for _ in range(20):
        X = prior.sample_pose(model, rng)
        s, e, w = sk.J["l_shoulder"], sk.J["l_elbow"], sk.J["l_wrist"]
        bl = model.lengths["upper_arm"]
        l0 = np.linalg.norm(X[e] - X[s])
        l1 = np.clip(l0 * 1.03, bl.lo + 1e-6, bl.hi - 1e-6)
        Y = X.copy()
        Y[e] = X[s] + (X[e] - X[s]) * l1 / l0
        Y[w] = Y[e] + (X[w] - X[e])
        d0, d1 = prior.prior_log_density(X, model), prior.prior_log_density(Y, model)
        if not (np.isfinite(d0) and np.isfinite(d1)):
            continue
        # the right arm keeps its length so validity is unchanged; only the left-arm factor moves
        expected = (bl.logpdf(l1) - 2 * np.log(l1)) - (bl.logpdf(l0) - 2 * np.log(l0))
        assert np.isclose(d1 - d0, expected, atol=1e-9)


def test_empty_torso_dictionary_rejected():
    with pytest.raises(an.AnatomyError):
        an.AnatomyModel(an.OccupancyGrid(2, 2, {}), {}, {}, np.zeros((0, 6, 3)))
