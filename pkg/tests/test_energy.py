from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import qmc

from vehfit import raster
from vehfit.energy import (
    TERMS, VARIANTS, EnergyConfig, EnergyError, EnergyModel, EnergyReport, bhattacharyya,
    category_shape_energy, e3d_from_distances, free_space_weights, get_variant, huber,
    keypoint_energy, mean_shape_energy, model_viewpoint, orientation_energy, position_weight,
    total_energy, wireframe_energy,
)
from vehfit.observer import HeatmapStack, ViewpointDistribution
from vehfit.scene import FreeSpaceGrid
from vehfit.state import VehicleState


# ---------------------------------------------------------------- 3D likelihood

def test_huber_branches():
    assert huber(0.4, 0.5) == pytest.approx(0.16)
    assert e3d_from_distances([0.4], [0.5]) == pytest.approx(0.32)
    assert huber(1.0, 0.5) == pytest.approx(0.75)
    assert e3d_from_distances([0.0, 0.0], [0.3, 0.2]) == 0.0
    with pytest.raises(EnergyError):
        e3d_from_distances(np.zeros(0), np.zeros(0))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.0, 1.0))
def test_huber_continuous_and_below_square(sigma, frac):
    d = sigma * (1 + frac)
    assert huber(sigma - 1e-9, sigma) == pytest.approx(huber(sigma + 1e-9, sigma), abs=1e-7)
    assert huber(d, sigma) <= d * d + 1e-12


def test_points_on_surface_cost_nothing(model, zero_frame):
    frame, scene = zero_frame
    em = EnergyModel(model, scene, frame.bundle, get_variant("base"))
    assert em.evaluate(frame.truth).e3d <= 1e-20


def test_e3d_permutation_invariant(model, zero_frame):
    frame, scene = zero_frame
    b = frame.bundle
    shuffled = replace(b, points=b.points[np.random.default_rng(0).permutation(len(b.points))])
    state = VehicleState((frame.truth.t[0] + 0.3, frame.truth.t[1]), frame.truth.theta + 4, frame.truth.gamma)
    e1 = EnergyModel(model, scene, b, get_variant("base")).evaluate(state).e3d
    e2 = EnergyModel(model, scene, shuffled, get_variant("base")).evaluate(state).e3d
    assert e1 == pytest.approx(e2, rel=1e-12)


# ---------------------------------------------------------------- keypoints

def test_keypoint_examples():
    e, u = keypoint_energy(np.zeros((2, 5)), np.ones((2, 5)))
    assert e == 0.0 and u == 5
    vals = np.zeros((2, 3))
    vals[:, 1] = 0.5
    delta = np.zeros((2, 3))
    delta[:, 1] = 1
    e, u = keypoint_energy(vals, delta)
    assert e == pytest.approx(-np.log(2.0), abs=1e-12) and u == 1
    e, u = keypoint_energy(np.ones((2, 3)), np.zeros((2, 3)))
    assert e == 0.0 and u == 0
    # saturation is clamped
    assert np.isfinite(keypoint_energy(np.ones((2, 1)), np.ones((2, 1)))[0])


def _pose_perturbations(truth, rng, n):
    out = []
    for i in range(n):
        t = np.array(truth.t)
        theta = truth.theta
        if i % 2:
            a = rng.uniform(0, 2 * np.pi)
            t = t + rng.uniform(0.5, 1.5) * np.array([np.cos(a), np.sin(a)])
        else:
            theta = theta + rng.choice([-1, 1]) * rng.uniform(20, 60)
        out.append(np.r_[t, theta, truth.gamma])
    return np.array(out)


def test_keypoint_term_prefers_truth(model, zero_frame):
    frame, scene = zero_frame
    em = EnergyModel(model, scene, frame.bundle, get_variant("base-k-w"))
    e_true = em.evaluate(frame.truth).e_kp
    X = _pose_perturbations(frame.truth, np.random.default_rng(1), 100)
    assert np.all(e_true <= em.evaluate_batch(X)["e_kp"])
    assert e_true < 0


def test_total_monotone_in_keypoint_heatmaps(model, zero_frame):
    frame, scene = zero_frame
    b = frame.bundle
    brighter = replace(b, kp_left=HeatmapStack(b.kp_left.values + 0.3 * (1 - b.kp_left.values)),
                       kp_right=HeatmapStack(b.kp_right.values + 0.3 * (1 - b.kp_right.values)))
    X = _pose_perturbations(frame.truth, np.random.default_rng(2), 40)
    X = np.vstack([frame.truth.to_vector(), X])
    lo = EnergyModel(model, scene, b, get_variant("full")).evaluate_batch(X)["total"]
    hi = EnergyModel(model, scene, brighter, get_variant("full")).evaluate_batch(X)["total"]
    assert np.all(hi <= lo + 1e-12)


# ---------------------------------------------------------------- wireframe

def test_bhattacharyya_examples():
    assert bhattacharyya([0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]) == 0.0
    assert bhattacharyya([0.25] * 4, [0.25] * 4) == pytest.approx(1.0, abs=1e-15)
    assert wireframe_energy([[0.0, 0.0, -1.0]]) == 0.0
    assert wireframe_energy([[1.0]]) == pytest.approx(0.5 * np.log(1e-6), rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=20).filter(lambda v: sum(v) > 1e-3), st.integers(0, 99))
def test_bhattacharyya_bounds(p, seed):
    q = np.random.default_rng(seed).uniform(0, 1, len(p))
    bc = bhattacharyya(p, q)
    assert -1e-12 <= bc <= 1 + 1e-12
    assert bhattacharyya(p, p) == pytest.approx(1.0, abs=1e-12)


def test_identical_raster_gives_unit_coefficient():
    pts = np.array([[[[5.0, 5.0], [9.0, 12.0]]]])         # one particle, one edge, one piece
    visible = np.ones((1, 1, 1), dtype=np.bool_)
    sides = np.ones((1, 1), dtype=np.bool_)
    buf = np.zeros((20, 20))
    raster.splat_segments(pts[0], visible[0], sides, 0, 1.5, 1.5, buf, 0.5)
    q = np.sqrt(buf / buf.sum())[None]
    bc = raster.wireframe_bc_batch(pts, visible, sides, np.array([1.5]), np.array([1.5]), q, np.array([0.5]))
    assert bc[0, 0] == pytest.approx(1.0, abs=1e-12)
    far = np.zeros((1, 20, 20))
    far[0, 0, 0] = 1.0
    bc = raster.wireframe_bc_batch(pts, visible, sides, np.array([0.5]), np.array([0.5]), far, np.array([0.5]))
    assert bc[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_wireframe_term_prefers_truth(model, zero_frame):
    frame, scene = zero_frame
    em = EnergyModel(model, scene, frame.bundle, get_variant("base-k-w"))
    e_true = em.evaluate(frame.truth).e_wf
    X = _pose_perturbations(frame.truth, np.random.default_rng(3), 100)
    assert np.all(e_true <= em.evaluate_batch(X)["e_wf"])


# ---------------------------------------------------------------- position prior

def _grid(rho, cell=0.25):
    rho = np.asarray(rho, float)
    known = ~np.isnan(rho)
    n_g = np.where(known, np.round(np.nan_to_num(rho) * 100), 0).astype(int)
    n_o = np.where(known, 100 - n_g, 0).astype(int)
    return FreeSpaceGrid(cell, np.zeros(2), n_g, n_o)


def test_unknown_cells_contribute_nothing():
    grid = _grid(np.full((8, 8), np.nan))
    corners = np.array([[0.3, 0.3], [1.5, 0.3], [1.5, 1.2], [0.3, 1.2]])
    assert raster.overlap_sum(corners, 0.0, 0.0, 0.25, free_space_weights(grid)) == 0.0


def test_single_cell_algebra(rig):
    rho = np.full((4, 4), np.nan)
    rho[1, 2] = 0.5
    grid = _grid(rho)
    corners = np.array([[0.25, 0.5], [0.5, 0.5], [0.5, 0.75], [0.25, 0.75]])
    area = 0.25 ** 2
    lam = float(position_weight(10.0, grid.cell, rig))
    e = lam * raster.overlap_sum(corners, 0.0, 0.0, grid.cell, free_space_weights(grid)) / area
    assert e == pytest.approx(-lam * np.log(0.5), rel=1e-12)
    assert lam == pytest.approx(min(1.0, 0.25 / (100 / (721 * 0.54))))


def test_overlap_area_matches_quasi_monte_carlo():
    rng = np.random.default_rng(5)
    pts = qmc.Sobol(2, scramble=True, seed=5).random_base2(20)
    for _ in range(5):
        c = rng.uniform(1.0, 2.0, 2)
        half = rng.uniform(0.2, 0.8, 2)
        a = rng.uniform(0, np.pi)
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        corners = (np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * half) @ R.T + c
        weights = rng.uniform(0, 1, (16, 16))
        got = raster.overlap_sum(corners, 0.0, 0.0, 0.25, weights)
        # sample the rectangle uniformly and read the cell weight under each sample
        local = (pts * 2 - 1) * half
        world = local @ R.T + c
        idx = np.floor(world / 0.25).astype(int)
        est = 4 * half[0] * half[1] * np.mean(weights[idx[:, 0], idx[:, 1]])
        assert got == pytest.approx(est, rel=1e-3)
        whole = raster.overlap_sum(corners, 0.0, 0.0, 0.25, np.ones((16, 16)))
        assert whole == pytest.approx(4 * half[0] * half[1], rel=1e-12)


def test_position_term_penalises_free_space(model, zero_frame):
    frame, scene = zero_frame
    em = EnergyModel(model, scene, frame.bundle, get_variant("base-s-p-o"))
    at_truth = em.evaluate(frame.truth).e_pos
    t = np.array(frame.truth.t)
    # move sideways, away from the camera ray, onto observed road
    moved = VehicleState(t + np.array([0.0, 3.0 if t[1] < 0 else -3.0]), frame.truth.theta, frame.truth.gamma)
    assert at_truth >= 0
    assert em.evaluate(moved).e_pos > at_truth


# ---------------------------------------------------------------- orientation prior

def test_orientation_examples():
    uniform = ViewpointDistribution(np.full(36, 1 / 36))
    assert orientation_energy(uniform.mode(), uniform) == pytest.approx(3.584, abs=1e-3)
    assert model_viewpoint(0.0, np.array([10.0, 0.0])) == 180.0
    antipodal = orientation_energy(uniform.mode() + 180.0, uniform)
    assert antipodal == pytest.approx(-np.log(1 / 36) - np.log(1e-9), rel=1e-6)
    one_hot = ViewpointDistribution.wrapped_gaussian(90.0, 0.0)
    assert orientation_energy(90.0, one_hot) == 0.0
    assert orientation_energy(270.0, one_hot) == pytest.approx(-2 * np.log(1e-9), rel=1e-9)


# ---------------------------------------------------------------- shape priors

def test_shape_examples():
    sd = np.array([1.0])
    modes = np.array([[1.0], [-1.0]])
    assert category_shape_energy([[0.0]], modes, np.array([0.5, 0.5]), sd)[0] == pytest.approx(0.5)
    assert category_shape_energy([[1.0]], modes, np.array([1.0, 0.0]), sd)[0] == 0.0
    assert mean_shape_energy([[2.0]], sd)[0] == pytest.approx(1.0)
    assert mean_shape_energy([[2.0]], sd, "gaussian")[0] == pytest.approx(2.0)
    with pytest.raises(EnergyError):
        mean_shape_energy([[1.0]], sd, "laplace")


def test_category_minimiser_is_weighted_mode_average(model):
    rng = np.random.default_rng(6)
    probs = rng.dirichlet(np.ones(len(model.type_names)))
    sd = model.sdevs
    expected = probs @ model.modes
    # coordinate-wise grid refinement of the convex quadratic
    g = np.zeros(3)
    for width in (4.0, 0.4, 0.04, 0.004, 0.0004):
        for s in range(3):
            cand = np.tile(g, (401, 1))
            cand[:, s] = g[s] + np.linspace(-width, width, 401)
            g = cand[np.argmin(category_shape_energy(cand, model.modes, probs, sd))]
    np.testing.assert_allclose(g, expected, atol=1e-5)
    # strict convexity along random chords
    a, b = rng.normal(size=(2, 3))
    fa, fb, fm = (category_shape_energy(x[None], model.modes, probs, sd)[0] for x in (a, b, (a + b) / 2))
    assert fm < (fa + fb) / 2


# ---------------------------------------------------------------- totals

def test_base_variant_uses_3d_and_mean_penalty(model, zero_frame):
    frame, scene = zero_frame
    state = VehicleState(frame.truth.t, frame.truth.theta + 10, np.array(frame.truth.gamma) + 0.5)
    rep = total_energy(frame.bundle, state, model, scene, "base")
    assert rep.e_kp == rep.e_wf == rep.e_pos == rep.e_ori == 0.0
    assert rep.e3d > 0
    assert rep.e_shape == pytest.approx(mean_shape_energy(np.array(state.gamma)[None], model.sdevs)[0])
    assert rep.total == rep.e3d + rep.e_shape


def test_full_variant_sums_six_terms(model, zero_frame):
    frame, scene = zero_frame
    state = VehicleState(frame.truth.t, frame.truth.theta + 10, frame.truth.gamma)
    rep = total_energy(frame.bundle, state, model, scene, "full")
    assert all(np.isfinite(getattr(rep, t)) for t in TERMS)
    assert rep.total == pytest.approx(rep.term_sum(), abs=1e-12)
    assert rep.e_kp <= 0 and rep.e_wf <= 0 and rep.e_pos >= 0 and rep.e_ori >= 0 and rep.e_shape >= 0
    assert rep.n_visible >= 1


def test_variants_disable_terms(model, zero_frame):
    frame, scene = zero_frame
    state = VehicleState(frame.truth.t, frame.truth.theta + 25, frame.truth.gamma)
    for name, variant in VARIANTS.items():
        rep = total_energy(frame.bundle, state, model, scene, variant)
        for t in TERMS:
            if not variant.enabled(t):
                assert getattr(rep, t) == 0.0
        assert rep.total == pytest.approx(rep.term_sum(), abs=1e-12)
    with pytest.raises(EnergyError):
        get_variant("everything")


def test_weights_scale_terms(model, zero_frame):
    frame, scene = zero_frame
    state = VehicleState(frame.truth.t, frame.truth.theta + 25, frame.truth.gamma)
    one = total_energy(frame.bundle, state, model, scene, "full")
    cfg = EnergyConfig(weights=(2.0, 1.0, 0.0, 1.0, 1.0, 1.0))
    two = total_energy(frame.bundle, state, model, scene, "full", cfg)
    assert two.e3d == pytest.approx(2 * one.e3d) and two.e_wf == 0.0
    with pytest.raises(EnergyError):
        total_energy(frame.bundle, state, model, scene, "full", EnergyConfig(weights=(1.0,)))


def test_batch_matches_single(model, zero_frame):
    frame, scene = zero_frame
    em = EnergyModel(model, scene, frame.bundle, get_variant("full"))
    X = _pose_perturbations(frame.truth, np.random.default_rng(8), 6)
    batch = em.evaluate_batch(X)
    for i, x in enumerate(X):
        rep = em.evaluate(VehicleState.from_vector(x))
        for t in TERMS:
            assert getattr(rep, t) == pytest.approx(batch[t][i], rel=1e-12, abs=1e-12)


def test_truth_is_local_minimum(model, zero_frame):
    frame, scene = zero_frame
    em = EnergyModel(model, scene, frame.bundle, get_variant("full"))
    rng = np.random.default_rng(9)
    n = 300
    X = np.tile(frame.truth.to_vector(), (n, 1))
    X[:, :2] += rng.uniform(-0.5, 0.5, (n, 2))
    X[:, 2] += rng.uniform(-10, 10, n)
    X[:, 3:] += rng.uniform(-1, 1, (n, 3))
    e_true = em.evaluate(frame.truth).total
    assert np.all(e_true <= em.evaluate_batch(X)["total"])


def test_report_csv():
    rep = EnergyReport(1.0, -0.5, -0.25, 0.5, 0.1, 0.2, 1.05, 300, 7.5)
    assert EnergyReport.csv_header().split(",")[:7] == list(TERMS) + ["total"]
    assert rep.csv_row().split(",")[1] == "-0.5"
    assert rep.term_sum() == pytest.approx(1.05)
