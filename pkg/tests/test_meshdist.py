import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vehfit.meshdist import (
    AABBTree, batch_distances, build_aabb_tree, first_hits, point_mesh_distance, segments_visible,
)


def _seg_dist(p, a, b):
    ab = b - a
    t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


def _oracle_distance(p, verts, tris):
    """Plain-python reference: in-plane foot point if it falls inside the
    triangle (barycentric test), else the nearest of the three edges."""
    best = np.inf
    for a, b, c in verts[tris]:
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n)
        foot = p - ((p - a) @ n) * n
        m = np.array([b - a, c - a]).T
        uv, *_ = np.linalg.lstsq(m, foot - a, rcond=None)
        if uv.min() >= 0 and uv.sum() <= 1:
            d = abs((p - a) @ n)
        else:
            d = min(_seg_dist(p, a, b), _seg_dist(p, b, c), _seg_dist(p, c, a))
        best = min(best, d)
    return best


def _random_points(rng, verts, n):
    lo, hi = verts.min(axis=0) - 1.0, verts.max(axis=0) + 1.0
    return rng.uniform(lo, hi, (n, 3))


def test_tree_matches_brute_force(model):
    rng = np.random.default_rng(0)
    verts = model.synthesize(rng.normal(0, 1, 3))
    tris = model.topology.triangles
    pts = _random_points(rng, verts, 1000)
    tree = point_mesh_distance(pts, verts, tris, method="tree")
    brute = point_mesh_distance(pts, verts, tris, method="brute")
    assert np.max(np.abs(tree - brute)) <= 1e-9


def test_brute_force_matches_python_oracle(model):
    rng = np.random.default_rng(1)
    verts = model.mean
    tris = model.topology.triangles
    pts = _random_points(rng, verts, 60)
    brute = point_mesh_distance(pts, verts, tris, method="brute")
    oracle = np.array([_oracle_distance(p, verts, tris) for p in pts])
    assert np.max(np.abs(brute - oracle)) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_tree_matches_brute_on_random_soups(seed, n_tris):
    rng = np.random.default_rng(seed)
    verts = rng.normal(0, 2, (3 * n_tris, 3))
    tris = np.arange(3 * n_tris).reshape(-1, 3)
    pts = rng.normal(0, 3, (50, 3))
    tree = AABBTree(verts, tris).distances(pts)
    brute = point_mesh_distance(pts, verts, tris, method="brute")
    assert np.max(np.abs(tree - brute)) <= 1e-9


def test_vertex_and_centroid():
    verts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
    tris = np.array([[0, 1, 2]])
    assert point_mesh_distance(verts, verts, tris).max() == 0.0
    centroid = verts.mean(axis=0)
    for h in (0.0, 0.37, 5.0):
        for method in ("tree", "brute"):
            d = point_mesh_distance(centroid + [0, 0, h], verts, tris, method=method)[0]
            assert d == pytest.approx(h, abs=1e-12)


def test_points_on_mesh_have_zero_distance(model):
    rng = np.random.default_rng(2)
    tris = model.topology.triangles
    w = rng.dirichlet(np.ones(3), 200)
    k = rng.integers(len(tris), size=200)
    pts = np.einsum("nj,njd->nd", w, model.mean[tris[k]])
    assert point_mesh_distance(pts, model.mean, tris).max() <= 1e-12


def test_batch_distances_with_refit(model):
    rng = np.random.default_rng(3)
    tris = np.ascontiguousarray(model.topology.triangles)
    nodes = build_aabb_tree(np.ascontiguousarray(model.mean), tris)
    gammas = rng.normal(0, 1.5, (5, 3))
    verts = model.synthesize_many(gammas)
    pts = np.stack([_random_points(rng, v, 100) for v in verts])
    got = batch_distances(pts, np.ascontiguousarray(verts), tris, *nodes)
    for i in range(5):
        ref = point_mesh_distance(pts[i], verts[i], tris, method="brute")
        assert np.max(np.abs(got[i] - ref)) <= 1e-9


def test_invalid_inputs():
    with pytest.raises(ValueError):
        point_mesh_distance(np.zeros((1, 3)), np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(ValueError):
        point_mesh_distance(np.zeros((1, 3)), np.eye(3), np.array([[0, 1, 2]]), method="octree")


def test_ray_hits_and_occlusion():
    verts = np.array([[-1.0, -1.0, 5.0], [1.0, -1.0, 5.0], [0.0, 1.0, 5.0]])
    tris = np.array([[0, 1, 2]])
    t = first_hits(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [5.0, 0.0, 1.0]]), verts, tris)
    assert t[0] == pytest.approx(5.0)
    assert np.isinf(t[1]) and np.isinf(t[2])
    targets = np.array([[0.0, 0.0, 10.0], [0.0, 0.0, 5.0], [0.0, 0.0, 3.0]])
    vis = segments_visible(np.zeros(3), targets, verts, tris, 1e-3)
    np.testing.assert_array_equal(vis, [False, True, True])
