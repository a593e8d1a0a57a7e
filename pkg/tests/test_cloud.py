import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collocate.cloud import (Neighborhood, PointCloud, brute_force_neighborhoods, build_neighborhoods,
                             check_unisolvency, jittered_grid, make_rng, random_cloud, read_cloud,
                             regular_grid, resolution_metrics, select_radii, write_cloud)
from collocate.errors import InvalidCloud
from collocate.indexing import monomial_matrix, multi_index_set


def _as_sets(nbhds):
    return [tuple(nb.members) for nb in nbhds]


def test_cell_list_matches_brute_force_2000_points():
    rng = make_rng(11)
    pts = rng.uniform(0, 1, size=(2000, 2))
    cloud = PointCloud(pts, 0.1)
    assert _as_sets(build_neighborhoods(cloud)) == _as_sets(brute_force_neighborhoods(cloud))


def test_cell_list_variable_radii_3d():
    rng = make_rng(5)
    pts = rng.uniform(0, 1, size=(400, 3))
    radii = rng.uniform(0.1, 0.25, size=400)
    cloud = PointCloud(pts, radii)
    assert _as_sets(build_neighborhoods(cloud)) == _as_sets(brute_force_neighborhoods(cloud))


def test_strict_radius_excludes_points_on_the_sphere():
    cloud = PointCloud(np.array([[0.0], [1.0], [0.5]]), 1.0)
    nb = build_neighborhoods(cloud)[0]
    assert list(nb.members) == [0, 2]


def test_neighborhood_layout():
    cloud = regular_grid(1, 0.25, 1.5)
    nb = build_neighborhoods(cloud)[2]
    assert list(nb.members) == [1, 2, 3]
    assert nb.self_slot == 1
    np.testing.assert_allclose(nb.offsets[:, 0], [-0.25, 0.0, 0.25])


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_neighborhoods_commute_with_permutation(seed):
    rng = np.random.default_rng(seed)
    n = 60
    cloud = PointCloud(rng.uniform(0, 1, size=(n, 2)), rng.uniform(0.15, 0.3, size=n))
    perm = rng.permutation(n)
    base = build_neighborhoods(cloud)
    moved = build_neighborhoods(cloud.permuted(perm))
    inverse = np.argsort(perm)
    for new_i, old_i in enumerate(perm):
        assert sorted(perm[moved[new_i].members]) == list(base[old_i].members)
    assert len(inverse) == n


def test_resolution_metrics():
    nb = Neighborhood.from_offsets([[0.5], [-0.5]], 1.0)
    dx = resolution_metrics([nb])
    np.testing.assert_allclose(dx, [2.0 / 3.0])
    empty = Neighborhood(0, np.zeros(0, int), np.zeros((0, 2)), 1.0, np.zeros(2))
    assert np.isnan(resolution_metrics([empty], dim=2)[0])


def test_unisolvency_simple_cases():
    line = Neighborhood.from_offsets([[0.1, 0.0], [-0.1, 0.0], [0.05, 0.0], [0.2, 0.0]], 0.3)
    ok, rank = check_unisolvency(line, 1, True)
    assert not ok and rank == 2
    ok, _ = check_unisolvency(Neighborhood.from_offsets([[0.1], [-0.1]], 0.3), 2, True)
    assert ok
    ok, rank = check_unisolvency(Neighborhood.from_offsets([[0.1]], 0.3), 2, True)
    assert not ok and rank == 2


def _mp_rank(X, digits=50):
    """Rank of the Gram matrix in extended precision."""
    with mpmath.workdps(digits):
        G = mpmath.matrix(X.T.tolist()) * mpmath.matrix(X.tolist())
        _, s, _ = mpmath.svd_r(G)
        smax = max(abs(v) for v in s)
        return sum(1 for v in s if abs(v) > smax * mpmath.mpf(10) ** (-30))


@pytest.mark.parametrize("seed", range(4))
def test_unisolvency_rank_matches_extended_precision_oracle(seed):
    rng = np.random.default_rng(seed)
    offs = rng.uniform(-0.1, 0.1, size=(12, 2))
    if seed % 2:
        # three points on one line through the centre drop a quadratic
        offs[:] = np.outer(rng.uniform(-0.1, 0.1, 12), [1.0, 0.5])
    nb = Neighborhood.from_offsets(offs, 0.15)
    ok, rank = check_unisolvency(nb, 2, True)
    X = monomial_matrix(nb.offsets / nb.radius, multi_index_set(2, 2, True))
    assert rank == _mp_rank(X)
    assert ok == (rank == 6)


def test_cloud_validation():
    with pytest.raises(InvalidCloud):
        PointCloud(np.zeros((0, 2)), 0.1)
    with pytest.raises(InvalidCloud):
        PointCloud(np.array([[0.0, np.nan]]), 0.1)
    with pytest.raises(InvalidCloud):
        PointCloud(np.zeros((2, 4)), 0.1)
    with pytest.raises(InvalidCloud):
        PointCloud(np.array([[0.0], [1.0]]), -1.0)


def test_generators_are_seeded_and_bounded():
    a = jittered_grid(2, 0.1, 2.0, 0.2, make_rng(3))
    b = jittered_grid(2, 0.1, 2.0, 0.2, make_rng(3))
    np.testing.assert_array_equal(a.positions, b.positions)
    base = regular_grid(2, 0.1, 2.0)
    shift = np.abs(a.positions - base.positions)
    assert shift.max() <= 0.2 * 0.1 + 1e-15
    assert np.all(shift[base.boundary] == 0.0)
    r = random_cloud(2, 0.1, 2.0, make_rng(4))
    from scipy.spatial import cKDTree
    dist, _ = cKDTree(r.positions).query(r.positions, k=2)
    assert dist[:, 1].min() >= 0.3 * 0.1 - 1e-12
    assert r.n_points == base.n_points


def test_select_radii_uses_median_spacing():
    x = np.linspace(0, 1, 11)[:, None]
    np.testing.assert_allclose(select_radii(x, 2.0), 0.2)
    np.testing.assert_allclose(select_radii(x, 2.0, spacing=0.5), 1.0)


def test_cloud_file_roundtrip(tmp_path):
    cloud = jittered_grid(2, 0.25, 2.0, 0.1, make_rng(1))
    path = tmp_path / "pts.txt"
    write_cloud(path, cloud)
    back = read_cloud(path, dim=2)
    np.testing.assert_allclose(back.positions, cloud.positions, rtol=0, atol=0)
    np.testing.assert_allclose(back.radii, cloud.radii)
    with pytest.raises(InvalidCloud):
        read_cloud(path)  # three columns read as 3D coordinates without a radius
