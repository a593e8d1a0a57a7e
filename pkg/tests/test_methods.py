import numpy as np
import pytest

from collocate.basis import AbfFamily, RadialWindow
from collocate.cloud import (Neighborhood, build_neighborhoods, jittered_grid, make_rng,
                             regular_grid)
from collocate.engines import aom_weights, l2e_weights
from collocate.errors import InvalidParams, UnknownMethod
from collocate.indexing import mapping_vector, monomial_matrix, multi_index_set
from collocate.methods import (METHOD_NAMES, METHOD_TABLE, cmls_weights, dcpse_weights,
                               fpsm_weights, kmm_midpoint_weights, kmm_weights, ldd_gradient,
                               ldd_laplacian, lskum_weights, method_weights, mfdm_extrapolate,
                               mfdm_split, mmls_weights, preset)
from conftest import random_neighborhood

WENDLAND = RadialWindow("wendland_c2")


def _ordered(nb, w):
    """Weights sorted by the first offset coordinate."""
    return np.asarray(w)[np.argsort(nb.offsets[:, 0])]


def _cross(h, radius=None):
    d = [[0, 0], [h, 0], [-h, 0], [0, h], [0, -h]]
    return Neighborhood.from_offsets(d, radius or 1.2 * h)


def _grid9(h):
    d = [[a * h, b * h] for a in (-1, 0, 1) for b in (-1, 0, 1)]
    return Neighborhood.from_offsets(d, 1.5 * h)


@pytest.mark.parametrize("name", METHOD_NAMES)
def test_presets_validate_against_table(name):
    cfg = preset(name, dim=2, order=2)
    row = METHOD_TABLE[name]
    assert cfg.basis_kind in row.bases
    assert cfg.include_zeroth is None or cfg.include_zeroth in row.zeroth


def test_preset_rejections():
    with pytest.raises(UnknownMethod):
        preset("not-a-method")
    with pytest.raises(InvalidParams):
        preset("gfdm", basis_kind="rbf_derivatives")
    with pytest.raises(InvalidParams):
        preset("grkp", order=2, grkp_l=2)
    with pytest.raises(InvalidParams):
        preset("grkp", order=3, grkp_l=1, include_zeroth=True)
    with pytest.raises(InvalidParams):
        preset("mfdm", order=4, mfdm_L=1)
    with pytest.raises(InvalidParams):
        preset("mmls", mu=0.0)
    with pytest.raises(InvalidParams):
        preset("gfdm", rank_policy="lenient")
    with pytest.raises(InvalidParams):
        preset("gfdm", route="aom")
    with pytest.raises(InvalidParams):
        preset("gfdm", colour="blue")


def test_grkp_zeroth_follows_l():
    assert preset("grkp", order=3, grkp_l=0).include_zeroth is True
    assert preset("grkp", order=3, grkp_l=1).include_zeroth is False


@pytest.mark.parametrize("op", ["d/dx", "d2/dx2", "laplacian", "d2/dxdy"])
def test_dcpse_matches_aom_with_same_basis(rng, op):
    nb = random_neighborhood(rng, 2, 3)
    sw = dcpse_weights(nb, op, 3)
    even = op != "d/dx"
    fam = AbfFamily("scaled_taylor_monomials", RadialWindow("gaussian"),
                    multi_index_set(2, 3, even))
    ref = aom_weights(nb, fam, op, precondition=True)
    np.testing.assert_allclose(sw.weights, ref.weights, rtol=1e-12, atol=1e-12 * np.abs(ref.weights).max())
    assert sw.form == "dcpse_signed"
    assert sw.center_sign == (1.0 if even else -1.0)
    u = rng.normal(size=nb.members.max() + 1)
    cols, vals = ref.folded()
    assert np.isclose(sw.apply(u), vals @ u[cols], rtol=1e-10)


def test_dcpse_mixed_parity_raises(rng):
    nb = random_neighborhood(rng, 2, 2)
    with pytest.raises(InvalidParams):
        dcpse_weights(nb, [((1, 0), 1.0), ((2, 0), 1.0)], 2)


def test_mmls_small_mu_close_to_plain(rng):
    cloud = jittered_grid(2, 0.05, 2.5, 0.2, make_rng(3))
    nbhds = build_neighborhoods(cloud)
    fam = AbfFamily("scaled_taylor_monomials", WENDLAND, multi_index_set(2, 2, True))
    for i in np.flatnonzero(~cloud.boundary)[::9]:
        plain = l2e_weights(nbhds[i], fam, "d/dx").weights
        reg = mmls_weights(nbhds[i], fam, "d/dx", 1e-7).weights
        assert np.linalg.norm(reg - plain) <= 1e-5 * np.linalg.norm(plain)
        exact = mmls_weights(nbhds[i], fam, "d/dx", 0.0).weights
        np.testing.assert_allclose(exact, plain, rtol=1e-9, atol=1e-10 * np.abs(plain).max())


def test_mmls_rank_deficient_leading_order():
    # the cross cannot resolve x*y, yet the regularised system is solvable
    h = 0.1
    nb = _cross(h)
    fam = AbfFamily("scaled_taylor_monomials", WENDLAND, multi_index_set(2, 2, True))
    sw = mmls_weights(nb, fam, "d/dx", 1e-7)
    x = nb.offsets
    for u, want in ((np.ones(5), 0.0), (x[:, 0], 1.0), (x[:, 1], 0.0)):
        assert abs(sw.weights @ u - want) < 1e-9


def test_mmls_large_mu_drops_leading_terms(rng):
    nb = random_neighborhood(rng, 2, 3)
    fam = AbfFamily("scaled_taylor_monomials", WENDLAND, multi_index_set(2, 3, True))
    big = mmls_weights(nb, fam, "d/dx", 1e12)
    low = l2e_weights(nb, AbfFamily("scaled_taylor_monomials", WENDLAND, multi_index_set(2, 2, True)),
                      "d/dx")
    lead = multi_index_set(2, 3, True).degrees == 3
    assert np.abs(big.coefficients[lead]).max() < 1e-9 * np.abs(big.coefficients).max()
    np.testing.assert_allclose(big.weights, low.weights, rtol=1e-6, atol=1e-8 * np.abs(low.weights).max())


def test_cmls_without_penalties_is_gmls(rng):
    nb = random_neighborhood(rng, 2, 2)
    iset = multi_index_set(2, 2, True)
    sw = cmls_weights(nb, AbfFamily("taylor_monomials", WENDLAND, iset), "laplacian")
    ref = l2e_weights(nb, AbfFamily("scaled_taylor_monomials", WENDLAND, iset), "laplacian")
    np.testing.assert_allclose(sw.weights, ref.weights, rtol=1e-9, atol=1e-10 * np.abs(ref.weights).max())
    assert sw.affine == 0.0


def test_cmls_boundary_constraint_exact(rng):
    nb = random_neighborhood(rng, 2, 2)
    fam = AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, 2, True))
    g0 = 0.731
    sw = cmls_weights(nb, fam, [((0, 0), 1.0)], eps_omega=0.5, constrain_center=True, g_center=g0,
                      f=np.zeros(nb.size))
    for _ in range(3):
        u = rng.normal(size=nb.members.max() + 1)
        assert abs(sw.apply(u) - g0) <= 1e-10


def test_cmls_penalised_is_consistent(rng):
    nb = random_neighborhood(rng, 2, 2)
    fam = AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, 2, True))
    x = nb.offsets
    u = 1 + x[:, 0] + 3 * x[:, 0] ** 2 + x[:, 1] ** 2
    f = np.full(nb.size, 8.0)
    sw = cmls_weights(nb, fam, "laplacian", eps_omega=2.0, f=f)
    assert sw.moment_residual_inf < 1e-10
    assert abs(sw.weights @ u + sw.affine - 8.0) < 1e-8


@pytest.mark.parametrize("eps", [0.0, 0.3, 1.0, 7.5])
def test_fpsm_centre_weight(rng, eps):
    nb = random_neighborhood(rng, 2, 2)
    sw = fpsm_weights(nb, WENDLAND, multi_index_set(2, 2, True), "laplacian", eps)
    h = nb.radius
    scale = max(eps / h**2, np.abs(sw.weights).max())
    assert abs(sw.weights[nb.self_slot] + eps / h**2) <= 1e-12 * scale
    assert sw.moment_residual_inf < 1e-10


def test_lskum_and_kmm_require_difference_form(rng):
    nb = random_neighborhood(rng, 1, 1)
    with pytest.raises(InvalidParams):
        lskum_weights(nb, WENDLAND, multi_index_set(1, 1, True), "d/dx", (0, 1.0))
    with pytest.raises(InvalidParams):
        kmm_midpoint_weights(nb, WENDLAND, multi_index_set(1, 1, True), "d/dx")


def test_lskum_forward_difference():
    h = 0.1
    nb = Neighborhood.from_offsets([[0.0], [-h], [h]], 1.5 * h)
    sw = lskum_weights(nb, RadialWindow("constant"), multi_index_set(1, 1, False), "d/dx", (0, 1.0))
    np.testing.assert_allclose(_ordered(nb, sw.weights), [0.0, 0.0, 1 / h])
    assert sw.weights[np.argmin(nb.offsets[:, 0])] == 0.0


def test_kmm_zero_velocity_gives_zero(rng):
    nb = random_neighborhood(rng, 2, 1)
    sw = kmm_weights(nb, WENDLAND, multi_index_set(2, 1, False), "d/dx", [0.0, 0.0])
    assert np.all(sw.weights == 0.0)


def test_kmm_full_selection_is_midpoint_stencil(rng):
    nb = random_neighborhood(rng, 2, 2)
    iset = multi_index_set(2, 2, False)
    w_mid = kmm_midpoint_weights(nb, WENDLAND, iset, "d/dx")
    # halved offsets with the midpoint X reproduce the operator exactly
    X = monomial_matrix(0.5 * nb.offsets, iset)
    np.testing.assert_allclose(X.T @ w_mid, mapping_vector("d/dx", iset).values, atol=1e-9)
    sw = kmm_weights(nb, WENDLAND, iset, "d/dx", [1.0, 0.0])
    np.testing.assert_array_equal(sw.extra["midpoint_weights"], w_mid)
    up = nb.offsets[:, 0] < 0
    np.testing.assert_array_equal(sw.weights[up], w_mid[up])
    assert np.all(sw.weights[~up] == 0.0)


def test_mfdm_split_rule():
    assert mfdm_split((4,), 2) == ((2,), (2,))
    assert mfdm_split((3,), 2) == ((2,), (1,))
    t, s = mfdm_split((2, 1), 2)
    assert sum(t) == 2 and tuple(a + b for a, b in zip(t, s)) == (2, 1)
    with pytest.raises(InvalidParams):
        mfdm_split((5,), 2)


def _line(h, n=30):
    cloud = regular_grid(1, h, 2.5, upper=n * h)
    return cloud, build_neighborhoods(cloud)


def test_mfdm_without_sweeps_is_low_order_fit():
    cloud, nbhds = _line(0.1)
    u = np.sin(cloud.positions[:, 0])
    res = mfdm_extrapolate(nbhds, u, 2, 4, iters=0)
    fam = AbfFamily("taylor_monomials", WENDLAND, multi_index_set(1, 2, False))
    for i in (3, 12, 25):
        sw = l2e_weights(nbhds[i], fam, "d2/dx2")
        assert np.isclose(res.apply("d2/dx2")[i], sw.apply(u), rtol=1e-10, atol=1e-10)
    np.testing.assert_array_equal(res.derivatives, res.initial)


def test_mfdm_quadratic_needs_no_correction():
    cloud, nbhds = _line(0.1)
    x = cloud.positions[:, 0]
    res = mfdm_extrapolate(nbhds, 1 + 2 * x - 3 * x**2, 2, 4, iters=3)
    assert max(res.increments) < 1e-8
    np.testing.assert_allclose(res.apply("d2/dx2"), -6.0, atol=1e-7)


def test_ldd_gradient_central_and_cross():
    h = 0.2
    nb = Neighborhood.from_offsets([[0.0], [-h], [h]], 1.5 * h)
    np.testing.assert_allclose(_ordered(nb, ldd_gradient(nb)[0]), [-1 / (2 * h), 0, 1 / (2 * h)])
    nb = _cross(h)
    G = ldd_gradient(nb)
    x = nb.offsets
    np.testing.assert_allclose(G @ x, np.eye(2), atol=1e-12)


def test_ldd_sum_variant_on_cross_is_five_point():
    h = 0.1
    nb = _cross(h)
    sw = ldd_laplacian(nb, variant="sum")
    rest = np.delete(sw.weights, nb.self_slot)
    np.testing.assert_allclose(rest, np.full(4, 1 / h**2), rtol=1e-12)
    cols, vals = sw.folded()
    assert np.isclose(vals[cols == nb.center][0], -4 / h**2, rtol=1e-12)


@pytest.mark.parametrize("variant", ["naive", "sum", "ls_full", "ls_basic"])
def test_ldd_variants_on_quadratic(variant):
    nb = _grid9(0.1)
    sw = ldd_laplacian(nb, variant=variant)
    x = nb.offsets
    u = np.zeros(nb.members.max() + 1)
    u[nb.members] = (x**2).sum(axis=1)
    assert np.isclose(sw.apply(u), 4.0, rtol=1e-10)


def test_ldd_preset_rejects_other_operators():
    cfg = preset("ldd", dim=2, order=2)
    with pytest.raises(InvalidParams):
        method_weights(cfg, _grid9(0.1), "d2/dx2")
    sw = method_weights(cfg, _grid9(0.1), "d/dy")
    assert sw.form == "on_differences"
