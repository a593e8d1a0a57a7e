import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collocate.basis import AbfFamily, RadialWindow
from collocate.cloud import Neighborhood
from collocate.engines import (StencilWeights, aom_weights, direct_derivative_weights, gl2p_weights,
                               l2e_solve, l2e_weights, l2p_weights, moment_matrix, moment_residuals,
                               reconstruction_weights)
from collocate.errors import InvalidParams, SingularMoment, UnsupportedOrder
from collocate.indexing import mapping_vector, monomial_matrix, multi_index_set
from conftest import random_neighborhood

CONST = RadialWindow("constant")
WENDLAND = RadialWindow("wendland_c2")


def _pair(h):
    return Neighborhood.from_offsets([[-h], [h]], 1.5 * h)


def _rel(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)).max() / max(np.abs(b).max(), 1e-300)


def test_moment_matrix_symmetric_pair():
    h = 0.2
    fam = AbfFamily("taylor_monomials", CONST, multi_index_set(1, 2, False))
    np.testing.assert_allclose(moment_matrix(_pair(h), fam).entries,
                               [[2 * h**2, 0], [0, h**4 / 2]], atol=1e-17)
    np.testing.assert_allclose(moment_matrix(Neighborhood.from_offsets([[-h], [h]], h * (1 + 1e-9)),
                                             fam, precondition=True).entries,
                               [[2, 0], [0, 0.5]], rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("route", [aom_weights, l2p_weights, gl2p_weights, l2e_weights])
def test_symmetric_pair_classical_stencils(route):
    h = 0.1
    fam = AbfFamily("taylor_monomials", CONST, multi_index_set(1, 2, False))
    nb = _pair(h)
    sw = route(nb, fam, "d2/dx2")
    assert sw.form == "on_differences"
    np.testing.assert_allclose(np.delete(sw.weights, nb.self_slot), [1 / h**2, 1 / h**2], rtol=1e-12)
    cols, vals = sw.folded()
    x = nb.offsets[np.searchsorted(nb.members, cols), 0]
    np.testing.assert_allclose(vals[np.argsort(x)], [1 / h**2, -2 / h**2, 1 / h**2], rtol=1e-12)
    sw = route(nb, fam, "d/dx")
    np.testing.assert_allclose(np.delete(sw.weights, nb.self_slot), [-1 / (2 * h), 1 / (2 * h)],
                               rtol=1e-12)


def test_first_order_least_squares_central_difference():
    h = 0.25
    sol = l2e_solve(_pair(h), AbfFamily("taylor_monomials", CONST, multi_index_set(1, 1, False)))
    u = np.array([2.0, 1.0, 4.0])  # members are ordered 0, -h, +h
    np.testing.assert_allclose(sol.derivatives(u), [(4.0 - 1.0) / (2 * h)])


def _poly_check(sw, nb, iset, op):
    X = monomial_matrix(nb.offsets, iset)
    cols, w = sw.folded()
    loc = np.searchsorted(nb.members, cols)
    got = w @ X[loc] + sw.affine
    want = mapping_vector(op, iset).values
    scale = np.abs(w).sum() * np.abs(X).max()
    return np.abs(got - want).max() / scale


ROUTES = [
    ("aom", lambda nb, fam, op: aom_weights(nb, fam, op)),
    ("aom_pre", lambda nb, fam, op: aom_weights(nb, fam, op, precondition=True)),
    ("l2e", l2e_weights),
    ("l2p", l2p_weights),
    ("gl2p", lambda nb, fam, op: gl2p_weights(nb, fam.with_index_set(fam.index_set.with_zeroth(False)), op)),
]


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([1, 2]), order=st.integers(1, 4),
       route=st.sampled_from(ROUTES), zeroth=st.booleans())
def test_routes_reproduce_polynomials(seed, dim, order, route, zeroth):
    rng = np.random.default_rng(seed)
    nb = random_neighborhood(rng, dim, order)
    fam = AbfFamily("taylor_monomials", WENDLAND, multi_index_set(dim, order, zeroth))
    op = "d/dx" if order < 2 else "laplacian"
    sw = route[1](nb, fam, op)
    iset = multi_index_set(dim, order, True)
    assert _poly_check(sw, nb, iset, op) <= 1e-9 * max(1.0, sw.cond / 1e6)


FAMILIES = [
    ("taylor_monomials", "wendland_c2", "legendre"),
    ("scaled_taylor_monomials", "gaussian", "legendre"),
    ("orthogonal_polynomials", "wendland_c2", "legendre"),
    ("orthogonal_polynomials", "cubic_spline", "hermite"),
    ("rbf_derivatives", "wendland_c2", "legendre"),
]


@settings(deadline=None, max_examples=60)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([1, 2]), order=st.integers(1, 4),
       fam=st.sampled_from(FAMILIES))
def test_gl2p_equals_aom_without_zeroth(seed, dim, order, fam):
    rng = np.random.default_rng(seed)
    nb = random_neighborhood(rng, dim, order)
    family = AbfFamily(fam[0], RadialWindow(fam[1]), multi_index_set(dim, order, False), fam[2])
    op = [(tuple(rng.integers(0, 2, size=dim) if order > 1 else np.eye(dim, dtype=int)[0]), 1.0)]
    if sum(op[0][0]) == 0:
        op = "d/dx"
    a = gl2p_weights(nb, family, op, precondition=False)
    b = aom_weights(nb, family, op)
    assert _rel(a.weights, b.weights) <= 1e-12 * max(1.0, b.cond / 1e4)


@settings(deadline=None, max_examples=60)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([1, 2]), order=st.integers(1, 4),
       zeroth=st.booleans(), window=st.sampled_from(["wendland_c2", "gaussian", "cubic_spline"]))
def test_weight_and_error_minimisation_agree(seed, dim, order, zeroth, window):
    rng = np.random.default_rng(seed)
    nb = random_neighborhood(rng, dim, order)
    fam = AbfFamily("taylor_monomials", RadialWindow(window), multi_index_set(dim, order, zeroth))
    op = "d/dx" if order == 1 else "laplacian"
    p = l2p_weights(nb, fam, op)
    e = l2e_weights(nb, fam, op)
    a = aom_weights(nb, fam, op)
    assert _rel(p.weights, e.weights) <= 1e-12 * max(1.0, p.cond / 1e4)
    assert _rel(a.weights, p.weights) <= 1e-12 * max(1.0, a.cond / 1e4)


def test_constant_window_least_squares_equals_aom(rng):
    nb = random_neighborhood(rng, 2, 2)
    fam = AbfFamily("taylor_monomials", CONST, multi_index_set(2, 2, True))
    assert _rel(l2e_weights(nb, fam, "laplacian").weights, aom_weights(nb, fam, "laplacian").weights) < 1e-13


@pytest.mark.parametrize("order", [1, 2, 3])
def test_preconditioning_keeps_weights(order, rng):
    nb = random_neighborhood(rng, 2, order, radius=0.05)
    fam = AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, order, True))
    a = aom_weights(nb, fam, "d/dx")
    b = aom_weights(nb, fam, "d/dx", precondition=True)
    assert _rel(b.weights, a.weights) <= 1e-10
    raw = moment_matrix(nb, fam).cond_estimate
    pre = moment_matrix(nb, fam, precondition=True).cond_estimate
    assert pre <= raw


def test_least_squares_moment_matrix_is_exactly_symmetric(rng):
    for _ in range(5):
        nb = random_neighborhood(rng, 2, 3)
        M = moment_matrix(nb, AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, 3, True)),
                          symmetric=True).entries
        assert np.array_equal(M, M.T)


@settings(deadline=None, max_examples=30)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(-1e3, 1e3))
def test_difference_stencils_annihilate_constants(seed, c):
    rng = np.random.default_rng(seed)
    nb = random_neighborhood(rng, 2, 2)
    sw = l2p_weights(nb, AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, 2, False)), "d/dx")
    u = np.full(nb.members.max() + 1, c)
    assert sw.apply(u) == 0.0


def test_collinear_neighborhood_is_singular():
    nb = Neighborhood.from_offsets([[0.1 * k, 0.0] for k in (-2, -1, 1, 2, 3)], 0.5)
    fam = AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, 1, True))
    for route in (aom_weights, l2p_weights, l2e_weights):
        with pytest.raises(SingularMoment):
            route(nb, fam, "d/dx")
    with pytest.raises(SingularMoment):
        gl2p_weights(nb, fam.with_index_set(multi_index_set(2, 1, False)), "d/dx")


def test_consistent_rank_policy_accepts_resolvable_operator():
    # y-derivatives cannot be resolved on a line, d/dx can
    nb = Neighborhood.from_offsets([[0.1 * k, 0.0] for k in (-2, -1, 1, 2)], 0.5)
    fam = AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, 1, False))
    sw = aom_weights(nb, fam, "d/dx", rank_policy="consistent")
    x = nb.offsets[:, 0]
    assert sw.weights @ x == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(SingularMoment):
        aom_weights(nb, fam, "d/dy", rank_policy="consistent")
    with pytest.raises(InvalidParams):
        aom_weights(nb, fam, "d/dx", rank_policy="lenient")


def test_moment_residuals_of_zero_weights():
    nb = Neighborhood.from_offsets([[0.1], [-0.1]], 0.2)
    s = multi_index_set(1, 2, False)
    np.testing.assert_array_equal(moment_residuals(nb, np.zeros(3), "d/dx", s), [-1, 0])


def _fd_reconstruction_derivative(nb, window, iset, k, delta):
    step = np.zeros(nb.dim)
    step[k] = delta
    plus = reconstruction_weights(nb, window, iset, at=nb.center_position + step)
    minus = reconstruction_weights(nb, window, iset, at=nb.center_position - step)
    return (plus - minus) / (2 * delta)


@pytest.mark.parametrize("dim,order", [(1, 1), (1, 3), (2, 1), (2, 2), (2, 3)])
def test_direct_derivatives_match_reconstruction_differences(dim, order, rng):
    nb = random_neighborhood(rng, dim, order, radius=0.2, center=np.full(dim, 0.3))
    iset = multi_index_set(dim, order, True)
    for k, op in enumerate(["d/dx", "d/dy"][:dim]):
        sw = direct_derivative_weights(nb, WENDLAND, iset, op)
        fd = _fd_reconstruction_derivative(nb, WENDLAND, iset, k, 1e-6 * nb.radius)
        assert _rel(sw.weights, fd) <= 1e-4


def test_direct_derivative_consistency(rng):
    nb = random_neighborhood(rng, 2, 2, radius=0.2)
    iset = multi_index_set(2, 2, True)
    sw = direct_derivative_weights(nb, WENDLAND, iset, "d/dx")
    assert abs(sw.weights.sum()) < 1e-10 * np.abs(sw.weights).sum()
    assert sw.weights @ nb.offsets[:, 0] == pytest.approx(1.0, abs=1e-10)
    recon = reconstruction_weights(nb, WENDLAND, iset)
    assert recon.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UnsupportedOrder):
        direct_derivative_weights(nb, WENDLAND, iset, "laplacian")


def test_stencil_json_keys(rng):
    nb = random_neighborhood(rng, 2, 1)
    sw = l2p_weights(nb, AbfFamily("taylor_monomials", WENDLAND, multi_index_set(2, 1, True)), "d/dx")
    data = json.loads(sw.to_json())
    assert list(data) == ["i", "neighbors", "weights", "form", "route", "cond", "moment_residual_inf"]
    assert data["moment_residual_inf"] < 1e-12
    with pytest.raises(ValueError):
        StencilWeights(0, np.array([0]), np.array([1.0]), "weird", "aom")


def test_signed_form_folding():
    sw = StencilWeights(1, np.array([0, 1, 2]), np.array([1.0, 0.0, 2.0]), "dcpse_signed", "aom",
                        center_sign=-1.0)
    cols, vals = sw.folded()
    np.testing.assert_array_equal(vals[np.argsort(cols)], [1.0, -3.0, 2.0])
