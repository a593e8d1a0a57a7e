import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collocate.basis import (AbfFamily, RadialWindow, abf_matrix, basis_derivatives_at_origin,
                             eval_abf, eval_window, window_derivative, window_gradient,
                             window_values)
from collocate.cloud import Neighborhood
from collocate.errors import UnsupportedCombination
from collocate.indexing import monomial_matrix, multi_index_set

KINDS = ("gaussian", "wendland_c2", "cubic_spline", "constant")


def test_wendland_value_at_half_support():
    assert eval_window(RadialWindow("wendland_c2"), 0.05, 0.1) == pytest.approx(0.1875, abs=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_compact_support_and_positivity(kind):
    w = RadialWindow(kind)
    assert eval_window(w, 0.1, 0.1) == 0.0
    assert eval_window(w, 0.2, 0.1) == 0.0
    q = np.linspace(0, 0.999, 50)
    vals = eval_window(w, q * 0.1, 0.1)
    assert np.all(vals > 0)
    if kind == "constant":
        np.testing.assert_array_equal(vals, 1.0)


def test_cubic_spline_is_continuous_at_the_joint():
    w = RadialWindow("cubic_spline")
    lo, hi = eval_window(w, 0.5 - 1e-12, 1.0), eval_window(w, 0.5 + 1e-12, 1.0)
    assert lo == pytest.approx(0.25, abs=1e-10) and hi == pytest.approx(0.25, abs=1e-10)


@settings(deadline=None, max_examples=30)
@given(st.sampled_from(KINDS), st.lists(st.floats(-0.09, 0.09), min_size=2, max_size=2))
def test_window_is_symmetric(kind, x):
    w = RadialWindow(kind)
    d = np.array([x])
    assert window_values(w, d, 0.1)[0] == window_values(w, -d, 0.1)[0]


@pytest.mark.parametrize("kind", ["gaussian", "wendland_c2", "cubic_spline"])
def test_window_gradient_matches_finite_differences(kind):
    w = RadialWindow(kind)
    rng = np.random.default_rng(0)
    d = rng.uniform(-0.06, 0.06, size=(10, 2))
    g = window_gradient(w, d, 0.1)
    e = 1e-7
    for k in range(2):
        step = np.zeros(2)
        step[k] = e
        fd = (window_values(w, d + step, 0.1) - window_values(w, d - step, 0.1)) / (2 * e)
        np.testing.assert_allclose(g[:, k], fd, rtol=1e-5, atol=1e-4)


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("kind", ["gaussian", "wendland_c2"])
def test_rbf_derivatives_match_finite_differences(dim, kind):
    h = 0.2
    window = RadialWindow(kind)
    rng = np.random.default_rng(dim)
    d = rng.uniform(-0.6, 0.6, size=(6, dim)) * h / np.sqrt(dim)
    family = AbfFamily("rbf_derivatives", window, multi_index_set(dim, 3, True))
    W = abf_matrix(family, d, h)
    delta = 1e-5 * h
    for col, alpha in enumerate(family.index_set.indices):
        if sum(alpha) == 0:
            np.testing.assert_allclose(W[:, col], window_values(window, d, h))
            continue
        k = next(i for i, a in enumerate(alpha) if a)
        lower = tuple(a - (i == k) for i, a in enumerate(alpha))
        step = np.zeros(dim)
        step[k] = delta
        fd = (window_derivative(window, d + step, h, lower) -
              window_derivative(window, d - step, h, lower)) / (2 * delta)
        scale = np.abs(W[:, col]).max() + h ** -sum(alpha)
        np.testing.assert_allclose(W[:, col], fd, atol=1e-5 * scale)


def test_rbf_derivatives_refused_in_3d_beyond_order_four():
    with pytest.raises(UnsupportedCombination):
        AbfFamily("rbf_derivatives", RadialWindow(), multi_index_set(3, 5, False))
    AbfFamily("rbf_derivatives", RadialWindow(), multi_index_set(3, 4, False))


def test_abf_examples():
    s = multi_index_set(1, 2, False)
    const = RadialWindow("constant")
    nb = Neighborhood.from_offsets([[0.5]], 1.0)
    np.testing.assert_allclose(eval_abf(AbfFamily("taylor_monomials", const, s), nb, 1), [0.5, 0.125])
    gauss = RadialWindow("gaussian")
    nb = Neighborhood.from_offsets([[0.5]], 0.6)
    g = eval_window(gauss, 0.5, 0.6)
    # x/h = 0.5/0.6; the family is evaluated at d/h
    y = 0.5 / 0.6
    np.testing.assert_allclose(eval_abf(AbfFamily("scaled_taylor_monomials", gauss, s), nb, 1),
                               [y * g, y**2 / 2 * g])
    mid = AbfFamily("midpoint_monomials", const, multi_index_set(1, 1, False))
    np.testing.assert_allclose(eval_abf(mid, Neighborhood.from_offsets([[1.0]], 2.0), 1), [0.5])


def test_scaled_taylor_with_unit_ratio():
    # offset equal to h: X(d/h) = (1, 1/2) times the window value
    gauss = RadialWindow("gaussian")
    s = multi_index_set(1, 2, False)
    W = abf_matrix(AbfFamily("scaled_taylor_monomials", gauss, s), [[0.5]], 0.5 + 1e-12)
    g = float(window_values(gauss, [[0.5]], 0.5 + 1e-12)[0])
    np.testing.assert_allclose(W[0], [g, 0.5 * g], rtol=1e-10)


def test_constant_window_taylor_equals_monomials():
    s = multi_index_set(2, 3, True)
    d = np.random.default_rng(1).uniform(-0.05, 0.05, size=(9, 2))
    W = abf_matrix(AbfFamily("taylor_monomials", RadialWindow("constant"), s), d, 0.1)
    np.testing.assert_array_equal(W, monomial_matrix(d, s))


def test_extended_family_marks_the_centre():
    s = multi_index_set(1, 1, True)
    fam = AbfFamily("extended_taylor", RadialWindow("constant"), s)
    W = abf_matrix(fam, [[0.0], [0.3]], 1.0)
    np.testing.assert_allclose(W, [[1, 0, 1], [1, 0.3, 0]])
    assert fam.size == 3


@pytest.mark.parametrize("poly", ["legendre", "hermite"])
def test_orthogonal_basis_derivatives_at_origin(poly):
    h = 0.3
    s = multi_index_set(2, 3, True)
    fam = AbfFamily("orthogonal_polynomials", RadialWindow("constant"), s, poly)
    e = 1e-4
    for alpha in [(1, 0), (0, 1), (2, 0), (1, 1)]:
        got = basis_derivatives_at_origin(fam, h, alpha)
        # central differences of P(d/h) at the origin
        def P(x, y):
            return abf_matrix(fam, [[x, y]], h)[0]
        if alpha == (1, 0):
            fd = (P(e, 0) - P(-e, 0)) / (2 * e)
        elif alpha == (0, 1):
            fd = (P(0, e) - P(0, -e)) / (2 * e)
        elif alpha == (2, 0):
            fd = (P(e, 0) - 2 * P(0, 0) + P(-e, 0)) / e**2
        else:
            fd = (P(e, e) - P(e, -e) - P(-e, e) + P(-e, -e)) / (4 * e * e)
        np.testing.assert_allclose(got, fd, atol=1e-4 * max(1, np.abs(got).max()))
