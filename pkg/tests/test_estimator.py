import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from collocate import CollocationOperator


def test_params_roundtrip_and_clone():
    est = CollocationOperator(method="gmls", order=3, op="d/dx", ratio=3.0)
    params = est.get_params()
    assert params["method"] == "gmls" and params["order"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    assert not hasattr(twin, "operator_")


def test_transform_applies_operator():
    x = np.linspace(0.0, 1.0, 21)[:, None]
    est = CollocationOperator(method="gfdm", order=2, op="d2/dx2", ratio=2.5).fit(x)
    out = est.transform((3 * x[:, 0] ** 2 - x[:, 0])[:, None])
    np.testing.assert_allclose(out[:, 0], 6.0, rtol=1e-9)
    assert est.n_features_in_ == 1 and est.n_points_ == 21
    assert est.matrix_.shape == (21, 21)


def test_transform_needs_fit():
    with pytest.raises(NotFittedError):
        CollocationOperator().transform(np.zeros((3, 1)))


def test_fit_transform_two_dimensional():
    g = np.linspace(0, 1, 11)
    X = np.array([[a, b] for a in g for b in g])
    est = CollocationOperator(method="gfdm", order=2, op="laplacian", ratio=2.5)
    out = est.fit(X).transform(X[:, 0] ** 2 + X[:, 1] ** 2)
    np.testing.assert_allclose(out, 4.0, rtol=1e-9)
