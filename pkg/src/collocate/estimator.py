"""Scikit-learn style wrapper around operator assembly."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .assembly import assemble
from .cloud import PointCloud, build_neighborhoods, select_radii
from .methods import preset


class CollocationOperator(TransformerMixin, BaseEstimator):
    """Discrete differential operator learned from point positions.

    ``fit`` takes positions of shape ``(N, dim)`` and assembles the sparse
    operator; ``transform`` applies it to sampled fields of shape ``(N,)``
    or ``(N, k)`` (one column per field).

    Parameters
    ----------
    method : str
        Preset name.
    order : int
        Consistency order ``m``.
    op : str
        Operator, e.g. ``"d/dx"`` or ``"laplacian"``.
    ratio : float
        Support radius over the median nearest-neighbour spacing.
    radius : float, optional
        Fixed support radius; overrides ``ratio``.
    method_options : dict, optional
        Overrides passed to :func:`collocate.methods.preset`.

    Attributes
    ----------
    operator_ : GlobalOperator
    config_ : MethodConfig
    n_points_ : int

    Examples
    --------
    >>> import numpy as np
    >>> x = np.linspace(0.0, 1.0, 11)[:, None]
    >>> D = CollocationOperator("gfdm", order=2, op="d2/dx2", ratio=2.5).fit(x)
    >>> np.allclose(D.transform(x[:, 0] ** 2), 2.0)
    True
    """

    def __init__(self, method="gfdm", order=2, op="laplacian", ratio=2.5, radius=None,
                 method_options=None):
        self.method = method
        self.order = order
        self.op = op
        self.ratio = ratio
        self.radius = radius
        self.method_options = method_options

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        self.config_ = preset(self.method, X.shape[1], self.order, **(self.method_options or {}))
        radii = self.radius if self.radius is not None else select_radii(X, self.ratio)
        self.cloud_ = PointCloud(X, radii)
        self.neighborhoods_ = build_neighborhoods(self.cloud_)
        self.operator_ = assemble(self.config_, self.cloud_, self.op, self.neighborhoods_)
        self.n_points_ = X.shape[0]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Apply the operator to field samples aligned with the fitted points."""
        check_is_fitted(self, "operator_")
        U = check_array(X, dtype=float, ensure_2d=False, allow_nd=False)
        if U.shape[0] != self.n_points_:
            raise ValueError(f"expected {self.n_points_} samples, got {U.shape[0]}")
        out = self.operator_.matrix @ U
        offset = self.operator_.offset
        return out + (offset if U.ndim == 1 else offset[:, None])

    @property
    def matrix_(self):
        check_is_fitted(self, "operator_")
        return self.operator_.matrix
