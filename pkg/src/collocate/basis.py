"""Radial windows and the anisotropic basis function (ABF) families ``W_ji``.

Window formulas, with ``q = r / h``:

==============  ===========================================================
kind            ``phi(q)`` for ``q < 1`` (zero otherwise)
==============  ===========================================================
gaussian        ``exp(-q**2 / sigma**2)``, ``sigma = 0.3`` by default
wendland_c2     ``(1 - q)**4 * (4 q + 1)``
cubic_spline    ``1 - 6 q**2 + 6 q**3`` for ``q < 1/2``, ``2 (1 - q)**3`` after
constant        ``1``
==============  ===========================================================

ABF families build one vector per neighbour offset ``d = x_j - x_i``:

* ``taylor_monomials``: ``X(d) phi``
* ``scaled_taylor_monomials``: ``X(d / h) phi``
* ``orthogonal_polynomials``: tensor Legendre or probabilists' Hermite
  polynomials of ``d / h`` times ``phi``
* ``rbf_derivatives``: ``d^alpha phi`` evaluated at ``d``
* ``midpoint_monomials``: ``X(d / 2) phi``
* ``extended_taylor``: ``[X(d), delta_ji] phi``
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy

from .errors import UnsupportedCombination
from .indexing import MultiIndexSet, monomial_derivative_matrix, monomial_matrix

__all__ = [
    "WINDOW_KINDS",
    "ABF_KINDS",
    "RadialWindow",
    "AbfFamily",
    "eval_window",
    "eval_abf",
    "abf_matrix",
    "window_values",
    "window_gradient",
    "window_derivative",
    "basis_derivatives_at_origin",
]

WINDOW_KINDS = ("gaussian", "wendland_c2", "cubic_spline", "constant")
ABF_KINDS = (
    "taylor_monomials",
    "scaled_taylor_monomials",
    "orthogonal_polynomials",
    "rbf_derivatives",
    "midpoint_monomials",
    "extended_taylor",
)
# families that span the polynomials of degree <= m and can serve as a
# least-squares basis
POLYNOMIAL_KINDS = ("taylor_monomials", "scaled_taylor_monomials", "orthogonal_polynomials",
                    "midpoint_monomials")


@dataclass(frozen=True)
class RadialWindow:
    """Compactly supported radial window ``phi(r / h)``.

    Parameters
    ----------
    kind : str
        One of ``WINDOW_KINDS``.
    sigma : float
        Width of the Gaussian relative to ``h``; ignored by other kinds.
    """

    kind: str = "wendland_c2"
    sigma: float = 0.3

    def __post_init__(self):
        if self.kind not in WINDOW_KINDS:
            raise ValueError(f"unknown window kind {self.kind!r}; expected one of {WINDOW_KINDS}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def profile(self, q):
        """``phi`` as a function of ``q = r / h``."""
        q = np.asarray(q, dtype=float)
        inside = q < 1.0
        qc = np.where(inside, q, 1.0)
        if self.kind == "gaussian":
            val = np.exp(-(qc**2) / self.sigma**2)
        elif self.kind == "wendland_c2":
            val = (1.0 - qc) ** 4 * (4.0 * qc + 1.0)
        elif self.kind == "cubic_spline":
            val = np.where(qc < 0.5, 1.0 - 6.0 * qc**2 + 6.0 * qc**3, 2.0 * (1.0 - qc) ** 3)
        else:
            val = np.ones_like(qc)
        return np.where(inside, val, 0.0)

    def profile_slope_over_q(self, q):
        """``phi'(q) / q``, finite at ``q = 0`` for every kind."""
        q = np.asarray(q, dtype=float)
        inside = q < 1.0
        qc = np.where(inside, q, 1.0)
        if self.kind == "gaussian":
            val = -2.0 / self.sigma**2 * np.exp(-(qc**2) / self.sigma**2)
        elif self.kind == "wendland_c2":
            val = -20.0 * (1.0 - qc) ** 3
        elif self.kind == "cubic_spline":
            val = np.where(qc < 0.5, -12.0 + 18.0 * qc,
                           -6.0 * (1.0 - qc) ** 2 / np.maximum(qc, 0.5))
        else:
            val = np.zeros_like(qc)
        return np.where(inside, val, 0.0)


def eval_window(window: RadialWindow, r, h: float):
    """Window value ``phi(r / h)``; exactly zero for ``r >= h``."""
    if not h > 0:
        raise ValueError("support radius must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    out = window.profile(r / h)
    return float(out) if out.ndim == 0 else out


def window_values(window: RadialWindow, offsets, h: float) -> np.ndarray:
    d = np.atleast_2d(np.asarray(offsets, dtype=float))
    return window.profile(np.sqrt((d**2).sum(axis=1)) / h)


def window_gradient(window: RadialWindow, offsets, h: float) -> np.ndarray:
    """Gradient of ``phi(||d|| / h)`` with respect to the offset ``d``.

    Returns
    -------
    ndarray, shape (N, dim)
    """
    d = np.atleast_2d(np.asarray(offsets, dtype=float))
    q = np.sqrt((d**2).sum(axis=1)) / h
    return window.profile_slope_over_q(q)[:, None] * d / h**2


@lru_cache(maxsize=None)
def _symbolic_window(kind: str, sigma: float, dim: int):
    y = sympy.symbols(f"y0:{dim}", real=True)
    s = sum(v**2 for v in y)
    r = sympy.sqrt(s)
    rs = sympy.Symbol("r", nonnegative=True)
    if kind == "gaussian":
        return y, [(sympy.exp(-s / sympy.Float(sigma) ** 2), None)], None
    if kind == "constant":
        return y, [(sympy.Integer(1), None)], None
    if kind == "wendland_c2":
        pieces = [((1 - rs) ** 4 * (4 * rs + 1), None)]
    else:
        pieces = [(1 - 6 * rs**2 + 6 * rs**3, sympy.Rational(1, 2)), (2 * (1 - rs) ** 3, None)]
    # even powers of r give a polynomial in y; their derivatives at the
    # origin define the centre values, odd powers are taken to contribute 0
    inner = sympy.Poly(sympy.expand(pieces[0][0]), rs)
    even = sum(c * s ** (k[0] // 2) for k, c in zip(inner.monoms(), inner.coeffs()) if k[0] % 2 == 0)
    exprs = [(e.subs(rs, r), bound) for e, bound in pieces]
    return y, exprs, even


@lru_cache(maxsize=None)
def _window_derivative_funcs(kind: str, sigma: float, alpha: tuple):
    dim = len(alpha)
    y, pieces, even = _symbolic_window(kind, sigma, dim)
    vars_ = [v for v, a in zip(y, alpha) for _ in range(a)]
    funcs = []
    for expr, bound in pieces:
        der = sympy.diff(expr, *vars_) if vars_ else expr
        # in 1D the radius is |y|; its delta terms live at the origin only
        der = der.replace(lambda e: isinstance(e, sympy.DiracDelta), lambda e: sympy.Integer(0))
        funcs.append((sympy.lambdify(y, der, "numpy"), bound))
    if even is None:
        der0 = sympy.diff(pieces[0][0], *vars_) if vars_ else pieces[0][0]
    else:
        der0 = sympy.diff(even, *vars_) if vars_ else even
    origin = float(der0.subs({v: 0 for v in y}))
    return funcs, origin


def window_derivative(window: RadialWindow, offsets, h: float, alpha) -> np.ndarray:
    """Analytic ``d^alpha phi(||d|| / h)`` with respect to the offset ``d``."""
    alpha = tuple(int(a) for a in alpha)
    d = np.atleast_2d(np.asarray(offsets, dtype=float))
    y = d / h
    q = np.sqrt((y**2).sum(axis=1))
    funcs, origin = _window_derivative_funcs(window.kind, float(window.sigma), alpha)
    out = np.zeros(d.shape[0])
    inside = (q < 1.0) & (q > 0.0)
    lo = 0.0
    for func, bound in funcs:
        hi = 1.0 if bound is None else float(bound)
        sel = inside & (q >= lo) & (q < hi)
        if sel.any():
            vals = func(*[y[sel, k] for k in range(d.shape[1])])
            out[sel] = np.broadcast_to(np.asarray(vals, dtype=float), (int(sel.sum()),))
        lo = hi
    out[q == 0.0] = origin
    return out * float(h) ** (-sum(alpha))


@dataclass(frozen=True)
class AbfFamily:
    """Basis family used to build ``W_ji``.

    Parameters
    ----------
    kind : str
        One of ``ABF_KINDS``.
    window : RadialWindow
    index_set : MultiIndexSet
    polynomial : {"legendre", "hermite"}
        Orthogonal family, used when ``kind == "orthogonal_polynomials"``.
    """

    kind: str
    window: RadialWindow
    index_set: MultiIndexSet
    polynomial: str = "legendre"

    def __post_init__(self):
        if self.kind not in ABF_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}; expected one of {ABF_KINDS}")
        if self.polynomial not in ("legendre", "hermite"):
            raise ValueError("polynomial must be 'legendre' or 'hermite'")
        if self.kind == "rbf_derivatives" and self.index_set.dim == 3 and self.index_set.order > 4:
            raise UnsupportedCombination("rbf_derivatives are not supported beyond order 4 in 3D")

    @property
    def size(self) -> int:
        return self.index_set.p + (1 if self.kind == "extended_taylor" else 0)

    @property
    def is_polynomial(self) -> bool:
        return self.kind in POLYNOMIAL_KINDS

    def with_index_set(self, index_set: MultiIndexSet) -> "AbfFamily":
        return AbfFamily(self.kind, self.window, index_set, self.polynomial)


def _orthogonal_matrix(y, index_set: MultiIndexSet, polynomial: str) -> np.ndarray:
    vander = np.polynomial.legendre.legvander if polynomial == "legendre" else \
        np.polynomial.hermite_e.hermevander
    alpha = index_set.array
    out = np.ones((y.shape[0], index_set.p))
    for k in range(index_set.dim):
        out *= vander(y[:, k], index_set.order)[:, alpha[:, k]]
    return out


def abf_matrix(family: AbfFamily, offsets, h: float, self_mask=None) -> np.ndarray:
    """``W_ji`` for a batch of offsets, one row per neighbour.

    Parameters
    ----------
    family : AbfFamily
    offsets : array_like, shape (N, dim)
    h : float
        Support radius of the centre.
    self_mask : array_like of bool, optional
        Marks the centre row; only used by ``extended_taylor``.  Defaults to
        rows with a zero offset.

    Returns
    -------
    ndarray, shape (N, p) or (N, p + 1)
    """
    d = np.atleast_2d(np.asarray(offsets, dtype=float))
    iset = family.index_set
    phi = window_values(family.window, d, h)
    kind = family.kind
    if kind == "taylor_monomials":
        base = monomial_matrix(d, iset)
    elif kind == "scaled_taylor_monomials":
        base = monomial_matrix(d / h, iset)
    elif kind == "midpoint_monomials":
        base = monomial_matrix(0.5 * d, iset)
    elif kind == "orthogonal_polynomials":
        base = _orthogonal_matrix(d / h, iset, family.polynomial)
    elif kind == "extended_taylor":
        if self_mask is None:
            self_mask = np.all(d == 0.0, axis=1)
        base = np.hstack([monomial_matrix(d, iset), np.asarray(self_mask, float)[:, None]])
    else:
        cols = [window_derivative(family.window, d, h, alpha) for alpha in iset.indices]
        return np.stack(cols, axis=1)
    return base * phi[:, None]


def eval_abf(family: AbfFamily, nbhd, j: int) -> np.ndarray:
    """ABF vector ``W_ji`` of member ``j`` (a global index) of ``nbhd``."""
    slot = np.flatnonzero(nbhd.members == j)
    if slot.size == 0:
        raise ValueError(f"point {j} is not a member of the neighbourhood of {nbhd.center}")
    d = nbhd.offsets[slot[0]][None, :]
    return abf_matrix(family, d, nbhd.radius, self_mask=[j == nbhd.center])[0]


def basis_derivatives_at_origin(family: AbfFamily, h: float, alpha) -> np.ndarray:
    """``d^alpha`` of every polynomial basis function at zero offset.

    Only defined for polynomial families; returns the vector that maps the
    least-squares coefficients onto the derivative ``d^alpha`` at the centre.
    """
    iset = family.index_set
    alpha = np.asarray(alpha, dtype=int)
    kind = family.kind
    if kind == "taylor_monomials":
        scale = 1.0
    elif kind == "scaled_taylor_monomials":
        scale = float(h) ** (-int(alpha.sum()))
    elif kind == "midpoint_monomials":
        scale = 0.5 ** int(alpha.sum())
    elif kind == "orthogonal_polynomials":
        if family.polynomial == "legendre":
            der, val = np.polynomial.legendre.legder, np.polynomial.legendre.legval
        else:
            der, val = np.polynomial.hermite_e.hermeder, np.polynomial.hermite_e.hermeval
        out = np.ones(iset.p)
        for k in range(iset.dim):
            # value at 0 of the alpha_k-th derivative of each 1D polynomial
            vals = np.empty(iset.order + 1)
            for deg in range(iset.order + 1):
                coef = np.zeros(deg + 1)
                coef[deg] = 1.0
                vals[deg] = val(0.0, der(coef, int(alpha[k])))
            out *= vals[iset.array[:, k]]
        return out * float(h) ** (-int(alpha.sum()))
    else:
        raise UnsupportedCombination(f"{kind} is not a polynomial basis")
    # Taylor type families: d^alpha of X_beta(c d) at 0 is c^|alpha| delta_{alpha beta}
    row = monomial_derivative_matrix(np.zeros((1, iset.dim)), iset, alpha)[0]
    return row * scale

