"""Multi-index sets, scaled Taylor monomials and operator mapping vectors.

Multi-indices are ordered by total degree first and, inside a degree, in
decreasing powers of ``x`` then ``y`` then ``z``.  In 2D with order 2 the
set with the zeroth index reads::

    (0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)

and the matching monomial vector of an offset ``d`` is
``[1, d_x, d_y, d_x**2/2, d_x*d_y, d_y**2/2]``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import OrderOutOfRange

__all__ = [
    "MultiIndexSet",
    "MappingVector",
    "Preconditioner",
    "index_count",
    "multi_index_set",
    "monomial_vector",
    "monomial_matrix",
    "monomial_derivative_matrix",
    "mapping_vector",
    "preconditioner",
    "taylor_expand",
    "parse_operator",
]


def _indices_of_degree(dim: int, degree: int) -> list[tuple[int, ...]]:
    if dim == 1:
        return [(degree,)]
    out = []
    for first in range(degree, -1, -1):
        for rest in _indices_of_degree(dim - 1, degree - first):
            out.append((first,) + rest)
    return out


def index_count(dim: int, order: int, include_zeroth: bool = True) -> int:
    """Number of multi-indices with ``k0 <= |alpha| <= order``.

    Uses the closed form ``sum_k C(k + n - 1, n - 1)``, which collapses to
    ``C(order + n, n)`` when the zeroth index is present.
    """
    total = math.comb(order + dim, dim)
    return total if include_zeroth else total - 1


@dataclass(frozen=True)
class MultiIndexSet:
    """Ordered set of multi-indices up to a given total degree.

    Attributes
    ----------
    dim : int
        Spatial dimension (1, 2 or 3).
    order : int
        Largest total degree ``m``.
    include_zeroth : bool
        Whether ``alpha = 0`` is part of the set.
    indices : tuple of tuple of int
        Multi-indices in graded-lexicographic order.
    """

    dim: int
    order: int
    include_zeroth: bool
    indices: tuple = field(repr=False)

    @property
    def p(self) -> int:
        return len(self.indices)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def array(self) -> np.ndarray:
        """Indices as a ``(p, dim)`` integer array."""
        return _index_array(self.dim, self.order, self.include_zeroth)

    @property
    def degrees(self) -> np.ndarray:
        return self.array.sum(axis=1)

    @property
    def factorials(self) -> tuple[int, ...]:
        """Exact integer ``alpha!`` for every index."""
        return tuple(math.prod(math.factorial(a) for a in alpha) for alpha in self.indices)

    def position(self, alpha: Sequence[int]) -> int:
        """Slot of ``alpha`` in the set; raises ``OrderOutOfRange`` if absent."""
        alpha = tuple(int(a) for a in alpha)
        try:
            return _position_map(self.dim, self.order, self.include_zeroth)[alpha]
        except KeyError:
            raise OrderOutOfRange(
                f"multi-index {alpha} is not in the set (dim={self.dim}, order={self.order}, "
                f"include_zeroth={self.include_zeroth})"
            ) from None

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in _position_map(self.dim, self.order, self.include_zeroth)

    def with_zeroth(self, include_zeroth: bool = True) -> "MultiIndexSet":
        return multi_index_set(self.dim, self.order, include_zeroth)

    def with_order(self, order: int) -> "MultiIndexSet":
        return multi_index_set(self.dim, order, self.include_zeroth)


@lru_cache(maxsize=None)
def multi_index_set(dim: int, order: int, include_zeroth: bool = True) -> MultiIndexSet:
    """Build the graded-lex multi-index set for ``dim`` and ``order``."""
    if dim not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    if order < 0 or (order == 0 and not include_zeroth):
        raise ValueError(f"order {order} gives an empty index set")
    start = 0 if include_zeroth else 1
    indices = []
    for k in range(start, order + 1):
        indices.extend(_indices_of_degree(dim, k))
    return MultiIndexSet(dim, order, bool(include_zeroth), tuple(indices))


@lru_cache(maxsize=None)
def _index_array(dim, order, include_zeroth):
    arr = np.array(multi_index_set(dim, order, include_zeroth).indices, dtype=int)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _position_map(dim, order, include_zeroth):
    s = multi_index_set(dim, order, include_zeroth)
    return {alpha: k for k, alpha in enumerate(s.indices)}


def monomial_matrix(offsets, index_set: MultiIndexSet) -> np.ndarray:
    """Scaled monomials ``x**alpha / alpha!`` for a batch of offsets.

    Parameters
    ----------
    offsets : array_like, shape (N, dim)
    index_set : MultiIndexSet

    Returns
    -------
    ndarray, shape (N, p)
    """
    d = np.atleast_2d(np.asarray(offsets, dtype=float))
    if d.shape[1] != index_set.dim:
        raise ValueError(f"offsets have dimension {d.shape[1]}, index set has {index_set.dim}")
    alpha = index_set.array
    # powers[k][:, j] holds d[:, k] ** j
    powers = [np.vander(d[:, k], index_set.order + 1, increasing=True) for k in range(index_set.dim)]
    out = np.ones((d.shape[0], index_set.p))
    for k in range(index_set.dim):
        out *= powers[k][:, alpha[:, k]]
    return out / np.asarray(index_set.factorials, dtype=float)


def monomial_vector(offset, index_set: MultiIndexSet) -> np.ndarray:
    """Scaled monomial vector ``X`` of a single offset, length ``p``."""
    return monomial_matrix(np.reshape(offset, (1, -1)), index_set)[0]


def monomial_derivative_matrix(offsets, index_set: MultiIndexSet, beta: Sequence[int]) -> np.ndarray:
    """Derivative ``d^beta`` of the scaled monomials with respect to the offset.

    Scaled monomials are closed under differentiation: ``d^beta (x^alpha/alpha!)``
    equals ``x^(alpha-beta)/(alpha-beta)!`` when ``alpha >= beta`` and zero
    otherwise.
    """
    beta = np.asarray(beta, dtype=int)
    d = np.atleast_2d(np.asarray(offsets, dtype=float))
    alpha = index_set.array
    shifted = alpha - beta
    valid = np.all(shifted >= 0, axis=1)
    out = np.zeros((d.shape[0], index_set.p))
    if not valid.any():
        return out
    full = multi_index_set(index_set.dim, index_set.order, True)
    base = monomial_matrix(d, full)
    pos = _position_map(index_set.dim, index_set.order, True)
    cols = [pos[tuple(s)] for s in shifted[valid]]
    out[:, valid] = base[:, cols]
    return out


@dataclass(frozen=True)
class MappingVector:
    """Coefficients ``C^alpha`` of a linear operator in a multi-index set."""

    index_set: MultiIndexSet
    values: np.ndarray

    @property
    def p(self):
        return self.index_set.p

    @property
    def support(self) -> list[tuple[int, ...]]:
        """Multi-indices with non-zero coefficient."""
        return [a for a, v in zip(self.index_set.indices, self.values) if v != 0.0]

    @property
    def degrees(self) -> set[int]:
        return {sum(a) for a in self.support}


def mapping_vector(op_spec, index_set: MultiIndexSet) -> MappingVector:
    """Mapping vector for ``L = sum_k c_k d^alpha_k``.

    Parameters
    ----------
    op_spec : str or iterable of (alpha, coefficient)
        Operator terms.  Strings are parsed with :func:`parse_operator`.
    index_set : MultiIndexSet

    Raises
    ------
    OrderOutOfRange
        If some ``|alpha|`` exceeds the order, or ``alpha = 0`` is requested
        from a set without the zeroth index.
    """
    if isinstance(op_spec, MappingVector):
        return op_spec
    if isinstance(op_spec, str):
        op_spec = parse_operator(op_spec, index_set.dim)
    values = np.zeros(index_set.p)
    for alpha, coef in op_spec:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != index_set.dim:
            raise OrderOutOfRange(f"multi-index {alpha} does not match dimension {index_set.dim}")
        values[index_set.position(alpha)] += float(coef)
    values.setflags(write=False)
    return MappingVector(index_set, values)


@dataclass(frozen=True)
class Preconditioner:
    """Diagonal scaling ``H = diag(h**-|alpha|)``."""

    h: float
    diag: np.ndarray

    def apply(self, vec):
        """Return ``H @ vec`` for a vector or a stack of column vectors."""
        vec = np.asarray(vec, dtype=float)
        return self.diag * vec if vec.ndim == 1 else self.diag[:, None] * vec


def preconditioner(h: float, index_set: MultiIndexSet) -> Preconditioner:
    if not h > 0:
        raise ValueError("support radius must be positive")
    diag = float(h) ** (-index_set.degrees.astype(float))
    diag.setflags(write=False)
    return Preconditioner(float(h), diag)


def taylor_expand(derivatives, offsets, index_set: MultiIndexSet, center_value: float = 0.0):
    """Evaluate the truncated Taylor series ``u_i + X_ji . D u`` at offsets.

    Parameters
    ----------
    derivatives : array_like, shape (p,)
        Derivative values ordered like ``index_set``.  With the zeroth index
        the first entry is the value itself and ``center_value`` is ignored.
    offsets : array_like, shape (N, dim)
    index_set : MultiIndexSet
    center_value : float
        Value at the expansion point, used when the set has no zeroth index.
    """
    X = monomial_matrix(offsets, index_set)
    approx = X @ np.asarray(derivatives, dtype=float)
    if not index_set.include_zeroth:
        approx = approx + center_value
    return approx


_AXES = "xyz"
_DERIV_RE = re.compile(r"^d(\d*)/((?:d[xyz]\d*)+)$")
_ALPHA_RE = re.compile(r"^alpha\s*=\s*\(([^)]*)\)\s*(?:\*\s*([-+0-9.eE]+))?$")


def parse_operator(text: str, dim: int) -> list[tuple[tuple[int, ...], float]]:
    """Parse an operator string into ``(alpha, coefficient)`` terms.

    Accepted forms: ``d/dx``, ``d2/dxdy``, ``d2/dx2``, ``laplacian`` and sums
    of ``alpha=(a,b)*c`` terms, as in ``alpha=(2,0)*1.0 + alpha=(0,2)*1.0``.
    """
    src = text.strip()
    if not src:
        raise ValueError("empty operator specification")
    if src.lower() in ("laplacian", "lap", "del2"):
        return [(tuple(2 if k == j else 0 for k in range(dim)), 1.0) for j in range(dim)]
    if src.lower() in ("identity", "value"):
        return [((0,) * dim, 1.0)]
    m = _DERIV_RE.match(src.replace(" ", ""))
    if m:
        total = int(m.group(1)) if m.group(1) else 1
        alpha = [0] * dim
        for axis, power in re.findall(r"d([xyz])(\d*)", m.group(2)):
            k = _AXES.index(axis)
            if k >= dim:
                raise ValueError(f"axis {axis!r} not available in {dim}D")
            alpha[k] += int(power) if power else 1
        if sum(alpha) != total:
            raise ValueError(f"order mismatch in {text!r}")
        return [(tuple(alpha), 1.0)]
    terms = []
    for chunk in re.split(r"\+(?![^()]*\))", src):
        chunk = chunk.strip()
        m = _ALPHA_RE.match(chunk)
        if not m:
            raise ValueError(f"cannot parse operator term {chunk!r}")
        alpha = tuple(int(v) for v in m.group(1).split(","))
        if len(alpha) != dim:
            raise ValueError(f"term {chunk!r} does not match dimension {dim}")
        coef = float(m.group(2)) if m.group(2) else 1.0
        terms.append((alpha, coef))
    return terms


def exact_derivative(poly_alpha: Iterable[int], deriv: Iterable[int], point) -> float:
    """``d^deriv`` of the plain monomial ``x**poly_alpha`` at ``point``."""
    val = 1.0
    for a, b, x in zip(poly_alpha, deriv, np.asarray(point, dtype=float)):
        if b > a:
            return 0.0
        val *= math.perm(a, b) * x ** (a - b)
    return val
