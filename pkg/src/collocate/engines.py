"""Stencil weights from moment conditions.

Four routes turn a neighbourhood, a basis family and an operator into
weights ``w_ji`` with ``L_i u = sum_j u_j w_ji``:

``aom``
    Ansatz ``w_ji = W_ji . Psi``, with ``M Psi = C`` and ``M = sum X_ji W_ji^T``.
    Solved with a column-pivoted QR of ``M``.
``l2e``
    Weighted least-squares Taylor fit of the data.  Solved with a
    column-pivoted QR of the tall matrix ``sqrt(phi) X``; gives every
    derivative of the set at once.
``l2p``
    Smallest weighted norm ``sum w**2 / phi`` subject to the moment
    conditions.  Solved through the symmetric moment matrix with a Cholesky
    factorisation.
``gl2p``
    Smallest ``sum (W_ji . Psi)**2`` subject to ``M Psi = C``.  Solved as a
    saddle-point (KKT) system with an LU factorisation.

The routes use different factorisations on purpose so that the known
equivalences between them are checked by independent computations.

Weights follow one of three conventions (``form``):

``on_values``        ``L u = sum_j w_j u_j``
``on_differences``   ``L u = sum_j w_j (u_j - u_i)``
``dcpse_signed``     ``L u = sum_j w_j (u_j + s u_i)`` with ``s = +1``
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import (AbfFamily, RadialWindow, abf_matrix, basis_derivatives_at_origin,
                    window_gradient, window_values)
from .errors import InvalidParams, SingularMoment, UnsupportedCombination, UnsupportedOrder
from .indexing import (MappingVector, MultiIndexSet, mapping_vector, monomial_derivative_matrix,
                       monomial_matrix, preconditioner)

__all__ = [
    "FORMS",
    "ROUTES",
    "MomentMatrix",
    "StencilWeights",
    "DerivativeSolve",
    "moment_matrix",
    "aom_weights",
    "l2e_solve",
    "l2e_weights",
    "l2p_weights",
    "gl2p_weights",
    "direct_derivative_weights",
    "reconstruction_weights",
    "moment_residuals",
    "factor_rank",
]

FORMS = ("on_values", "on_differences", "dcpse_signed")
ROUTES = ("aom", "l2e", "l2p", "gl2p", "direct")
_EPS = np.finfo(float).eps
# families where the h-scaling is applied to both the moment vector and the ABF
_TAYLOR_LIKE = ("taylor_monomials", "midpoint_monomials")


@dataclass(frozen=True)
class MomentMatrix:
    """Assembled moment matrix with its basis and a condition estimate."""

    entries: np.ndarray
    basis: AbfFamily
    preconditioned: bool
    cond_estimate: float
    rank: int


@dataclass
class StencilWeights:
    """Weights of one stencil together with solve diagnostics.

    Attributes
    ----------
    center : int
    neighbors : ndarray of int
        Global indices, aligned with ``weights``.
    weights : ndarray
    form : str
        One of ``FORMS``.
    route : str
    cond : float
        Condition estimate of the matrix that was factorised.
    moment_residual_inf : float
        Largest entry of ``H (sum_j X_ji w_ji - C)`` relative to ``|H C|``.
    coefficients : ndarray or None
        Ansatz coefficients ``Psi`` when the route has them.
    affine : float
        Data dependent offset added to the weighted sum.
    center_sign : float
        Sign ``s`` used by the ``dcpse_signed`` form.
    """

    center: int
    neighbors: np.ndarray
    weights: np.ndarray
    form: str
    route: str
    cond: float = float("nan")
    moment_residual_inf: float = float("nan")
    coefficients: np.ndarray | None = None
    affine: float = 0.0
    center_sign: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown weight form {self.form!r}")

    def folded(self):
        """Columns and values of the equivalent ``on_values`` row."""
        cols = np.asarray(self.neighbors)
        vals = np.asarray(self.weights, dtype=float).copy()
        slot = np.flatnonzero(cols == self.center)
        total = vals.sum()
        if self.form == "on_differences":
            shift = -total
        elif self.form == "dcpse_signed":
            shift = self.center_sign * total
        else:
            shift = 0.0
        if shift != 0.0:
            if slot.size:
                vals[slot[0]] += shift
            else:
                cols = np.append(cols, self.center)
                vals = np.append(vals, shift)
        return cols, vals

    def apply(self, values) -> float:
        """Evaluate the stencil on a global field ``values``."""
        u = np.asarray(values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        local = u[np.asarray(self.neighbors)]
        if self.form == "on_differences":
            local = local - u[self.center]
        elif self.form == "dcpse_signed":
            local = local + self.center_sign * u[self.center]
        return float(w @ local) + self.affine

    def to_dict(self) -> dict:
        return {
            "i": int(self.center),
            "neighbors": [int(j) for j in self.neighbors],
            "weights": [float(w) for w in self.weights],
            "form": self.form,
            "route": self.route,
            "cond": float(self.cond),
            "moment_residual_inf": float(self.moment_residual_inf),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class DerivativeSolve:
    """Least-squares derivative estimator for every index of a set.

    ``D u = coefficients @ u_local`` where ``u_local`` holds ``u_j`` (zeroth
    index present) or ``u_j - u_i`` (without it).
    """

    center: int
    neighbors: np.ndarray
    index_set: MultiIndexSet
    coefficients: np.ndarray
    cond: float

    @property
    def form(self) -> str:
        return "on_values" if self.index_set.include_zeroth else "on_differences"

    def derivatives(self, values) -> np.ndarray:
        u = np.asarray(values, dtype=float)
        local = u[self.neighbors]
        if not self.index_set.include_zeroth:
            local = local - u[self.center]
        return self.coefficients @ local

    def weights(self, op, offsets=None) -> StencilWeights:
        """Stencil for the operator ``op`` (term list, string or MappingVector)."""
        mv = mapping_vector(op, self.index_set)
        w = mv.values @ self.coefficients
        res = float("nan")
        if offsets is not None:
            res = _relative_residual(offsets, w, mv, _scale_of(offsets))
        return StencilWeights(self.center, self.neighbors.copy(), w, self.form, "l2e",
                              cond=self.cond, moment_residual_inf=res)


def _scale_of(offsets) -> float:
    r = np.sqrt((np.asarray(offsets) ** 2).sum(axis=1)).max()
    return float(r) if r > 0 else 1.0


@dataclass
class _Factor:
    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray
    rank: int
    cond: float
    row_scale: np.ndarray | None = None
    col_scale: np.ndarray | None = None


def _pivoted_qr(A):
    q, r, perm = sla.qr(A, mode="economic", pivoting=True)
    return q, r, perm, np.abs(np.diag(r))


def factor_rank(matrix, equilibrate: bool | None = None) -> _Factor:
    """Column-pivoted QR with numerical rank and condition estimate.

    The rank counts diagonal entries of ``R`` above ``p * eps * |R_00|``;
    the condition estimate is ``|R_00| / |R_pp|`` of the matrix as given.
    Square matrices are row and column equilibrated before the rank
    decision and the factorisation used for solves, so that a pure scaling
    by powers of ``h`` is not mistaken for rank loss.
    """
    A = np.asarray(matrix, dtype=float)
    p = A.shape[1]
    if equilibrate is None:
        equilibrate = A.shape[0] == p
    q, r, perm, diag = _pivoted_qr(A)
    if diag.size == 0 or diag[0] == 0.0:
        return _Factor(q, r, perm, 0, float("inf"))
    cond = float(diag[0] / diag[-1]) if diag[-1] > 0 else float("inf")
    rs = cs = None
    if equilibrate:
        # powers of two keep the scaling itself free of rounding
        rmax = np.abs(A).max(axis=1)
        rs = np.exp2(-np.round(np.log2(np.where(rmax > 0, rmax, 1.0))))
        cmax = np.abs(A * rs[:, None]).max(axis=0)
        cs = np.exp2(-np.round(np.log2(np.where(cmax > 0, cmax, 1.0))))
        q, r, perm, diag = _pivoted_qr(A * rs[:, None] * cs)
    tol = p * _EPS * diag[0]
    rank = int(np.sum(diag > tol))
    if diag.size < p:
        rank = min(rank, diag.size)
        cond = float("inf")
    return _Factor(q, r, perm, rank, cond, rs, cs)


def _require_full_rank(f: _Factor, p: int, what: str):
    if f.rank < p:
        raise SingularMoment(f"{what} is numerically singular (rank {f.rank} < {p})",
                             rank=f.rank, size=p)


RANK_POLICIES = ("strict", "consistent")


def _solve_moment(M, rhs, policy: str, what: str):
    """Solve ``M x = rhs`` under a rank policy.

    ``strict`` raises ``SingularMoment`` for any rank deficiency.
    ``consistent`` accepts a deficient system when ``rhs`` lies in the range
    of ``M`` (relative residual below 1e-10) and returns the minimum-norm
    solution; inconsistent systems still raise.
    """
    if policy not in RANK_POLICIES:
        raise InvalidParams(f"unknown rank policy {policy!r}")
    f = factor_rank(M)
    p = M.shape[1]
    if f.rank == p:
        return _qr_solve_square(f, rhs), f
    if policy == "strict" or f.rank == 0:
        _require_full_rank(f, p, what)
    # truncated SVD of the equilibrated matrix at the rank found above,
    # followed by one step of iterative refinement
    rs = f.row_scale if f.row_scale is not None else np.ones(M.shape[0])
    cs = f.col_scale if f.col_scale is not None else np.ones(p)
    U, S, Vt = np.linalg.svd(M * rs[:, None] * cs)
    k = f.rank

    def pinv_apply(b):
        return cs * (Vt[:k].T @ ((U[:, :k].T @ (rs * b)) / S[:k]))

    x = pinv_apply(rhs)
    x = x + pinv_apply(rhs - M @ x)
    scale = np.linalg.norm(M, np.inf) * np.abs(x).max() + np.abs(rhs).max()
    if np.abs(M @ x - rhs).max() > 1e-10 * scale:
        _require_full_rank(f, p, what)
    return x, f


def _qr_solve_square(f: _Factor, b):
    b = np.asarray(b, dtype=float)
    if f.row_scale is not None:
        b = (b.T * f.row_scale).T
    y = sla.solve_triangular(f.r, f.q.T @ b)
    x = np.empty_like(y)
    x[f.perm] = y
    if f.col_scale is not None:
        x = (x.T * f.col_scale).T
    return x


def _mapping(op, index_set: MultiIndexSet) -> MappingVector:
    return mapping_vector(op, index_set)


def _prepare(nbhd, family: AbfFamily, precondition: bool):
    """Monomials ``X``, ABFs ``W`` and the scaling ``H`` for one neighbourhood."""
    iset = family.index_set
    h = nbhd.radius
    X = monomial_matrix(nbhd.offsets, iset)
    W = abf_matrix(family, nbhd.offsets, h, self_mask=nbhd.members == nbhd.center)
    H = preconditioner(h, iset).diag
    if precondition:
        X = X * H
        if family.kind in _TAYLOR_LIKE:
            W = W * H
    return X, W, H


def _relative_residual(offsets, weights, mv: MappingVector, h: float) -> float:
    iset = mv.index_set
    H = preconditioner(h, iset).diag
    X = monomial_matrix(offsets, iset)
    res = H * (X.T @ weights - mv.values)
    scale = np.abs(H * mv.values).max()
    return float(np.abs(res).max() / (scale if scale > 0 else 1.0))


def moment_matrix(nbhd, family: AbfFamily, precondition: bool = False,
                  symmetric: bool = False) -> MomentMatrix:
    """``M = sum_j X_ji W_ji^T`` (optionally with ``X`` replaced by ``H X``).

    Parameters
    ----------
    symmetric : bool
        Least-squares form ``sum_j phi X X^T``: only the upper triangle is
        accumulated and then mirrored, so the result is symmetric to the bit.
    """
    if symmetric:
        iset = family.index_set
        X = monomial_matrix(nbhd.offsets, iset)
        if precondition:
            X = X * preconditioner(nbhd.radius, iset).diag
        phi = window_values(family.window, nbhd.offsets, nbhd.radius)
        M = _symmetric_gram(X, phi)
    else:
        X, W, _ = _prepare(nbhd, family, precondition)
        if W.shape[1] != X.shape[1]:
            raise UnsupportedCombination("extended ABFs need the extended moment system")
        M = X.T @ W
    f = factor_rank(M)
    return MomentMatrix(M, family, bool(precondition), f.cond, f.rank)


def _symmetric_gram(X, phi):
    G = (X * phi[:, None]).T @ X
    upper = np.triu(G)
    return upper + np.triu(G, 1).T


def aom_weights(nbhd, family: AbfFamily, op, precondition: bool = False,
                volumes=None, rank_policy: str = "strict") -> StencilWeights:
    """Weights ``w_ji = W_ji . Psi`` from ``M Psi = C``.

    Parameters
    ----------
    nbhd : Neighborhood
    family : AbfFamily
        Defines ``W_ji`` and the index set.  Without the zeroth index the
        weights act on ``u_j - u_i``.
    op : str, list of (alpha, coef) or MappingVector
    precondition : bool
        Solve ``(H M) Psi = H C`` instead; the weights are unchanged in
        exact arithmetic.
    volumes : array_like, optional
        Per-member factors ``v_j`` multiplying ``W_ji``.
    rank_policy : {"strict", "consistent"}
        How rank-deficient moment matrices are treated (see
        :func:`_solve_moment`).

    Raises
    ------
    SingularMoment
    """
    iset = family.index_set
    mv = _mapping(op, iset)
    X, W, H = _prepare(nbhd, family, precondition)
    if W.shape[1] != X.shape[1]:
        raise UnsupportedCombination("extended ABFs need the extended moment system")
    if volumes is not None:
        W = W * np.asarray(volumes, dtype=float)[:, None]
    M = X.T @ W
    rhs = H * mv.values if precondition else mv.values
    psi, f = _solve_moment(M, rhs, rank_policy, "moment matrix")
    w = W @ psi
    form = "on_values" if iset.include_zeroth else "on_differences"
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, form, "aom", cond=f.cond,
                          moment_residual_inf=_relative_residual(nbhd.offsets, w, mv, nbhd.radius),
                          coefficients=psi)


def _least_squares_basis(family: AbfFamily, include_zeroth: bool):
    """Unwindowed basis family used by the least-squares fit, plus the
    matrix mapping fit coefficients to derivatives of the full index set."""
    if not family.is_polynomial:
        raise UnsupportedCombination(f"{family.kind} cannot serve as a least-squares basis")
    if not include_zeroth and family.kind == "orthogonal_polynomials":
        raise UnsupportedCombination("orthogonal polynomials need the zeroth index in a fit")
    kind = "scaled_taylor_monomials" if family.kind == "taylor_monomials" else family.kind
    return AbfFamily(kind, RadialWindow("constant"), family.index_set, family.polynomial)


def l2e_solve(nbhd, family: AbfFamily, rank_policy: str = "strict") -> DerivativeSolve:
    """Weighted least-squares derivative estimates for every index of the set.

    Minimises ``sum_j phi_ji (u_j - P_ji . c)**2`` (or the same with
    ``u_j - u_i`` when the set lacks the zeroth index).  Taylor monomials are
    fitted in their ``h``-scaled form, which leaves the result unchanged.

    Raises
    ------
    SingularMoment
        When ``sqrt(phi) P`` has deficient column rank.
    """
    iset = family.index_set
    basis = _least_squares_basis(family, iset.include_zeroth)
    h = nbhd.radius
    P = abf_matrix(basis, nbhd.offsets, h)
    sw = np.sqrt(window_values(family.window, nbhd.offsets, h))
    A = sw[:, None] * P
    f = factor_rank(A, equilibrate=False)
    if f.rank < iset.p and rank_policy == "consistent" and f.rank > 0:
        # minimum-norm fit; derivatives the data cannot resolve come out as 0
        E = np.linalg.pinv(A, rcond=1e-12)
    else:
        _require_full_rank(f, iset.p, "weighted least-squares system")
        # pseudo-inverse rows, undoing the column pivoting
        E = np.empty((iset.p, A.shape[0]))
        E[f.perm] = sla.solve_triangular(f.r, f.q.T)
    D = np.stack([basis_derivatives_at_origin(basis, h, alpha) for alpha in iset.indices])
    coef = D @ (E * sw[None, :])
    return DerivativeSolve(nbhd.center, nbhd.members.copy(), iset, coef, f.cond**2)


def l2e_weights(nbhd, family: AbfFamily, op, rank_policy: str = "strict") -> StencilWeights:
    """Stencil for ``op`` extracted from :func:`l2e_solve`."""
    return l2e_solve(nbhd, family, rank_policy).weights(op, offsets=nbhd.offsets)


def l2p_weights(nbhd, family: AbfFamily, op, rank_policy: str = "strict") -> StencilWeights:
    """Weights of least weighted norm ``sum w_j**2 / phi_j`` meeting the moments.

    The minimiser is ``w_j = phi_j X_j . M^-1 C`` with the symmetric
    ``M = sum phi X X^T``; it is computed in ``h``-scaled variables with a
    Cholesky factorisation.
    """
    iset = family.index_set
    mv = _mapping(op, iset)
    h = nbhd.radius
    H = preconditioner(h, iset).diag
    Xs = monomial_matrix(nbhd.offsets, iset) * H
    phi = window_values(family.window, nbhd.offsets, h)
    M = _symmetric_gram(Xs, phi)
    f = factor_rank(M)
    if f.rank < iset.p:
        psi, f = _solve_moment(M, H * mv.values, rank_policy, "moment matrix")
    else:
        try:
            cho = sla.cho_factor(M, lower=False)
        except np.linalg.LinAlgError as exc:
            raise SingularMoment("moment matrix is not positive definite", size=iset.p) from exc
        psi = sla.cho_solve(cho, H * mv.values)
    w = phi * (Xs @ psi)
    form = "on_values" if iset.include_zeroth else "on_differences"
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, form, "l2p", cond=f.cond,
                          moment_residual_inf=_relative_residual(nbhd.offsets, w, mv, h),
                          coefficients=psi)


def gl2p_weights(nbhd, family: AbfFamily, op, precondition: bool = True,
                 rank_policy: str = "strict") -> StencilWeights:
    """Weights ``W_ji . Psi`` with smallest ``sum (W_ji . Psi)**2`` under ``M Psi = C``.

    Solved from the saddle-point system
    ``[[W^T W, M^T], [M, 0]] [Psi; lam] = [0; C]``.
    """
    iset = family.index_set
    mv = _mapping(op, iset)
    X, W, H = _prepare(nbhd, family, precondition)
    if W.shape[1] != X.shape[1]:
        raise UnsupportedCombination("extended ABFs need the extended moment system")
    p = iset.p
    M = X.T @ W
    f = factor_rank(M)
    if f.rank < p and (rank_policy == "strict" or f.rank == 0):
        _require_full_rank(f, p, "moment matrix")
    K = np.zeros((2 * p, 2 * p))
    K[:p, :p] = W.T @ W
    K[:p, p:] = M.T
    K[p:, :p] = M
    rhs = np.zeros(2 * p)
    rhs[p:] = H * mv.values if precondition else mv.values
    if f.rank == p:
        sol = sla.lu_solve(sla.lu_factor(K), rhs)
    else:
        sol, _ = _solve_moment(K, rhs, rank_policy, "saddle-point system")
    psi = sol[:p]
    w = W @ psi
    form = "on_values" if iset.include_zeroth else "on_differences"
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, form, "gl2p", cond=f.cond,
                          moment_residual_inf=_relative_residual(nbhd.offsets, w, mv, nbhd.radius),
                          coefficients=psi)


def _rk_pieces(offsets, h, window: RadialWindow, iset: MultiIndexSet):
    Xs = monomial_matrix(offsets / h, iset)
    phi = window_values(window, offsets, h)
    M = _symmetric_gram(Xs, phi)
    f = factor_rank(M)
    _require_full_rank(f, iset.p, "moment matrix")
    return Xs, phi, M, f


def reconstruction_weights(nbhd, window: RadialWindow, index_set: MultiIndexSet,
                           at=None) -> np.ndarray:
    """Shape functions ``w0_j(x) = phi_j X_j . M(x)^-1 e_0`` at the point ``at``.

    ``at`` defaults to the centre.  Offsets are measured from ``at`` while the
    support radius stays ``h_i``.
    """
    if not index_set.include_zeroth:
        raise InvalidParams("reconstruction needs the zeroth index")
    pos = nbhd.member_positions
    x = nbhd.center_position if at is None else np.asarray(at, dtype=float)
    d = pos - x
    Xs, phi, M, f = _rk_pieces(d, nbhd.radius, window, index_set)
    e0 = np.zeros(index_set.p)
    e0[0] = 1.0
    a = _qr_solve_square(f, e0)
    return phi * (Xs @ a)


def direct_derivative_weights(nbhd, window: RadialWindow, index_set: MultiIndexSet,
                              op) -> StencilWeights:
    """First derivatives obtained by differentiating the reconstruction.

    With ``w0_j(x) = phi_j X_j . M^-1 e_0`` the derivative follows from
    ``d(M^-1) = -M^-1 (dM) M^-1`` and the analytic derivatives of ``X`` and
    ``phi`` with respect to the evaluation point.

    Raises
    ------
    UnsupportedOrder
        If ``op`` has terms with ``|alpha| > 1``.
    """
    if not index_set.include_zeroth:
        raise InvalidParams("direct derivatives need the zeroth index")
    mv = _mapping(op, index_set)
    if any(sum(a) > 1 for a in mv.support):
        raise UnsupportedOrder("direct derivatives are available for first order terms only")
    h = nbhd.radius
    d = nbhd.offsets
    Xs, phi, M, f = _rk_pieces(d, h, window, index_set)
    e0 = np.zeros(index_set.p)
    e0[0] = 1.0
    a = _qr_solve_square(f, e0)
    grad_phi = -window_gradient(window, d, h)
    total = np.zeros(len(d))
    for alpha, coef in zip(index_set.indices, mv.values):
        if coef == 0.0:
            continue
        if sum(alpha) == 0:
            total += coef * phi * (Xs @ a)
            continue
        k = int(np.argmax(alpha))
        # derivative of X(d / h) with respect to x_k, d = x_j - x
        dX = -monomial_derivative_matrix(d / h, index_set, alpha) / h
        dphi = grad_phi[:, k]
        dM = (Xs * phi[:, None]).T @ dX
        dM = dM + dM.T + (Xs * dphi[:, None]).T @ Xs
        b = _qr_solve_square(f, dM @ a)
        w = (dphi[:, None] * Xs + phi[:, None] * dX) @ a - phi * (Xs @ b)
        total += coef * w
    return StencilWeights(nbhd.center, nbhd.members.copy(), total, "on_values", "direct",
                          cond=f.cond, moment_residual_inf=_relative_residual(d, total, mv, h))


def moment_residuals(nbhd, weights, op, index_set: MultiIndexSet) -> np.ndarray:
    """``sum_j X_ji w_ji - C`` for given weights (raw, unscaled)."""
    mv = _mapping(op, index_set)
    X = monomial_matrix(nbhd.offsets, index_set)
    return X.T @ np.asarray(weights, dtype=float) - mv.values
