"""Named collocation methods built on the generic engines.

Every method is described by a :class:`MethodConfig`; :func:`preset` fills in
the documented defaults and validates the result against ``METHOD_TABLE``,
which records for each method the derivation group, the admissible ABF
families and whether the zeroth moment may be included.  Methods that do
not fit a plain route (penalised, upwind, iterated or renormalised
operators) have dedicated functions in this module.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .basis import AbfFamily, RadialWindow, abf_matrix, window_values
from .engines import (StencilWeights, _qr_solve_square, _relative_residual, _require_full_rank,
                      _symmetric_gram, aom_weights, direct_derivative_weights, factor_rank,
                      gl2p_weights, l2e_solve, l2e_weights, l2p_weights)
from .errors import (InvalidParams, NonContractive, SingularBordered, SingularMoment,
                     UnknownMethod, ZeroDenominator)
from .indexing import (MappingVector, MultiIndexSet, mapping_vector, monomial_derivative_matrix,
                       monomial_matrix, multi_index_set, parse_operator, preconditioner)

logger = logging.getLogger(__name__)

__all__ = [
    "METHOD_TABLE",
    "METHOD_NAMES",
    "MethodConfig",
    "preset",
    "validate_config",
    "method_weights",
    "dcpse_weights",
    "mmls_weights",
    "cmls_weights",
    "fpsm_weights",
    "lskum_weights",
    "kmm_weights",
    "kmm_midpoint_weights",
    "MfdmResult",
    "mfdm_extrapolate",
    "mfdm_split",
    "ldd_gradient",
    "ldd_laplacian",
]


@dataclass(frozen=True)
class _TableRow:
    group: str
    bases: tuple
    zeroth: tuple
    route: str
    note: str = ""


_X = ("taylor_monomials", "scaled_taylor_monomials")
_P = ("taylor_monomials", "scaled_taylor_monomials", "orthogonal_polynomials")

# group, admissible ABFs, admissible zeroth flags and the route used here
METHOD_TABLE = {
    "cmls": _TableRow("l2e", _P, (True,), "l2e", "penalised least squares"),
    "dcpse": _TableRow("aom", ("scaled_taylor_monomials", "orthogonal_polynomials"), (True, False),
                       "aom", "zeroth row set by operator parity"),
    "fdpm": _TableRow("l2e", _X, (False,), "l2e"),
    "fpsm": _TableRow("l2p", ("extended_taylor",), (True,), "l2p", "centre weight constraint"),
    "gfdm": _TableRow("l2p", _X, (True, False), "l2p"),
    "gmls": _TableRow("l2e", _P, (True,), "l2e"),
    "grkcm": _TableRow("aom", _P, (True,), "aom"),
    "grkp": _TableRow("aom", _P, (True, False), "aom", "zeroth moment iff l = 0"),
    "hocsph": _TableRow("aom", ("rbf_derivatives",), (False,), "aom", "per-point volumes"),
    "kmm": _TableRow("l2e", ("midpoint_monomials",), (False,), "l2e", "upwinded midpoint values"),
    "labfm": _TableRow("aom", ("orthogonal_polynomials", "rbf_derivatives"), (False,), "aom"),
    "ldd": _TableRow("ren", ("taylor_monomials",), (True, False), "ldd",
                     "gradient plus renormalised Laplacians"),
    "lskum": _TableRow("l2e", _X, (False,), "l2e", "one-sided half-space stencils"),
    "lsmfm_rkcm": _TableRow("l2e", _P, (True,), "direct", "derivative of the reconstruction"),
    "mfdm": _TableRow("l2e", _X, (True, False), "l2e", "iterated low-order corrections"),
    "mls_fpm": _TableRow("l2e", _P, (True, False), "l2e"),
    "mmls": _TableRow("l2e", _P, (True,), "l2e", "regularised leading-order moments"),
    "pdm": _TableRow("l2e", _X, (False,), "l2e"),
}
METHOD_NAMES = tuple(sorted(METHOD_TABLE))

_DEFAULTS = {
    "cmls": dict(basis_kind="taylor_monomials", include_zeroth=True),
    "dcpse": dict(basis_kind="scaled_taylor_monomials", window="gaussian", include_zeroth=None,
                  precondition=True, form="dcpse_signed"),
    "fdpm": dict(basis_kind="taylor_monomials", include_zeroth=False),
    "fpsm": dict(basis_kind="extended_taylor", include_zeroth=True),
    "gfdm": dict(basis_kind="taylor_monomials", include_zeroth=True),
    "gmls": dict(basis_kind="scaled_taylor_monomials", include_zeroth=True),
    "grkcm": dict(basis_kind="taylor_monomials", include_zeroth=True, precondition=True),
    "grkp": dict(basis_kind="taylor_monomials", include_zeroth=None, precondition=True),
    "hocsph": dict(basis_kind="rbf_derivatives", include_zeroth=False, precondition=True),
    "kmm": dict(basis_kind="midpoint_monomials", include_zeroth=False),
    "labfm": dict(basis_kind="orthogonal_polynomials", include_zeroth=False, precondition=True),
    "ldd": dict(basis_kind="taylor_monomials", include_zeroth=False),
    "lskum": dict(basis_kind="taylor_monomials", include_zeroth=False),
    "lsmfm_rkcm": dict(basis_kind="taylor_monomials", include_zeroth=True),
    "mfdm": dict(basis_kind="taylor_monomials", include_zeroth=False),
    "mls_fpm": dict(basis_kind="taylor_monomials", include_zeroth=False),
    "mmls": dict(basis_kind="scaled_taylor_monomials", include_zeroth=True),
    "pdm": dict(basis_kind="taylor_monomials", include_zeroth=False),
}

_PARAM_DEFAULTS = {
    "mu": 1e-7,
    "eps_omega": 0.0,
    "eps_boundary": 0.0,
    "eps_fpsm": 1.0,
    "velocity": None,
    "direction": None,
    "mfdm_L": None,
    "mfdm_iters": 3,
    "ldd_variant": "ls_full",
    "grkp_l": 0,
    "volumes": "unit",
    "rank_policy": "strict",
}


@dataclass(frozen=True)
class MethodConfig:
    """Fully resolved description of one collocation method.

    Attributes
    ----------
    name : str
    dim : int
    order : int
        Consistency order ``m``.
    include_zeroth : bool or None
        ``None`` lets the method decide per operator (DC-PSE parity rule).
    route : str
        ``aom``, ``l2e``, ``l2p``, ``gl2p``, ``direct`` or ``ldd``.
    basis_kind : str
    window : RadialWindow
    polynomial : str
    precondition : bool
    form : str or None
        Weight form override; ``None`` keeps the route's natural form.
    params : dict
        Method specific parameters (``mu``, ``eps_omega``, ``direction`` ...).
    """

    name: str
    dim: int
    order: int
    include_zeroth: bool | None
    route: str
    basis_kind: str
    window: RadialWindow = field(default_factory=RadialWindow)
    polynomial: str = "legendre"
    precondition: bool = False
    form: str | None = None
    params: dict = field(default_factory=dict)

    def index_set(self, include_zeroth: bool | None = None) -> MultiIndexSet:
        z = self.include_zeroth if include_zeroth is None else include_zeroth
        return multi_index_set(self.dim, self.order, bool(z))

    def family(self, include_zeroth: bool | None = None) -> AbfFamily:
        return AbfFamily(self.basis_kind, self.window, self.index_set(include_zeroth), self.polynomial)

    def param(self, key):
        return self.params.get(key, _PARAM_DEFAULTS.get(key))


def preset(name: str, dim: int = 2, order: int = 2, **overrides) -> MethodConfig:
    """Default configuration of a named method.

    Parameters
    ----------
    name : str
        One of ``METHOD_NAMES``.
    dim, order : int
    **overrides
        ``include_zeroth``, ``basis_kind``, ``window`` (name or
        RadialWindow), ``sigma``, ``polynomial``, ``precondition``, ``route``
        (only ``l2e``/``l2p`` for GFDM) or any method parameter.

    Raises
    ------
    UnknownMethod, InvalidParams
    """
    key = str(name).lower().replace("-", "_")
    if key not in METHOD_TABLE:
        raise UnknownMethod(f"unknown method {name!r}; expected one of {', '.join(METHOD_NAMES)}")
    row = METHOD_TABLE[key]
    base = dict(_DEFAULTS[key])
    base.update({k: v for k, v in overrides.items() if v is not None or k == "include_zeroth"})
    window = base.pop("window", "wendland_c2")
    sigma = base.pop("sigma", None)
    if isinstance(window, str):
        window = RadialWindow(window, 0.3 if sigma is None else float(sigma))
    elif sigma is not None:
        window = RadialWindow(window.kind, float(sigma))
    params = {k: base.pop(k) for k in list(base) if k in _PARAM_DEFAULTS}
    include_zeroth = base.pop("include_zeroth", None)
    if key == "grkp" and include_zeroth is None:
        include_zeroth = int(params.get("grkp_l", 0)) == 0
    cfg = MethodConfig(
        name=key,
        dim=int(dim),
        order=int(order),
        include_zeroth=include_zeroth,
        route=base.pop("route", row.route),
        basis_kind=base.pop("basis_kind"),
        window=window,
        polynomial=base.pop("polynomial", "legendre"),
        precondition=bool(base.pop("precondition", False)),
        form=base.pop("form", None),
        params=params,
    )
    if base:
        raise InvalidParams(f"unknown options for {key}: {sorted(base)}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: MethodConfig) -> MethodConfig:
    """Check a configuration against ``METHOD_TABLE`` and parameter ranges."""
    if cfg.name not in METHOD_TABLE:
        raise UnknownMethod(f"unknown method {cfg.name!r}")
    row = METHOD_TABLE[cfg.name]
    if cfg.dim not in (1, 2, 3):
        raise InvalidParams(f"dimension must be 1, 2 or 3, got {cfg.dim}")
    if cfg.order < 1:
        raise InvalidParams(f"order must be at least 1, got {cfg.order}")
    if cfg.include_zeroth is not None and cfg.include_zeroth not in row.zeroth:
        raise InvalidParams(f"{cfg.name} does not allow include_zeroth={cfg.include_zeroth}")
    if cfg.include_zeroth is None and cfg.name != "dcpse":
        raise InvalidParams(f"{cfg.name} needs an explicit zeroth-moment choice")
    if cfg.basis_kind not in row.bases:
        raise InvalidParams(f"{cfg.name} does not use {cfg.basis_kind} (allowed: {row.bases})")
    allowed_routes = {"gfdm": ("l2p", "l2e")}.get(cfg.name, (row.route,))
    if cfg.route not in allowed_routes:
        raise InvalidParams(f"{cfg.name} cannot use route {cfg.route}")
    p = cfg.params
    if cfg.name == "mmls" and not float(cfg.param("mu")) > 0:
        raise InvalidParams("mmls needs mu > 0")
    for key in ("eps_omega", "eps_boundary", "eps_fpsm"):
        if float(cfg.param(key)) < 0:
            raise InvalidParams(f"{key} must be non-negative")
    if cfg.name == "grkp":
        l = int(cfg.param("grkp_l"))
        if not 0 <= l < cfg.order:
            raise InvalidParams("grkp needs 0 <= l < m")
        if cfg.include_zeroth != (l == 0):
            raise InvalidParams("grkp includes the zeroth moment exactly when l = 0")
    if cfg.name == "mfdm":
        L = cfg.param("mfdm_L")
        L = _default_low_order(cfg.order) if L is None else int(L)
        if not 1 <= L < cfg.order or cfg.order > 2 * L:
            raise InvalidParams("mfdm needs 1 <= L < m <= 2 L")
        if int(cfg.param("mfdm_iters")) < 0:
            raise InvalidParams("mfdm_iters must be non-negative")
    if cfg.param("rank_policy") not in ("strict", "consistent"):
        raise InvalidParams(f"unknown rank policy {cfg.param('rank_policy')!r}")
    if cfg.name == "ldd" and cfg.param("ldd_variant") not in ("naive", "sum", "ls_full", "ls_basic"):
        raise InvalidParams(f"unknown ldd variant {cfg.param('ldd_variant')!r}")
    if cfg.name == "lskum" and p.get("direction") is not None:
        _check_direction(p["direction"], cfg.dim)
    if cfg.name == "kmm" and p.get("velocity") is not None:
        if np.asarray(p["velocity"], float).shape != (cfg.dim,):
            raise InvalidParams("velocity must have one component per dimension")
    return cfg


def _default_low_order(m: int) -> int:
    return max(1, (m + 1) // 2)


def _check_direction(direction, dim):
    try:
        axis, sign = direction
        axis, sign = int(axis), float(sign)
    except (TypeError, ValueError):
        raise InvalidParams("direction must be (axis, sign)") from None
    if not 0 <= axis < dim or sign not in (-1.0, 1.0):
        raise InvalidParams("direction needs an axis in range and sign +1 or -1")
    return axis, sign


def method_weights(cfg: MethodConfig, nbhd, op, **data) -> StencilWeights:
    """Stencil of a configured method for one neighbourhood.

    Extra keyword data is forwarded to the penalised methods (CMLS data
    ``f``, ``g`` and boundary flags).
    """
    name = cfg.name
    if name == "dcpse":
        return dcpse_weights(nbhd, op, cfg.order, cfg.window, cfg.precondition, cfg.basis_kind,
                             cfg.polynomial, rank_policy=cfg.param("rank_policy"))
    if name == "mmls":
        return mmls_weights(nbhd, cfg.family(), op, float(cfg.param("mu")))
    if name == "cmls":
        return cmls_weights(nbhd, cfg.family(), op, eps_omega=float(cfg.param("eps_omega")),
                            eps_boundary=float(cfg.param("eps_boundary")), **data)
    if name == "fpsm":
        return fpsm_weights(nbhd, cfg.window, cfg.index_set(), op, float(cfg.param("eps_fpsm")))
    if name == "lskum":
        direction = cfg.param("direction") or (0, 1.0)
        return lskum_weights(nbhd, cfg.window, cfg.index_set(), op, direction)
    if name == "kmm":
        velocity = cfg.param("velocity")
        if velocity is None:
            velocity = np.zeros(cfg.dim)
            velocity[0] = 1.0
        return kmm_weights(nbhd, cfg.window, cfg.index_set(), op, velocity)
    if name == "ldd":
        mv = mapping_vector(op, multi_index_set(cfg.dim, 2, False))
        if mv.degrees == {1}:
            G = ldd_gradient(nbhd, cfg.window)
            first = [mv.values[k] for k in range(cfg.dim)]
            w = np.asarray(first) @ G
            return StencilWeights(nbhd.center, nbhd.members.copy(), w, "on_differences", "ldd",
                                  moment_residual_inf=_relative_residual(
                                      nbhd.offsets, w, mapping_vector(op, multi_index_set(cfg.dim, 1, False)),
                                      nbhd.radius))
        lap = mapping_vector("laplacian", mv.index_set)
        if not np.array_equal(mv.values, lap.values):
            raise InvalidParams("ldd provides gradients and the Laplacian only")
        return ldd_laplacian(nbhd, cfg.window, cfg.param("ldd_variant"))
    if cfg.route == "direct":
        return direct_derivative_weights(nbhd, cfg.window, cfg.index_set(), op)
    family = cfg.family()
    policy = cfg.param("rank_policy")
    if cfg.route == "aom":
        volumes = _volumes(cfg, nbhd)
        return aom_weights(nbhd, family, op, precondition=cfg.precondition, volumes=volumes,
                           rank_policy=policy)
    if cfg.route == "l2e":
        return l2e_weights(nbhd, family, op, rank_policy=policy)
    if cfg.route == "l2p":
        return l2p_weights(nbhd, family, op, rank_policy=policy)
    if cfg.route == "gl2p":
        return gl2p_weights(nbhd, family, op, precondition=cfg.precondition, rank_policy=policy)
    raise InvalidParams(f"unknown route {cfg.route!r}")


def _volumes(cfg: MethodConfig, nbhd):
    v = cfg.param("volumes")
    if cfg.name != "hocsph" or v is None or (isinstance(v, str) and v == "unit"):
        return None
    if isinstance(v, str):
        raise InvalidParams(f"unknown volume option {v!r}")
    v = np.asarray(v, dtype=float)
    return v[nbhd.members] if v.ndim == 1 and v.shape[0] > nbhd.size - 1 else v


# ---------------------------------------------------------------------------
# DC-PSE
# ---------------------------------------------------------------------------

def dcpse_weights(nbhd, op, order: int, window: RadialWindow | None = None,
                  precondition: bool = True, basis_kind: str = "scaled_taylor_monomials",
                  polynomial: str = "legendre", rank_policy: str = "strict") -> StencilWeights:
    """Signed-difference stencil ``sum_j (u_j + s u_i) w_j``.

    Odd-order operators use ``s = -1`` and drop the zeroth moment row; even
    orders use ``s = +1`` and keep the zeroth row with target 0, so the
    weights sum to zero and the centre term cancels.

    Raises
    ------
    InvalidParams
        If the operator mixes odd and even orders.
    """
    window = window or RadialWindow("gaussian")
    dim = nbhd.dim
    terms = parse_operator(op, dim) if isinstance(op, str) else list(op)
    if isinstance(op, MappingVector):
        terms = [(a, v) for a, v in zip(op.index_set.indices, op.values) if v != 0.0]
    parities = {sum(a) % 2 for a, c in terms if c != 0.0}
    if len(parities) != 1:
        raise InvalidParams("DC-PSE operators must have terms of uniform parity")
    even = parities.pop() == 0
    if even and any(sum(a) == 0 for a, _ in terms):
        raise InvalidParams("DC-PSE does not approximate the identity")
    family = AbfFamily(basis_kind, window, multi_index_set(dim, order, even), polynomial)
    sw = aom_weights(nbhd, family, terms, precondition=precondition, rank_policy=rank_policy)
    sw.form = "dcpse_signed"
    sw.route = "aom"
    sw.center_sign = 1.0 if even else -1.0
    return sw


# ---------------------------------------------------------------------------
# Least-squares variants with penalties: MMLS and CMLS
# ---------------------------------------------------------------------------

def _scaled_fit_basis(family: AbfFamily, nbhd):
    """Fit basis without window, Taylor monomials replaced by their h-scaled form."""
    from .engines import _least_squares_basis

    basis = _least_squares_basis(family, family.index_set.include_zeroth)
    return basis, abf_matrix(basis, nbhd.offsets, nbhd.radius)


def _operator_vector(basis: AbfFamily, h, mv: MappingVector) -> np.ndarray:
    from .basis import basis_derivatives_at_origin

    out = np.zeros(basis.index_set.p)
    for alpha, c in zip(mv.index_set.indices, mv.values):
        if c != 0.0:
            out += c * basis_derivatives_at_origin(basis, h, alpha)
    return out


def mmls_weights(nbhd, family: AbfFamily, op, mu: float) -> StencilWeights:
    """Least squares with ``mu`` added to the leading-order moment diagonal.

    The fit minimises ``sum_j phi_j (u_j - P_j . c)**2 + mu |c_lead|**2``
    where ``c_lead`` are the coefficients of total degree ``m`` in the
    ``h``-scaled basis.  Lower-degree polynomials are still reproduced
    exactly, and neighbourhoods that cannot resolve degree ``m`` remain
    solvable.  ``mu = 0`` gives the plain fit.

    Returns
    -------
    StencilWeights
        ``coefficients`` holds ``Psi = (M + mu I_lead)^-1 b``.
    """
    if mu < 0:
        raise InvalidParams("mu must be non-negative")
    iset = family.index_set
    mv = mapping_vector(op, iset)
    basis, P = _scaled_fit_basis(family, nbhd)
    phi = window_values(family.window, nbhd.offsets, nbhd.radius)
    M = _symmetric_gram(P, phi)
    lead = iset.degrees == iset.order
    M[lead, lead] += mu
    f = factor_rank(M)
    _require_full_rank(f, iset.p, "regularised moment matrix")
    b = _operator_vector(basis, nbhd.radius, mv)
    psi = _qr_solve_square(f, b)
    w = phi * (P @ psi)
    form = "on_values" if iset.include_zeroth else "on_differences"
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, form, "l2e", cond=f.cond,
                          moment_residual_inf=_relative_residual(nbhd.offsets, w, mv, nbhd.radius),
                          coefficients=psi)


def _operator_rows(op, offsets, h, iset: MultiIndexSet):
    """``(Op X~)(d)`` for the h-scaled Taylor monomials at every offset."""
    mv = mapping_vector(op, iset)
    rows = np.zeros((len(offsets), iset.p))
    y = np.asarray(offsets, dtype=float) / h
    for alpha, c in zip(iset.indices, mv.values):
        if c != 0.0:
            rows += c * h ** (-sum(alpha)) * monomial_derivative_matrix(y, iset, alpha)
    return rows


def cmls_weights(nbhd, family: AbfFamily, op, eps_omega: float = 0.0, eps_boundary: float = 0.0,
                 interior_op=None, boundary_op=None, f=None, g=None, boundary_mask=None,
                 constrain_center: bool = False, g_center: float | None = None) -> StencilWeights:
    """Least squares with PDE and boundary residual penalties.

    Minimises over the h-scaled Taylor coefficients ``c``::

        sum_j phi_j [ (u_j - X_j c)**2
                      + eps_omega (f_j - (A X)_j c)**2
                      + b_j eps_boundary (g_j - (B X)_j c)**2 ]

    with ``A`` the interior operator, ``B`` the boundary operator and ``b_j``
    the boundary flags.  With ``constrain_center`` the condition
    ``(B X)(0) c = g_center`` is imposed exactly through a bordered system.
    The returned stencil is ``L u = sum_j w_j u_j + affine``; the affine part
    carries the ``f`` and ``g`` data.

    Parameters
    ----------
    f, g : array_like, optional
        Interior and boundary data at the neighbourhood members.
    boundary_mask : array_like of bool, optional
        Members on the boundary.

    Raises
    ------
    SingularMoment, SingularBordered
    """
    iset = family.index_set
    if not iset.include_zeroth:
        raise InvalidParams("cmls fits values and needs the zeroth index")
    if eps_omega < 0 or eps_boundary < 0:
        raise InvalidParams("penalty weights must be non-negative")
    h = nbhd.radius
    d = nbhd.offsets
    n = len(d)
    mv = mapping_vector(op, iset)
    H = preconditioner(h, iset).diag
    Xs = monomial_matrix(d / h, iset)
    phi = window_values(family.window, d, h)
    dim = iset.dim
    interior_op = interior_op if interior_op is not None else "laplacian"
    boundary_op = boundary_op if boundary_op is not None else [((0,) * dim, 1.0)]
    A = _operator_rows(interior_op, d, h, iset) if eps_omega > 0 else np.zeros((n, iset.p))
    chi = np.zeros(n) if boundary_mask is None else np.asarray(boundary_mask, float)
    B = _operator_rows(boundary_op, d, h, iset)
    M = _symmetric_gram(Xs, phi)
    if eps_omega > 0:
        M = M + _symmetric_gram(A, eps_omega * phi)
    if eps_boundary > 0 and chi.any():
        M = M + _symmetric_gram(B, eps_boundary * phi * chi)
    c_tilde = H * mv.values
    p = iset.p
    if constrain_center:
        b0 = _operator_rows(boundary_op, np.zeros((1, dim)), h, iset)[0]
        K = np.zeros((p + 1, p + 1))
        K[:p, :p] = M
        K[:p, p] = b0
        K[p, :p] = b0
        fk = factor_rank(K)
        if fk.rank < p + 1:
            raise SingularBordered("bordered system is singular", rank=fk.rank, size=p + 1)
        rhs = np.append(c_tilde, 0.0)
        sol = _qr_solve_square(fk, rhs)
        z, zeta = sol[:p], sol[p]
        cond = fk.cond
    else:
        fm = factor_rank(M)
        _require_full_rank(fm, p, "penalised moment matrix")
        z = _qr_solve_square(fm, c_tilde)
        zeta = 0.0
        cond = fm.cond
    w = phi * (Xs @ z)
    affine = 0.0
    if eps_omega > 0 and f is not None:
        affine += float(np.sum(eps_omega * phi * np.asarray(f, float) * (A @ z)))
    if eps_boundary > 0 and chi.any() and g is not None:
        affine += float(np.sum(eps_boundary * phi * chi * np.asarray(g, float) * (B @ z)))
    if constrain_center:
        if g_center is None:
            raise InvalidParams("constrain_center needs g_center")
        affine += float(zeta * g_center)
    # defect on consistent data: monomial u with f = A u and g = B u
    defect = (Xs.T @ w + eps_omega * (A.T @ (phi * (A @ z)))
              + eps_boundary * (B.T @ (phi * chi * (B @ z))))
    if constrain_center:
        b0 = _operator_rows(boundary_op, np.zeros((1, dim)), h, iset)[0]
        defect = defect + zeta * b0
    scale = np.abs(c_tilde).max() or 1.0
    res = float(np.abs(defect - c_tilde).max() / scale)
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, "on_values", "l2e", cond=cond,
                          moment_residual_inf=res, coefficients=z, affine=affine,
                          extra={"zeta": zeta})


# ---------------------------------------------------------------------------
# FPsM: prescribed centre weight
# ---------------------------------------------------------------------------

def fpsm_weights(nbhd, window: RadialWindow, index_set: MultiIndexSet, op,
                 eps: float = 1.0) -> StencilWeights:
    """Least-norm weights with the extra condition ``w_ii = -eps / h**2``.

    The moment system is extended by the row ``sum_j delta_ji w_j`` with
    ``X+ = [X, delta]`` and ``W+ = X+ phi``.  The extra row is scaled by
    ``h**2`` for conditioning.
    """
    if not index_set.include_zeroth:
        raise InvalidParams("fpsm acts on values and needs the zeroth index")
    if eps < 0:
        raise InvalidParams("eps must be non-negative")
    mv = mapping_vector(op, index_set)
    h = nbhd.radius
    d = nbhd.offsets
    family = AbfFamily("extended_taylor", window, index_set)
    Xp = abf_matrix(AbfFamily("extended_taylor", RadialWindow("constant"), index_set), d, h,
                    self_mask=nbhd.members == nbhd.center)
    phi = window_values(family.window, d, h)
    scale = np.append(preconditioner(h, index_set).diag, h**2)
    Xs = Xp * scale
    target = np.append(mv.values, -eps / h**2) * scale
    M = _symmetric_gram(Xs, phi)
    f = factor_rank(M)
    _require_full_rank(f, index_set.p + 1, "extended moment matrix")
    psi = _qr_solve_square(f, target)
    w = phi * (Xs @ psi)
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, "on_values", "l2p", cond=f.cond,
                          moment_residual_inf=_relative_residual(d, w, mv, h), coefficients=psi)


# ---------------------------------------------------------------------------
# Upwind methods: LSKUM and KMM
# ---------------------------------------------------------------------------

def lskum_weights(nbhd, window: RadialWindow, index_set: MultiIndexSet, op,
                  direction) -> StencilWeights:
    """Least squares on the half neighbourhood ``sign * (x_j - x_i)[axis] >= 0``.

    Excluded members get weight exactly 0; the centre never contributes.
    """
    if index_set.include_zeroth:
        raise InvalidParams("lskum acts on differences; use a set without the zeroth index")
    axis, sign = _check_direction(direction, nbhd.dim)
    keep = sign * nbhd.offsets[:, axis] >= 0.0
    keep[nbhd.self_slot] = False
    sub = nbhd.subset(keep)
    family = AbfFamily("taylor_monomials", window, index_set)
    sw = l2e_weights(sub, family, op)
    w = np.zeros(nbhd.size)
    w[np.searchsorted(nbhd.members, sub.members)] = sw.weights
    w[nbhd.self_slot] = 0.0
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, "on_differences", "l2e",
                          cond=sw.cond, moment_residual_inf=sw.moment_residual_inf,
                          extra={"kept": keep})


def kmm_midpoint_weights(nbhd, window: RadialWindow, index_set: MultiIndexSet, op) -> np.ndarray:
    """Weights acting on midpoint differences ``u_(ji/2) - u_i``.

    ``w_j = phi_j X(d_j / 2) . M^-1 C`` with ``M = sum phi X(d/2) X(d/2)^T``,
    evaluated through a QR factorisation of ``sqrt(phi) X(d / 2h)``.
    """
    if index_set.include_zeroth:
        raise InvalidParams("kmm acts on differences; use a set without the zeroth index")
    mv = mapping_vector(op, index_set)
    h = nbhd.radius
    half = 0.5 * nbhd.offsets
    H = preconditioner(h, index_set).diag
    Xs = monomial_matrix(half / h, index_set)
    sw = np.sqrt(window_values(window, nbhd.offsets, h))
    A = sw[:, None] * Xs
    f = factor_rank(A, equilibrate=False)
    _require_full_rank(f, index_set.p, "midpoint least-squares system")
    y = sla.solve_triangular(f.r, (H * mv.values)[f.perm], trans="T")
    return sw * (f.q @ y)


def kmm_weights(nbhd, window: RadialWindow, index_set: MultiIndexSet, op,
                velocity) -> StencilWeights:
    """Upwinded midpoint stencil.

    The midpoint value is ``u_i`` when ``v . e_ji >= 0`` and ``u_j``
    otherwise, so only members with ``v . e_ji < 0`` keep their weight.
    """
    v = np.asarray(velocity, dtype=float).reshape(-1)
    if v.shape[0] != nbhd.dim:
        raise InvalidParams("velocity must have one component per dimension")
    w_mid = kmm_midpoint_weights(nbhd, window, index_set, op)
    upwind = nbhd.offsets @ v < 0.0
    w = np.where(upwind, w_mid, 0.0)
    mv = mapping_vector(op, index_set)
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, "on_differences", "l2e",
                          moment_residual_inf=_relative_residual(0.5 * nbhd.offsets, w_mid, mv,
                                                                 nbhd.radius),
                          extra={"midpoint_weights": w_mid, "upwind": upwind})


# ---------------------------------------------------------------------------
# MFDM: iterated higher-order corrections from low-order operators
# ---------------------------------------------------------------------------

def mfdm_split(beta: Sequence[int], low_order: int) -> tuple[tuple, tuple]:
    """Split ``beta = t + s`` with ``1 <= |s| <= |t| <= low_order``.

    ``t`` is the first index in graded-lex order with
    ``|t| = min(low_order, |beta| - 1)`` and ``t <= beta`` componentwise.
    """
    beta = tuple(int(b) for b in beta)
    total = sum(beta)
    deg = min(low_order, total - 1)
    if deg < 1 or total - deg > low_order:
        raise InvalidParams(f"{beta} cannot be split into orders <= {low_order}")
    for t in multi_index_set(len(beta), deg, False).indices:
        if sum(t) == deg and all(a <= b for a, b in zip(t, beta)):
            return t, tuple(b - a for a, b in zip(t, beta))
    raise InvalidParams(f"no split found for {beta}")


@dataclass
class MfdmResult:
    """Corrected low-order derivatives for every point.

    Attributes
    ----------
    index_set : MultiIndexSet
        Low-order set (without the zeroth index).
    derivatives : ndarray, shape (N, p_L)
    initial : ndarray, shape (N, p_L)
        Uncorrected estimates.
    increments : list of float
        Largest change per sweep.
    """

    index_set: MultiIndexSet
    derivatives: np.ndarray
    initial: np.ndarray
    increments: list

    def apply(self, op) -> np.ndarray:
        mv = mapping_vector(op, self.index_set)
        return self.derivatives @ mv.values


def mfdm_extrapolate(neighborhoods, values, low_order: int, order: int, iters: int = 3,
                     window: RadialWindow | None = None) -> MfdmResult:
    """Higher-order derivative estimates from order-``L`` least squares.

    Each sweep estimates the derivatives of order ``L < |beta| <= m`` by
    applying the low-order operators to the previous low-order estimates
    (``d^beta u = d^t (d^s u)``), and removes their Taylor contribution
    from the low-order fit.  Sweeps read the previous iterate only.

    Warns
    -----
    NonContractive
        If a sweep changes the estimates more than the one before.
    """
    if not 1 <= low_order < order or order > 2 * low_order:
        raise InvalidParams("mfdm needs 1 <= L < m <= 2 L")
    if iters < 0:
        raise InvalidParams("iters must be non-negative")
    nbhds = list(neighborhoods)
    window = window or RadialWindow()
    u = np.asarray(values, dtype=float)
    dim = nbhds[0].dim
    low = multi_index_set(dim, low_order, False)
    full = multi_index_set(dim, order, False)
    high = [a for a in full.indices if sum(a) > low_order]
    high_set_cols = [full.position(a) for a in high]
    splits = [mfdm_split(b, low_order) for b in high]
    t_pos = np.array([low.position(t) for t, _ in splits])
    s_pos = np.array([low.position(s) for _, s in splits])
    family = AbfFamily("taylor_monomials", window, low)
    ops, trans = [], []
    for nb in nbhds:
        A = l2e_solve(nb, family).coefficients
        ops.append(A)
        trans.append(A @ monomial_matrix(nb.offsets, full)[:, high_set_cols])
    n = len(nbhds)
    D0 = np.empty((n, low.p))
    for i, nb in enumerate(nbhds):
        D0[i] = ops[i] @ (u[nb.members] - u[nb.center])
    D = D0.copy()
    increments = []
    for _ in range(iters):
        nxt = np.empty_like(D)
        for i, nb in enumerate(nbhds):
            diff = D[nb.members][:, s_pos] - D[i, s_pos]
            hi = np.einsum("kj,jk->k", ops[i][t_pos], diff)
            nxt[i] = D0[i] - trans[i] @ hi
        step = float(np.abs(nxt - D).max())
        if increments and step > increments[-1] * (1 + 1e-12) and step > 1e-14 * np.abs(D).max():
            warnings.warn(f"mfdm sweep grew from {increments[-1]:.3e} to {step:.3e}",
                          NonContractive, stacklevel=2)
        increments.append(step)
        D = nxt
    return MfdmResult(low, D, D0, increments)


# ---------------------------------------------------------------------------
# LDD: gradient and renormalised Laplacians
# ---------------------------------------------------------------------------

def _ldd_parts(nbhd, window):
    keep = np.ones(nbhd.size, bool)
    keep[nbhd.self_slot] = False
    x = nbhd.offsets[keep]
    phi = window_values(window, x, nbhd.radius)
    M1 = _symmetric_gram(x, phi)
    f = factor_rank(M1)
    _require_full_rank(f, nbhd.dim, "first-order moment matrix")
    return keep, x, phi, M1


def ldd_gradient(nbhd, window: RadialWindow | None = None) -> np.ndarray:
    """Gradient weights ``phi_j (M1)^-1 x_j`` on differences, shape (dim, N_i)."""
    window = window or RadialWindow()
    keep, x, phi, M1 = _ldd_parts(nbhd, window)
    G = np.zeros((nbhd.dim, nbhd.size))
    G[:, keep] = np.linalg.solve(M1, (x * phi[:, None]).T)
    return G


def ldd_laplacian(nbhd, window: RadialWindow | None = None, variant: str = "ls_full",
                  grad=None) -> StencilWeights:
    """Laplacian stencil on differences for one of four LDD variants.

    ``naive`` uses the window normalised to unit sum over the neighbours;
    ``sum`` removes the offset vector ``O = sum phi x``; ``ls_full`` and
    ``ls_basic`` solve with the renormalisation matrices built from the
    squared offsets.  The centre is excluded from all sums.

    Parameters
    ----------
    grad : ndarray, shape (dim, N_i), optional
        Precomputed gradient weights.

    Raises
    ------
    ZeroDenominator
        If a normalising sum vanishes.
    """
    window = window or RadialWindow()
    keep, x, phi, M1 = _ldd_parts(nbhd, window)
    n = nbhd.dim
    G = ldd_gradient(nbhd, window) if grad is None else np.asarray(grad, dtype=float)
    Gk = G[:, keep]
    r2 = (x**2).sum(axis=1)
    wk = np.zeros(len(x))
    if variant == "naive":
        total = phi.sum()
        if total == 0.0:
            raise ZeroDenominator("window sum vanished")
        psi = phi / total
        a = psi / r2
        wk = 2 * n * (a - (a @ x) @ Gk)
    elif variant == "sum":
        O = phi @ x
        corr = 1.0 - x @ np.linalg.solve(M1, O)
        denom = float(np.sum(phi * r2 * corr))
        if denom == 0.0:
            raise ZeroDenominator("sum approximation denominator vanished")
        wk = 2 * n * phi * corr / denom
    elif variant in ("ls_full", "ls_basic"):
        X2 = x**2
        S = (X2 * phi[:, None]).T @ x
        Q = X2 - x @ np.linalg.solve(M1, S.T)
        R = _symmetric_gram(Q, phi) if variant == "ls_full" else _symmetric_gram(X2, phi)
        fr = factor_rank(R)
        _require_full_rank(fr, n, "renormalisation matrix")
        coef = _qr_solve_square(fr, np.ones(n))
        b = 2.0 * phi * (Q @ coef)
        wk = b - (b @ x) @ Gk
    else:
        raise InvalidParams(f"unknown ldd variant {variant!r}")
    w = np.zeros(nbhd.size)
    w[keep] = wk
    lap = mapping_vector("laplacian", multi_index_set(n, 2, False))
    return StencilWeights(nbhd.center, nbhd.members.copy(), w, "on_differences", "ldd",
                          moment_residual_inf=_relative_residual(nbhd.offsets, w, lap, nbhd.radius))
