"""Global sparse operators and a Poisson solver with Dirichlet row replacement."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cloud import PointCloud, build_neighborhoods
from .engines import StencilWeights
from .errors import LinearSolveFailure, SingularMoment
from .methods import MethodConfig, method_weights

logger = logging.getLogger(__name__)

__all__ = ["GlobalOperator", "BoundarySpec", "PoissonResult", "assemble", "solve_poisson",
           "solve_linear", "write_coo", "read_coo"]

DENSE_LIMIT = 2000


@dataclass
class GlobalOperator:
    """Sparse ``N x N`` operator ``L u = A u + offset``.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix
    offset : ndarray
        Affine contributions (non-zero only for data-carrying methods).
    stencils : list
        ``StencilWeights`` per row, ``None`` for rows left empty.
    """

    matrix: sp.csr_matrix
    offset: np.ndarray
    stencils: list = field(repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, values) -> np.ndarray:
        """Evaluate ``L u``; difference-form rows act on ``u_j - s u_i`` directly.

        Keeping the differences unfolded makes constants map to exactly zero
        for consistent operators, which the folded matrix only achieves up to
        rounding.
        """
        u = np.asarray(values, dtype=float)
        out = self.offset.copy()
        for i, sw in enumerate(self.stencils):
            if sw is not None:
                out[i] += sw.apply(u) - sw.affine
        return out


@dataclass
class BoundarySpec:
    """Dirichlet boundary description.

    Parameters
    ----------
    boundary_ids : array_like of int
        Points whose rows are replaced.
    dirichlet : callable or array_like
        ``g(x)`` evaluated on positions of shape ``(k, dim)``, or the values.
    """

    boundary_ids: np.ndarray
    dirichlet: Callable | np.ndarray | float = 0.0

    def values(self, cloud: PointCloud) -> np.ndarray:
        ids = np.asarray(self.boundary_ids, dtype=int)
        if callable(self.dirichlet):
            return np.asarray(self.dirichlet(cloud.positions[ids]), dtype=float).reshape(-1)
        return np.broadcast_to(np.asarray(self.dirichlet, dtype=float), ids.shape).copy()

    @classmethod
    def from_cloud(cls, cloud: PointCloud, dirichlet=0.0) -> "BoundarySpec":
        return cls(np.flatnonzero(cloud.boundary), dirichlet)


def assemble(cfg: MethodConfig, cloud: PointCloud, op, neighborhoods=None, rows=None,
             skip=None, stencil_data=None) -> GlobalOperator:
    """Assemble the sparse operator row by row.

    Parameters
    ----------
    cfg : MethodConfig
    cloud : PointCloud
    op : operator specification
    neighborhoods : list of Neighborhood, optional
    rows : array_like of int, optional
        Rows to compute; all by default.
    skip : array_like of int, optional
        Rows left empty (for example boundary points).
    stencil_data : callable, optional
        ``stencil_data(nbhd) -> dict`` of extra keyword data for the method.

    Raises
    ------
    SingularMoment
        With the failing row recorded in the message.
    """
    nbhds = neighborhoods if neighborhoods is not None else build_neighborhoods(cloud)
    n = cloud.n_points
    todo = np.arange(n) if rows is None else np.asarray(rows, dtype=int)
    if skip is not None:
        todo = np.setdiff1d(todo, np.asarray(skip, dtype=int))
    r_idx, c_idx, vals = [], [], []
    offset = np.zeros(n)
    stencils: list[StencilWeights | None] = [None] * n
    for i in todo:
        extra = stencil_data(nbhds[i]) if stencil_data is not None else {}
        try:
            sw = method_weights(cfg, nbhds[i], op, **extra)
        except SingularMoment as exc:
            raise type(exc)(f"row {i}: {exc}", rank=exc.rank, size=exc.size) from exc
        cols, w = sw.folded()
        r_idx.append(np.full(len(cols), i))
        c_idx.append(cols)
        vals.append(w)
        offset[i] = sw.affine
        stencils[i] = sw
    if r_idx:
        r_all, c_all, v_all = map(np.concatenate, (r_idx, c_idx, vals))
    else:
        r_all = c_all = np.zeros(0, int)
        v_all = np.zeros(0)
    A = sp.csr_matrix((v_all, (r_all, c_all)), shape=(n, n))
    A.sum_duplicates()
    return GlobalOperator(A, offset, stencils)


def solve_linear(A, b, method: str = "auto", tol: float = 1e-10):
    """Solve ``A x = b``; dense LU up to ``DENSE_LIMIT`` unknowns, else Krylov.

    The Krylov path scales rows by the inverse diagonal, tries GMRES and
    then BiCGSTAB, each capped at ``10 N`` iterations.

    Returns
    -------
    x : ndarray
    info : dict
        ``method``, ``iterations`` and the final relative ``residual``.

    Raises
    ------
    LinearSolveFailure
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    bnorm = float(np.linalg.norm(b)) or 1.0
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "gmres"
    if method == "dense":
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu = sla.lu_factor(A.toarray(), check_finite=True)
            if np.any(np.diag(lu[0]) == 0.0):
                raise LinearSolveFailure("matrix is singular")
            x = sla.lu_solve(lu, b)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise LinearSolveFailure(f"dense solve failed: {exc}") from exc
        res = float(np.linalg.norm(A @ x - b)) / bnorm
        if not np.isfinite(res):
            raise LinearSolveFailure("dense solve produced non-finite values")
        return x, {"method": "dense", "iterations": 1, "residual": res}
    diag = A.diagonal()
    scale = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
    As = sp.diags(scale) @ A
    bs = scale * b
    cap = 10 * n
    attempts = ("gmres", "bicgstab") if method == "gmres" else (method,)
    best = None
    for name in attempts:
        count = [0]

        def cb(_):
            count[0] += 1

        if name == "gmres":
            x, info = spla.gmres(As, bs, rtol=tol, atol=0.0, restart=min(200, n), maxiter=cap,
                                 callback=cb, callback_type="pr_norm")
        elif name == "bicgstab":
            x, info = spla.bicgstab(As, bs, rtol=tol, atol=0.0, maxiter=cap, callback=cb)
        else:
            raise ValueError(f"unknown solver {name!r}")
        res = float(np.linalg.norm(A @ x - b)) / bnorm
        logger.debug("%s finished with info=%d after %d iterations, residual %.3e", name, info,
                     count[0], res)
        if info == 0 and np.isfinite(res):
            return x, {"method": name, "iterations": count[0], "residual": res}
        best = (name, res)
    raise LinearSolveFailure(f"{best[0]} did not converge (relative residual {best[1]:.3e})")


@dataclass
class PoissonResult:
    solution: np.ndarray
    matrix: sp.csr_matrix
    rhs: np.ndarray
    info: dict
    operator: GlobalOperator = field(repr=False)


def solve_poisson(cfg: MethodConfig, cloud: PointCloud, f, boundary: BoundarySpec | None = None,
                  neighborhoods=None, solver: str = "auto", tol: float = 1e-10) -> PoissonResult:
    """Solve ``laplacian u = f`` with Dirichlet data on ``boundary``.

    Interior rows hold the method's Laplacian stencil; boundary rows are
    replaced by the identity with ``g`` on the right-hand side.

    Parameters
    ----------
    f : callable or array_like
        Source term; callables receive positions of shape ``(N, dim)``.
    boundary : BoundarySpec, optional
        Defaults to the cloud's boundary flags with ``g = 0``.
    """
    boundary = boundary if boundary is not None else BoundarySpec.from_cloud(cloud)
    bids = np.asarray(boundary.boundary_ids, dtype=int)
    gop = assemble(cfg, cloud, "laplacian", neighborhoods, skip=bids)
    n = cloud.n_points
    fv = np.asarray(f(cloud.positions), dtype=float) if callable(f) else \
        np.broadcast_to(np.asarray(f, dtype=float), (n,)).copy()
    rhs = fv - gop.offset
    A = gop.matrix.tolil()
    for i in bids:
        A.rows[i] = [int(i)]
        A.data[i] = [1.0]
    rhs[bids] = boundary.values(cloud)
    A = A.tocsr()
    u, info = solve_linear(A, rhs, method=solver, tol=tol)
    return PoissonResult(u, A, rhs, info, gop)


def write_coo(path, matrix):
    """Write ``row col value`` lines with 0-based indices."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_coo(path, shape=None) -> sp.csr_matrix:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if shape is None:
        with open(path) as fh:
            head = fh.readline().lstrip("#").split()
        shape = (int(head[0]), int(head[1]))
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
