"""Convergence, route-equivalence and stencil studies.

The study functions return plain Python data (rows or dictionaries) so the
command-line front end only has to serialise them.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import sympy

from .assembly import BoundarySpec, assemble, solve_poisson
from .basis import AbfFamily, RadialWindow
from .cloud import (PointCloud, build_neighborhoods, jittered_grid, make_rng, random_cloud,
                    regular_grid)
from .engines import aom_weights, gl2p_weights, l2e_weights, l2p_weights
from .errors import InvalidParams, SingularMoment, UnknownMethod
from .indexing import multi_index_set, parse_operator
from .methods import METHOD_TABLE, mfdm_extrapolate, method_weights, preset

logger = logging.getLogger(__name__)

__all__ = [
    "StudyConfig",
    "CSV_HEADER",
    "ROUTE_NAMES",
    "default_ratio",
    "make_cloud",
    "test_function",
    "run_convergence",
    "run_poisson_study",
    "run_equivalence",
    "run_stencil",
    "rows_to_csv",
    "fit_slope",
]

CSV_HEADER = ("h", "n_points", "method", "op", "linf", "l2", "slope")
SATURATION_LEVEL = 1e-9
EQUIVALENCE_TOL = 1e-10
GENERATORS = ("regular", "jittered", "random")
# bare routes usable wherever a method name is expected
ROUTE_NAMES = ("aom", "aom-no-zeroth", "l2e", "l2e-no-zeroth", "l2p", "l2p-no-zeroth", "gl2p")


def default_ratio(dim: int, order: int) -> float:
    """Support radius over spacing that keeps jittered stencils unisolvent."""
    return order + 0.5 if dim == 1 else 1.5 + 0.5 * order


@dataclass(frozen=True)
class StudyConfig:
    """Description of a study on the unit box ``[0, 1]**dim``.

    Parameters
    ----------
    generator : {"regular", "jittered", "random"}
    jitter : float
        Perturbation as a fraction of the spacing, in ``[0, 0.5)``.
    sizes : tuple of float
        Nominal spacings, strictly decreasing.
    method : str
        Preset name or one of ``ROUTE_NAMES``.
    options : dict
        Overrides passed to :func:`collocate.methods.preset`.
    ratio : float, optional
        Support radius in units of the spacing; see :func:`default_ratio`.
    """

    generator: str = "jittered"
    jitter: float = 0.2
    sizes: tuple = (0.1, 0.05, 0.025)
    dim: int = 2
    method: str = "gfdm"
    order: int = 2
    op: str = "d/dx"
    test_function: str = "sin_product"
    seed: int = 0
    ratio: float | None = None
    options: dict = field(default_factory=dict)
    basis: str = "taylor_monomials"
    window: str = "wendland_c2"
    sigma: float = 0.3

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InvalidParams(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if not 0.0 <= float(self.jitter) < 0.5:
            raise InvalidParams("jitter must lie in [0, 0.5)")
        sizes = tuple(float(s) for s in self.sizes)
        if not sizes or any(s <= 0 for s in sizes):
            raise InvalidParams("sizes must be positive")
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise InvalidParams("sizes must be strictly decreasing")
        object.__setattr__(self, "sizes", sizes)
        if self.dim not in (1, 2, 3):
            raise InvalidParams("dim must be 1, 2 or 3")

    @property
    def support_ratio(self) -> float:
        return float(self.ratio) if self.ratio is not None else default_ratio(self.dim, self.order)


def make_cloud(cfg: StudyConfig, spacing: float, level: int = 0) -> PointCloud:
    """Cloud of one ladder level; each level draws from its own seeded stream."""
    ratio = cfg.support_ratio
    if cfg.generator == "regular":
        return regular_grid(cfg.dim, spacing, ratio)
    rng = make_rng([int(cfg.seed), level])
    if cfg.generator == "jittered":
        return jittered_grid(cfg.dim, spacing, ratio, cfg.jitter, rng)
    return random_cloud(cfg.dim, spacing, ratio, rng)


# ---------------------------------------------------------------------------
# Analytic test fields
# ---------------------------------------------------------------------------

_POLY = re.compile(r"^polynomial\((\d+)\)$")


def _symbols(dim):
    return sympy.symbols(" ".join(f"x{k}" for k in range(dim)), real=True, seq=True)


def _expression(name: str, dim: int):
    xs = _symbols(dim)
    if name == "sin_product":
        return xs, sympy.Mul(*[sympy.sin(sympy.pi * x) for x in xs])
    if name == "gaussian_bump":
        r2 = sum((x - sympy.Rational(1, 2)) ** 2 for x in xs)
        return xs, sympy.exp(-r2 / sympy.Rational(2, 25))
    m = _POLY.match(name.replace(" ", ""))
    if m:
        k = int(m.group(1))
        iset = multi_index_set(dim, k, True)
        terms = [sympy.Rational(1, 1 + sum(a)) * sympy.Mul(*[x**e for x, e in zip(xs, a)])
                 for a in iset.indices]
        return xs, sympy.Add(*terms)
    raise InvalidParams(f"unknown test function {name!r}")


@lru_cache(maxsize=64)
def test_function(name: str, dim: int, op: str | None = None):
    """Vectorised field ``u(x)`` or, with ``op``, its exact image ``L u``.

    Both take positions of shape ``(N, dim)``.
    """
    xs, expr = _expression(name, dim)
    if op is not None:
        terms = parse_operator(op, dim)
        expr = sympy.Add(*[c * sympy.diff(expr, *[(x, a) for x, a in zip(xs, alpha) if a])
                           if any(alpha) else c * expr for alpha, c in terms])
    f = sympy.lambdify(xs, expr, "numpy")

    def evaluate(positions):
        X = np.asarray(positions, dtype=float)
        out = f(*[X[:, k] for k in range(dim)])
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    return evaluate


test_function.__test__ = False  # keep pytest from collecting it


# ---------------------------------------------------------------------------
# Method resolution
# ---------------------------------------------------------------------------

def _route_table():
    return {
        "aom": (aom_weights, True),
        "aom-no-zeroth": (aom_weights, False),
        "l2e": (l2e_weights, True),
        "l2e-no-zeroth": (l2e_weights, False),
        "l2p": (l2p_weights, True),
        "l2p-no-zeroth": (l2p_weights, False),
        "gl2p": (gl2p_weights, False),
    }


def _stencil_function(name: str, cfg: StudyConfig):
    """Callable ``nbhd -> StencilWeights`` for a preset or a bare route."""
    key = name.lower().replace("_", "-")
    routes = _route_table()
    policy = cfg.options.get("rank_policy", "strict")
    if key in routes:
        fn, zeroth = routes[key]
        family = AbfFamily(cfg.basis, RadialWindow(cfg.window, cfg.sigma),
                           multi_index_set(cfg.dim, cfg.order, zeroth))
        return lambda nb: fn(nb, family, cfg.op, rank_policy=policy)
    mcfg = preset(name, cfg.dim, cfg.order, **cfg.options)
    return lambda nb: method_weights(mcfg, nb, cfg.op)


def _known(name: str) -> bool:
    key = name.lower()
    return key.replace("_", "-") in ROUTE_NAMES or key.replace("-", "_") in METHOD_TABLE


def _check_method(name: str):
    if not _known(name):
        raise UnknownMethod(f"unknown method {name!r}")


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------

def fit_slope(sizes, errors) -> float:
    """Least-squares slope of ``log(err)`` against ``log(h)``."""
    return float(np.polyfit(np.log(np.asarray(sizes)), np.log(np.asarray(errors)), 1)[0])


def _inside(positions, layer):
    return np.all((positions >= layer) & (positions <= 1.0 - layer), axis=1)


def _levels(cfg: StudyConfig):
    clouds = [make_cloud(cfg, s, k) for k, s in enumerate(cfg.sizes)]
    # one evaluation region for the whole ladder: a point is kept when the
    # largest support on the ladder around it stays inside the box
    layer = max(float(c.radii.max()) for c in clouds)
    return clouds, layer


def _error_row(cfg, spacing, n, err, label):
    linf = float(np.abs(err).max()) if err.size else float("nan")
    l2 = float(np.sqrt(np.mean(err**2))) if err.size else float("nan")
    return {"h": spacing, "n_points": n, "method": label, "op": cfg.op, "linf": linf, "l2": l2,
            "slope": None}


def _finish(rows, cfg, label):
    errs = [r["linf"] for r in rows]
    if all(e <= SATURATION_LEVEL for e in errs):
        slope = "saturated"
    elif len(rows) < 2 or any(not e > 0 for e in errs):
        slope = float("nan")
    else:
        slope = fit_slope(cfg.sizes, errs)
    rows.append({"h": None, "n_points": None, "method": label, "op": cfg.op, "linf": None,
                 "l2": None, "slope": slope})
    return rows


def run_convergence(cfg: StudyConfig) -> list[dict]:
    """Errors of ``cfg.op`` applied to the test field on each ladder level.

    Errors are taken at points whose support, for every level, lies inside
    the box.  MFDM extends the excluded layer by one support per sweep
    because each sweep reads neighbouring estimates.

    Returns
    -------
    list of dict
        One row per spacing plus a final row holding the slope (or
        ``"saturated"`` when every error is at most 1e-9).
    """
    _check_method(cfg.method)
    clouds, layer = _levels(cfg)
    u = test_function(cfg.test_function, cfg.dim)
    exact = test_function(cfg.test_function, cfg.dim, cfg.op)
    is_mfdm = cfg.method.lower() == "mfdm"
    if is_mfdm:
        mcfg = preset("mfdm", cfg.dim, cfg.order, **cfg.options)
        L = mcfg.param("mfdm_L")
        L = max(1, (cfg.order + 1) // 2) if L is None else int(L)
        iters = int(mcfg.param("mfdm_iters"))
        layer *= 1 + iters
    else:
        stencil = _stencil_function(cfg.method, cfg)
    rows = []
    for spacing, cloud in zip(cfg.sizes, clouds):
        inner = np.flatnonzero(_inside(cloud.positions, layer))
        values = u(cloud.positions)
        nbhds = build_neighborhoods(cloud)
        if is_mfdm:
            res = mfdm_extrapolate(nbhds, values, L, cfg.order, iters, mcfg.window)
            approx = res.apply(cfg.op)[inner]
        else:
            approx = np.empty(inner.size)
            for k, i in enumerate(inner):
                try:
                    approx[k] = stencil(nbhds[i]).apply(values)
                except SingularMoment as exc:
                    raise type(exc)(f"h={spacing:g}, point {i}: {exc}", rank=exc.rank,
                                    size=exc.size) from exc
        err = approx - exact(cloud.positions[inner])
        rows.append(_error_row(cfg, spacing, cloud.n_points, err, cfg.method))
        logger.info("h=%g N=%d linf=%.3e", spacing, cloud.n_points, rows[-1]["linf"])
    return _finish(rows, cfg, cfg.method)


def run_poisson_study(cfg: StudyConfig, solver: str = "auto") -> list[dict]:
    """Manufactured-solution Poisson ladder with exact Dirichlet data.

    The source is the exact Laplacian of the test field; errors are taken
    over all points.  Rows follow ``CSV_HEADER`` with ``op = "poisson"``.
    """
    _check_method(cfg.method)
    mcfg = preset(cfg.method, cfg.dim, cfg.order, **cfg.options)
    u = test_function(cfg.test_function, cfg.dim)
    f = test_function(cfg.test_function, cfg.dim, "laplacian")
    pcfg = replace(cfg, op="poisson")
    rows = []
    for k, spacing in enumerate(cfg.sizes):
        cloud = make_cloud(cfg, spacing, k)
        res = solve_poisson(mcfg, cloud, f, BoundarySpec.from_cloud(cloud, u), solver=solver)
        err = res.solution - u(cloud.positions)
        rows.append(_error_row(pcfg, spacing, cloud.n_points, err, cfg.method))
    return _finish(rows, pcfg, cfg.method)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def rows_to_csv(rows) -> str:
    """CSV text with the fixed header; floats use 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([_fmt(r[k]) for k in CSV_HEADER])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Equivalence and stencil dumps
# ---------------------------------------------------------------------------

def _row_dict(sw) -> dict:
    cols, vals = sw.folded()
    out: dict = {}
    for c, v in zip(cols, vals):
        out[int(c)] = out.get(int(c), 0.0) + float(v)
    return out


def run_equivalence(cloud: PointCloud, pair, cfg: StudyConfig, points=None) -> dict:
    """Largest relative discrepancy between the rows of two methods.

    Rows are compared after folding to the ``on_values`` form, so methods
    with different weight conventions are compared as operators.

    Returns
    -------
    dict
        ``pair``, ``op``, ``n_points``, ``max_rel_discrepancy``, ``worst_point``
        and ``status`` (``PASS`` iff the discrepancy is at most 1e-10).
    """
    a, b = pair
    _check_method(a)
    _check_method(b)
    fa, fb = _stencil_function(a, cfg), _stencil_function(b, cfg)
    nbhds = build_neighborhoods(cloud)
    todo = range(cloud.n_points) if points is None else points
    worst, worst_i = 0.0, -1
    for i in todo:
        ra, rb = _row_dict(fa(nbhds[i])), _row_dict(fb(nbhds[i]))
        keys = sorted(set(ra) | set(rb))
        va = np.array([ra.get(k, 0.0) for k in keys])
        vb = np.array([rb.get(k, 0.0) for k in keys])
        scale = max(np.abs(va).max(), np.abs(vb).max())
        rel = float(np.abs(va - vb).max() / scale) if scale > 0 else 0.0
        if rel > worst or worst_i < 0:
            worst, worst_i = rel, int(i)
    return {
        "pair": [a, b],
        "op": cfg.op,
        "n_points": len(todo),
        "max_rel_discrepancy": worst,
        "worst_point": worst_i,
        "status": "PASS" if worst <= EQUIVALENCE_TOL else "FAIL",
    }


def run_stencil(cloud: PointCloud, index: int, methods, cfg: StudyConfig) -> dict:
    """Side-by-side stencils of several methods at one point.

    A method whose moment system is singular is recorded as
    ``{"error": "singular_moment"}`` instead of aborting the dump.
    """
    if not 0 <= int(index) < cloud.n_points:
        raise InvalidParams(f"point index {index} outside 0..{cloud.n_points - 1}")
    nb = build_neighborhoods(cloud)[int(index)]
    out = {"point": int(index), "position": [float(x) for x in cloud.positions[index]],
           "radius": float(nb.radius), "op": cfg.op, "stencils": {}}
    for name in methods:
        _check_method(name)
        try:
            out["stencils"][name] = _stencil_function(name, cfg)(nb).to_dict()
        except SingularMoment as exc:
            logger.warning("%s: %s", name, exc)
            out["stencils"][name] = {"error": "singular_moment"}
    return out
