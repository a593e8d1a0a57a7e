"""Command-line front end: ``collocate {converge,equiv,stencil,poisson}``.

Configuration files hold ``key = value`` lines, optionally under a
``[collocate]`` header.  Recognised keys::

    method.name  method.order  method.zeroth  method.mu  method.eps_omega
    method.eps_boundary  method.eps_fpsm  method.velocity  method.direction
    method.mfdm_L  method.mfdm_iters  method.ldd_variant  method.rank_policy
    method.precondition  method.route
    basis.kind  basis.window  basis.sigma  basis.polynomial
    cloud.generator  cloud.jitter  cloud.sizes  cloud.dim  cloud.ratio  cloud.file
    study.op  study.test_function  study.seed  study.point  study.methods  study.pair

Command-line flags override file values; ``--set key=value`` overrides any
key.  Exit status is 0 on success, 1 on usage errors and 2 on numerical
failures.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys

import numpy as np

from .assembly import BoundarySpec, solve_poisson, write_coo
from .cloud import read_cloud, select_radii
from .errors import (CollocationError, InvalidCloud, InvalidParams, LinearSolveFailure,
                     OrderOutOfRange, SingularMoment, UnknownMethod, UnsupportedCombination,
                     UnsupportedOrder, ZeroDenominator)
from .methods import preset
from .studies import (StudyConfig, make_cloud, rows_to_csv, run_convergence, run_equivalence,
                      run_poisson_study, run_stencil, test_function)

logger = logging.getLogger("collocate")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
_SECTION = "collocate"
_USAGE_ERRORS = (InvalidParams, UnknownMethod, OrderOutOfRange, InvalidCloud,
                 UnsupportedCombination, UnsupportedOrder)
_NUMERIC_ERRORS = (SingularMoment, LinearSolveFailure, ZeroDenominator)

_METHOD_KEYS = {
    "zeroth": "include_zeroth",
    "mu": "mu",
    "eps_omega": "eps_omega",
    "eps_boundary": "eps_boundary",
    "eps_fpsm": "eps_fpsm",
    "velocity": "velocity",
    "direction": "direction",
    "mfdm_l": "mfdm_L",
    "mfdm_iters": "mfdm_iters",
    "ldd_variant": "ldd_variant",
    "rank_policy": "rank_policy",
    "precondition": "precondition",
    "route": "route",
    "basis": "basis_kind",
    "window": "window",
    "sigma": "sigma",
    "polynomial": "polynomial",
}


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    """Flat ``{key: str}`` mapping from a key-value file."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = f"[{_SECTION}]\n" + text
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[key] = value
    return out


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _method_value(key: str, text: str):
    if key in ("include_zeroth", "precondition"):
        return _bool(text)
    if key in ("mfdm_L", "mfdm_iters"):
        return int(text)
    if key in ("mu", "eps_omega", "eps_boundary", "eps_fpsm", "sigma"):
        return float(text)
    if key == "velocity":
        return np.array(_floats(text))
    if key == "direction":
        parts = _floats(text)
        if len(parts) != 2:
            raise UsageError("method.direction takes 'axis sign'")
        return (int(parts[0]), parts[1])
    return text.strip()


def _collect(args) -> dict:
    values = read_config(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip().lower()] = v.strip()
    flags = {
        "method.name": getattr(args, "method", None),
        "method.order": args.order,
        "study.op": args.op,
        "study.seed": args.seed,
        "cloud.generator": args.generator,
        "cloud.jitter": args.jitter,
        "cloud.sizes": args.sizes,
        "cloud.dim": args.dim,
        "cloud.ratio": args.ratio,
        "cloud.file": args.cloud,
        "study.test_function": getattr(args, "function", None),
        "study.point": getattr(args, "point", None),
        "study.methods": getattr(args, "methods", None),
        "study.pair": getattr(args, "pair", None),
    }
    for k, v in flags.items():
        if v is not None:
            values[k] = str(v) if not isinstance(v, list) else " ".join(map(str, v))
    return values


def study_from_values(values: dict, default_op: str = "d/dx") -> StudyConfig:
    """Build a :class:`StudyConfig` from flat configuration values."""
    options, basis = {}, {}
    unknown = []
    for key, text in values.items():
        group, _, name = key.partition(".")
        if group == "method" and name in ("name", "order"):
            continue
        if group in ("method", "basis"):
            name = {"kind": "basis"}.get(name, name) if group == "basis" else name
            if name not in _METHOD_KEYS:
                unknown.append(key)
                continue
            target = _METHOD_KEYS[name]
            if target in ("basis_kind", "window", "sigma"):
                basis[target] = _method_value(target, text)
            options[target] = _method_value(target, text)
        elif group not in ("cloud", "study"):
            unknown.append(key)
    if unknown:
        raise UsageError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    dim = int(values.get("cloud.dim", 2))
    sizes = tuple(_floats(values["cloud.sizes"])) if "cloud.sizes" in values else (0.1, 0.05, 0.025)
    ratio = values.get("cloud.ratio")
    return StudyConfig(
        generator=values.get("cloud.generator", "jittered"),
        jitter=float(values.get("cloud.jitter", 0.2)),
        sizes=sizes,
        dim=dim,
        method=values.get("method.name", "gfdm"),
        order=int(values.get("method.order", 2)),
        op=values.get("study.op", default_op),
        test_function=values.get("study.test_function", "sin_product"),
        seed=int(values.get("study.seed", 0)),
        ratio=None if ratio is None else float(ratio),
        options=options,
        basis=basis.get("basis_kind", "taylor_monomials"),
        window=basis.get("window", "wendland_c2"),
        sigma=float(basis.get("sigma", 0.3)),
    )


def _cloud(values, study: StudyConfig):
    path = values.get("cloud.file")
    if path:
        data = np.loadtxt(path, comments="#", ndmin=2)
        radius = None
        if data.shape[1] == study.dim:
            # no radius column: scale the median nearest-neighbour spacing
            radius = select_radii(data, study.support_ratio)
        return read_cloud(path, study.dim, radius)
    return make_cloud(study, study.sizes[0])


def _emit(args, text: str):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_out(args, rows):
    if (args.format or "csv") == "json":
        _emit(args, json.dumps(rows, indent=2) + "\n")
    else:
        _emit(args, rows_to_csv(rows))


def cmd_converge(args, values):
    study = study_from_values(values)
    _rows_out(args, run_convergence(study))
    return EXIT_OK


def cmd_poisson(args, values):
    study = study_from_values(values, default_op="laplacian")
    if args.matrix_out or values.get("cloud.file"):
        cfg = preset(study.method, study.dim, study.order, **study.options)
        cloud = _cloud(values, study)
        u = test_function(study.test_function, study.dim)
        f = test_function(study.test_function, study.dim, "laplacian")
        res = solve_poisson(cfg, cloud, f, BoundarySpec.from_cloud(cloud, u))
        if args.matrix_out:
            write_coo(args.matrix_out, res.matrix)
        logger.info("solver %s, residual %.3e", res.info["method"], res.info["residual"])
    _rows_out(args, run_poisson_study(study))
    return EXIT_OK


def cmd_equiv(args, values):
    study = study_from_values(values)
    pair = values.get("study.pair", "gl2p aom-no-zeroth").replace(",", " ").split()
    if len(pair) != 2:
        raise UsageError("equiv needs exactly two methods")
    report = run_equivalence(_cloud(values, study), pair, study)
    if (args.format or "json") == "csv":
        text = "pair,op,n_points,max_rel_discrepancy,worst_point,status\n"
        text += (f"{pair[0]}:{pair[1]},{report['op']},{report['n_points']},"
                 f"{report['max_rel_discrepancy']:.17g},{report['worst_point']},{report['status']}\n")
    else:
        text = json.dumps(report, indent=2) + "\n"
    _emit(args, text)
    return EXIT_OK if report["status"] == "PASS" else EXIT_NUMERIC


def cmd_stencil(args, values):
    study = study_from_values(values, default_op="laplacian")
    methods = values.get("study.methods", study.method).replace(",", " ").split()
    cloud = _cloud(values, study)
    point = values.get("study.point")
    index = int(point) if point is not None else int(np.argmin(
        ((cloud.positions - cloud.positions.mean(axis=0)) ** 2).sum(axis=1)))
    dump = run_stencil(cloud, index, methods, study)
    _emit(args, json.dumps(dump, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collocate",
                                     description="Meshfree collocation stencils and studies.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    common.add_argument("--order", type=int, help="consistency order m")
    common.add_argument("--op", help="operator, e.g. d/dx, laplacian, 'alpha=(1,1)'")
    common.add_argument("--seed", type=int)
    common.add_argument("--generator", choices=("regular", "jittered", "random"))
    common.add_argument("--jitter", type=float)
    common.add_argument("--sizes", type=float, nargs="+", help="spacings, strictly decreasing")
    common.add_argument("--dim", type=int, choices=(1, 2, 3))
    common.add_argument("--ratio", type=float, help="support radius over spacing")
    common.add_argument("--cloud", help="point file (x y [z] [h] per line)")
    common.add_argument("--out", help="write data here instead of standard output")
    common.add_argument("--format", choices=("csv", "json"),
                        help="output format (csv by default, json for equiv and stencil)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("converge", parents=[common], help="convergence ladder")
    p.add_argument("--method")
    p.add_argument("--function", help="sin_product, gaussian_bump or polynomial(k)")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("poisson", parents=[common], help="manufactured Poisson ladder")
    p.add_argument("--method")
    p.add_argument("--function")
    p.add_argument("--matrix-out", help="write the first level's matrix in COO text")
    p.set_defaults(func=cmd_poisson)

    p = sub.add_parser("equiv", parents=[common], help="compare two methods row by row")
    p.add_argument("--pair", nargs=2, metavar=("A", "B"))
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("stencil", parents=[common], help="dump stencils at one point")
    p.add_argument("--point", type=int)
    p.add_argument("--methods", nargs="+")
    p.set_defaults(func=cmd_stencil)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        values = _collect(args)
        return args.func(args, values)
    except (UsageError, ValueError, OSError, *_USAGE_ERRORS) as exc:
        print(f"collocate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (*_NUMERIC_ERRORS, CollocationError) as exc:
        print(f"collocate: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
