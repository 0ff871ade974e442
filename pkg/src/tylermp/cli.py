"""Command-line interface: ``tylermp {estimate,esd,mp,gmp,experiment}``.

Every run writes its outputs plus ``config.json`` (the fully resolved
arguments) into ``--out``. Exit status: 0 on success, 2 on usage errors,
1 on numerical failure, 3 when an experiment's acceptance checks fail.
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from ._validation import ExistenceError, NotPositiveDefiniteError
from .estimators import SolverConfig, maronna_estimate, sample_covariance, tyler_estimate
from .experiments import EXPERIMENTS, ExperimentConfig, generalized_mp_cdf, make_radial, run_experiment
from .rmt import SpectralMeasure, StieltjesConvergenceError, density_from_stieltjes
from .sampling import SeedSpec, ShapeMatrix, load_csv, sample_gaussian, sample_with_shape
from .spectra import EmpiricalCDF, MPLaw, dump_spectrum, histogram, ks_distance, mp_density, mp_support
from .weights import PsiRangeError, maronna_scaling, parse_weight

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE, EXIT_CHECKS = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_shape(path, p=None):
    """Shape matrix from JSON (``diag``, ``matrix`` or ``atoms``) or CSV."""
    if path.endswith(".json"):
        with open(path) as fh:
            d = json.load(fh)
        if "matrix" in d:
            return ShapeMatrix(np.asarray(d["matrix"], dtype=np.float64))
        if "diag" in d:
            return ShapeMatrix(np.diag(np.asarray(d["diag"], dtype=np.float64)))
        if "atoms" in d:
            if p is None:
                raise UsageError("an atoms shape file needs --p")
            H = SpectralMeasure.from_dict(d)
            counts = np.round(H.weights * p).astype(int)
            if counts.sum() != p:
                raise UsageError(f"atom weights do not split p={p} into integer counts")
            return ShapeMatrix(np.diag(np.repeat(H.locations, counts)))
        raise UsageError(f"shape file {path} needs one of: matrix, diag, atoms")
    return ShapeMatrix(np.loadtxt(path, delimiter=",", ndmin=2))


def _solver(args):
    return {"tol": args.tol, "max_iter": args.max_iter}


def _resolve_np(args):
    n, p, y = args.n, args.p, args.y
    if p is None and y is not None and n is not None:
        p = round(y * n)
    if n is None or p is None:
        raise UsageError("sampling needs --n and one of --p / --y")
    return int(n), int(p)


def _get_data(args):
    if args.input:
        return load_csv(args.input), None
    n, p = _resolve_np(args)
    shape = load_shape(args.shape, p) if args.shape else None
    if shape is not None and shape.p != p:
        raise UsageError(f"--shape is {shape.p}x{shape.p} but p={p}")
    seed = SeedSpec(args.seed)
    if args.dist == "gaussian" and shape is None:
        return sample_gaussian(n, p, seed), None
    shape = shape or ShapeMatrix.identity(p)
    return sample_with_shape(n, shape, make_radial(args.dist, args.dof, p), seed), shape


def _estimate(args, X):
    cfg = SolverConfig(**_solver(args))
    n, p = X.shape
    if args.estimator == "sample":
        return sample_covariance(X), 1.0
    if args.estimator == "tyler":
        return tyler_estimate(X, cfg), 1.0
    w = parse_weight(args.u)
    est = maronna_estimate(X, w, cfg)
    scale = maronna_scaling(w, p / n, n, args.scaling) if args.scaling else 1.0
    return est, scale


def cmd_estimate(args):
    X, _ = _get_data(args)
    est, scale = _estimate(args, X)
    d = est.to_dict()
    if args.estimator == "maronna" and args.scaling:
        d["scaling"] = {"convention": args.scaling, "factor": scale}
    if args.format == "csv":
        np.savetxt(os.path.join(args.out, "estimate.csv"), est.matrix, fmt="%.17g", delimiter=",")
        d.pop("matrix")
    _dump_json(d, os.path.join(args.out, "estimate.json"))
    return EXIT_OK


def cmd_esd(args):
    X, shape = _get_data(args)
    n, p = X.shape
    est, scale = _estimate(args, X)
    if args.estimator == "tyler":
        spherical = shape is None or np.allclose(shape.matrix, shape.matrix[0, 0] * np.eye(p))
        scale = p if spherical else np.trace(shape.matrix)
    elif args.estimator == "maronna" and not args.scaling:
        scale = maronna_scaling(parse_weight(args.u), p / n, n, "derived")
    ev = np.linalg.eigvalsh(scale * est.matrix)
    dump_spectrum(ev, os.path.join(args.out, "spectrum.csv"))
    np.savetxt(
        os.path.join(args.out, "histogram.csv"), histogram(ev, args.bins),
        fmt="%.17g", delimiter=",", header="bin_left,bin_right,count", comments="",
    )
    report = {"n": n, "p": p, "estimator": args.estimator, "scale": float(scale)}
    if args.law == "mp":
        report["law"] = "mp"
        report["ks"] = ks_distance(EmpiricalCDF.from_samples(ev), MPLaw(p / n).cdf)
    elif args.law == "gmp":
        H = SpectralMeasure.from_json(args.h) if args.h else SpectralMeasure.from_matrix(
            (shape or ShapeMatrix.identity(p)).matrix
        )
        G, curve = generalized_mp_cdf(H, p / n)
        report["law"] = "generalized-mp"
        report["ks"] = ks_distance(EmpiricalCDF.from_samples(ev), G)
        report["reference_flagged"] = int(curve.flagged.size)
    _dump_json(report, os.path.join(args.out, "esd.json"))
    return EXIT_OK


def mp_curve(y, num):
    """MP density on ``num`` points clustered at the support edges."""
    lo, hi = mp_support(y)
    x = 0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(np.linspace(0.0, np.pi, num))
    return x, mp_density(y, x)


def cmd_mp(args):
    if args.y is None:
        raise UsageError("mp needs --y")
    if args.grid < 2:
        raise UsageError("--grid must be >= 2")
    x, rho = mp_curve(args.y, args.grid)
    np.savetxt(
        os.path.join(args.out, "density.csv"), np.column_stack([x, rho]),
        fmt="%.17g", delimiter=",", header="x,rho", comments="",
    )
    return EXIT_OK


def cmd_gmp(args):
    if args.y is None or args.h is None:
        raise UsageError("gmp needs --y and --h")
    H = SpectralMeasure.from_json(args.h)
    top = H.locations.max() * (1 + np.sqrt(args.y)) ** 2 * 1.25
    lo = args.xmin if args.xmin is not None else 0.0
    hi = args.xmax if args.xmax is not None else top
    curve = density_from_stieltjes(H, args.y, np.linspace(lo, hi, args.grid), args.eta)
    curve.to_csv(os.path.join(args.out, "density.csv"))
    _dump_json(
        {"mass": curve.mass(), "flagged": curve.flagged.tolist(), "eta": args.eta},
        os.path.join(args.out, "gmp.json"),
    )
    return EXIT_OK


_EXP_FLAGS = {
    "convergence": ("y", "ns", "estimator", "u", "reps"),
    "largest-eig": ("y", "n", "reps", "estimator", "u"),
    "esd": ("n", "p", "dist", "estimator", "u", "dof", "rescale", "bins"),
    "spike": ("model", "reps", "n", "p", "dof"),
    "calibrate": ("u", "y", "n", "reps"),
    "diagnostic": ("n", "p"),
}
_PARAM_NAME = {"u": "weight"}


def _experiment_config(args):
    if args.config:
        with open(args.config) as fh:
            try:
                cfg = ExperimentConfig.from_dict(json.load(fh))
            except (ValueError, TypeError) as exc:
                raise UsageError(f"bad config file {args.config}: {exc}") from exc
        if cfg.experiment != args.which:
            raise UsageError(f"config is for {cfg.experiment!r}, not {args.which!r}")
        return cfg
    params = {}
    for flag in _EXP_FLAGS[args.which]:
        val = getattr(args, flag)
        if val is None or (flag == "rescale" and not val):
            continue
        if flag == "ns":
            val = [int(v) for v in val.split(",")]
        if args.which != "esd" and flag == "estimator" and val == "sample":
            if args.which != "largest-eig":
                raise UsageError(f"{args.which} does not support the sample estimator")
        params[_PARAM_NAME.get(flag, flag)] = val
    if args.which in ("esd",) and args.shape:
        shape = load_shape(args.shape, params.get("p"))
        params["shape_matrix"] = shape.matrix.tolist()
    solver = {} if args.which == "diagnostic" else _solver(args)
    return ExperimentConfig(args.which, params, solver, args.seed, args.jobs)


def cmd_experiment(args):
    cfg = _experiment_config(args)
    report = run_experiment(cfg)
    d = report if isinstance(report, dict) else report.to_dict()
    _dump_json(d, os.path.join(args.out, "report.json"))
    if args.which == "esd":
        dump_spectrum(np.asarray(d["eigenvalues"]), os.path.join(args.out, "spectrum.csv"))
        np.savetxt(
            os.path.join(args.out, "histogram.csv"), np.asarray(d["histogram"]),
            fmt="%.17g", delimiter=",", header="bin_left,bin_right,count", comments="",
        )
    if args.which == "spike":
        for name, runs in d["eigenvalues"].items():
            rows = [
                [r] + list(h)
                for r, ev in enumerate(runs)
                for h in histogram(np.asarray(ev), args.bins)
            ]
            np.savetxt(
                os.path.join(args.out, f"histogram_{name}.csv"), np.asarray(rows),
                fmt="%.17g", delimiter=",", header="run,bin_left,bin_right,count", comments="",
            )
    for c in d.get("checks", []):
        status = "PASS" if c["passed"] else "FAIL"
        print(f"[{status}] {cfg.experiment}.{c['name']}: value={c['value']} bound={c['bound']}")
    return EXIT_OK if d.get("passed", True) else EXIT_CHECKS


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int)
    common.add_argument("--p", type=int)
    common.add_argument("--y", type=float)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dist", choices=["gaussian", "gaussian-cov", "elliptical-t", "fixed-radius"],
                        default="gaussian")
    common.add_argument("--dof", type=float, default=1.0)
    common.add_argument("--shape", help="shape matrix file (.json with matrix/diag/atoms, or .csv)")
    common.add_argument("--estimator", choices=["sample", "tyler", "maronna"], default="tyler")
    common.add_argument("--u", default="power:-0.5", help="one | power:<beta> | rational:<alpha>")
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--max-iter", type=int, default=1000)
    common.add_argument("--scaling", choices=["paper", "derived"])
    common.add_argument("--reps", type=int)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", default=".")
    common.add_argument("--format", choices=["json", "csv"], default="json")
    common.add_argument("--bins", type=int, default=100)

    parser = argparse.ArgumentParser(prog="tylermp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="fit an estimator to data")
    p.add_argument("--input", help="CSV, one sample per row (header optional)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("esd", parents=[common], help="spectrum of a scaled estimator")
    p.add_argument("--input")
    p.add_argument("--law", choices=["mp", "gmp", "none"], default="mp")
    p.add_argument("--h", help="SpectralMeasure JSON for --law gmp")
    p.set_defaults(func=cmd_esd)

    p = sub.add_parser("mp", parents=[common], help="Marchenko-Pastur density curve")
    p.add_argument("--grid", type=int, default=512)
    p.set_defaults(func=cmd_mp)

    p = sub.add_parser("gmp", parents=[common], help="generalised MP density curve")
    p.add_argument("--h", help="SpectralMeasure JSON {atoms: [{t, pi}]}")
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--xmin", type=float)
    p.add_argument("--xmax", type=float)
    p.set_defaults(func=cmd_gmp)

    p = sub.add_parser("experiment", parents=[common], help="run a Monte-Carlo experiment")
    p.add_argument("which", choices=sorted(EXPERIMENTS))
    p.add_argument("--config", help="ExperimentConfig JSON; overrides the flags")
    p.add_argument("--model", type=int, choices=[1, 2])
    p.add_argument("--ns", help="comma-separated sample sizes")
    p.add_argument("--rescale", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def _resolved(args):
    d = {k: v for k, v in vars(args).items() if k != "func"}
    d["version"] = __version__
    return d


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        parse_weight(args.u)
    except ValueError as exc:
        print(f"tylermp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        os.makedirs(args.out, exist_ok=True)
        _dump_json(_resolved(args), os.path.join(args.out, "config.json"))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except UsageError as exc:
        print(f"tylermp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExistenceError, NotPositiveDefiniteError, PsiRangeError,
            StieltjesConvergenceError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"tylermp: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
