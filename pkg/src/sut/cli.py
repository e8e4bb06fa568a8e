"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import density, moments, presets, quadform, sampling, transforms
from .errors import InputError, NumericError, ValidationError
from .numerics import QmcConfig
from .params import SutParams, permute_latent, validate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    qmc_points: int = 2**13
    qmc_randomizations: int = 8
    tolerance: float = 1e-3
    output: str | None = None
    format: str = "csv"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InputError("--tol must be positive")
        if self.format not in ("csv", "json"):
            raise InputError("--format must be csv or json")

    @property
    def qmc(self) -> QmcConfig:
        return QmcConfig(self.qmc_points, self.qmc_randomizations, self.seed)


# ------------------------------------------------------------------ helpers


def load_params(path: str | None) -> SutParams:
    if not path:
        raise InputError("--params is required for this command")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    p = SutParams.from_json(text)
    errs = validate(p)
    if errs:
        raise ValidationError(errs)
    return p


def parse_axis(spec: str) -> np.ndarray:
    try:
        lo, hi, steps = spec.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError:
        raise InputError(f"grid axis must be min:max:steps, got {spec!r}") from None
    if steps < 1 or not (math.isfinite(lo) and math.isfinite(hi)):
        raise InputError(f"bad grid axis {spec!r}")
    return np.linspace(lo, hi, steps)


def grid_points(axes: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def parse_points(text: str, d: int) -> np.ndarray:
    try:
        rows = [[float(x) for x in chunk.split(",")] for chunk in text.split(";") if chunk.strip()]
        pts = np.array(rows, dtype=float)
    except ValueError:
        raise InputError(f"cannot parse points {text!r}") from None
    if pts.ndim != 2 or pts.shape[1] != d:
        raise InputError(f"points must have {d} coordinates each")
    return pts


def _points_for(args, p: SutParams) -> np.ndarray:
    if args.at:
        return parse_points(args.at, p.d)
    if args.grid:
        if len(args.grid) != p.d:
            raise InputError(f"need {p.d} --grid axes, got {len(args.grid)}")
        return grid_points([parse_axis(g) for g in args.grid])
    raise InputError("give evaluation points with --grid or --at")


def _table(columns, rows, rc: RunConfig, out, comments=()):
    rows = np.asarray(rows, dtype=float)
    if rc.format == "json":
        json.dump({"columns": list(columns), "rows": rows.tolist()}, out)
        out.write("\n")
        return
    for c in comments:
        out.write(f"# {c}\n")
    out.write(",".join(columns) + "\n")
    if rows.size:
        np.savetxt(out, rows, delimiter=",", fmt="%.10g")


def _warn_error(err, rc: RunConfig, what: str):
    worst = float(np.max(err)) if np.size(err) else 0.0
    if worst > rc.tolerance:
        print(f"warning: {what} QMC error {worst:.3g} exceeds --tol {rc.tolerance:g}", file=sys.stderr)


# ------------------------------------------------------------------ commands


def cmd_pdf(args, rc, out):
    p = load_params(args.params)
    pts = _points_for(args, p)
    res = density.pdf_with_error(p, pts, rc.qmc)
    _warn_error(res.error_estimate, rc, "pdf")
    cols = [f"y{i + 1}" for i in range(p.d)] + ["value", "se"]
    _table(cols, np.column_stack([pts, res.value, res.error_estimate / 3.0]), rc, out)


def cmd_cdf(args, rc, out):
    p = load_params(args.params)
    pts = _points_for(args, p)
    res = density.cdf(p, pts, rc.qmc)
    res = res if isinstance(res, list) else [res]
    vals = np.array([r.value for r in res])
    errs = np.array([r.error_estimate for r in res])
    _warn_error(errs, rc, "cdf")
    cols = [f"y{i + 1}" for i in range(p.d)] + ["value", "se"]
    _table(cols, np.column_stack([pts, vals, errs / 3.0]), rc, out)


def cmd_contour(args, rc, out):
    if args.preset:
        p = presets.contour_preset(args.preset)
    else:
        p = load_params(args.params)
    if p.d != 2:
        raise InputError("contour needs a bivariate distribution")
    lo, hi = presets.CONTOUR_RANGE
    axes = [parse_axis(g) for g in args.grid] if args.grid else [np.linspace(lo, hi, presets.CONTOUR_STEPS)] * 2
    if len(axes) != 2:
        raise InputError("contour needs two --grid axes")
    pts = grid_points(axes)
    res = density.pdf_with_error(p, pts, rc.qmc)
    comments = [f"preset={args.preset or 'params'}", f"skew_direction={presets.skew_direction(p).tolist()}"]
    _table(["y1", "y2", "value", "se"], np.column_stack([pts, res.value, res.error_estimate / 3.0]), rc, out, comments)


def cmd_sample(args, rc, out):
    p = load_params(args.params)
    batch = sampling.sample(p, args.n, rc.seed, args.method)
    if rc.format == "json":
        json.dump({"method": batch.method, "seed": batch.seed, "n": batch.n, "draws": batch.draws.tolist()}, out)
        out.write("\n")
    else:
        batch.to_csv(out)


def _moment_report(ms: moments.MomentSet, d: int) -> dict:
    cen = ms.central()
    b1, b2 = moments.mardia_from_central(cen.tensor(2), cen.tensor(3), cen.tensor(4))
    return {
        "raw": ms.as_dict(),
        "central": cen.as_dict(),
        "mardia": {"beta1": float(b1), "beta2": float(b2), "gamma1": float(b1), "gamma2": float(b2 - d * (d + 2))},
    }


def cmd_moments(args, rc, out):
    p = load_params(args.params)
    if args.route == "convolution":
        ms = moments.moments_34(p, rc.qmc)
        report = _moment_report(ms, p.d)
        mm = moments.mardia(p, rc.qmc)
        report["mardia"] = {
            "beta1": mm.beta1, "beta2": mm.beta2, "gamma1": mm.gamma1, "gamma2": mm.gamma2,
            "se_gamma1": mm.se_gamma1, "se_gamma2": mm.se_gamma2,
        }
    elif args.route == "mixture":
        report = _moment_report(moments.moments_via_mixture(p, rc.qmc), p.d)
    else:
        batch = sampling.sample(p, args.n, rc.seed, "convolution")
        report = mc_report(batch.draws)
    report["route"] = args.route
    json.dump(report, out, indent=2)
    out.write("\n")


def mc_report(y: np.ndarray) -> dict:
    mu = y.mean(axis=0)
    x = y - mu
    n, d = y.shape
    m2 = x.T @ x / n
    m3 = np.einsum("ni,nj,nk->ijk", x, x, x) / n
    m4 = np.einsum("ni,nj,nk,nl->ijkl", x, x, x, x) / n
    b1, b2 = moments.mardia_from_central(m2, m3, m4)
    return {
        "n": n,
        "central": {
            "mu1": mu.tolist(), "mu2": m2.tolist(),
            "mu3": moments.kron_layout(m3, 3).tolist(), "mu4": moments.kron_layout(m4, 4).tolist(),
        },
        "mardia": {"beta1": float(b1), "beta2": float(b2), "gamma1": float(b1), "gamma2": float(b2 - d * (d + 2))},
    }


def sweep_family(name: str, rho: float | None):
    if name == "fig2":
        r = presets.FIG2_RHO if rho is None else rho
        return lambda m: presets.fig2(m, r)
    if name == "symmetric":
        return lambda m: SutParams(np.zeros(2), np.eye(2), np.zeros((2, m)), np.zeros(m), np.eye(m), presets.FIG2_NU)
    raise InputError(f"unknown sweep family {name!r}")


def cmd_mardia_sweep(args, rc, out):
    fam = sweep_family(args.family, args.rho)
    if not 1 <= args.m_min <= args.m_max:
        raise InputError("need 1 <= --m-min <= --m-max")
    rows = []
    for m in range(args.m_min, args.m_max + 1):
        mm = moments.mardia(fam(m), rc.qmc)
        rows.append([m, mm.gamma1, mm.gamma2, mm.se_gamma1, mm.se_gamma2])
    _table(["m", "gamma1", "gamma2", "se_gamma1", "se_gamma2"], rows, rc, out, [f"family={args.family}"])


def _partition(spec, p):
    if spec is None:
        raise InputError("op-spec needs a partition [d1, d2]")
    spec = list(spec)
    if len(spec) == 1:
        spec = [spec[0], p.d - spec[0]]
    return transforms.PartitionSpec(int(spec[0]), int(spec[1]))


def apply_op(p: SutParams, op: dict) -> SutParams:
    if not isinstance(op, dict) or "kind" not in op:
        raise InputError("op-spec must be an object with a 'kind'")
    unknown = set(op) - {"kind", "matrix", "vector", "partition", "which"}
    if unknown:
        raise InputError(f"unknown op-spec keys: {sorted(unknown)}")
    kind = op["kind"]
    vec = op.get("vector")
    if kind == "linear":
        if op.get("matrix") is None:
            raise InputError("linear needs a matrix")
        return transforms.linear(p, np.array(op["matrix"], dtype=float), None if vec is None else np.array(vec, dtype=float))
    if kind == "marginal":
        return transforms.marginal(p, _partition(op.get("partition"), p), int(op.get("which", 1)))
    if kind == "add_marginals":
        return transforms.add_marginals(p)
    if kind == "conditional":
        if vec is None:
            raise InputError("conditional needs the conditioning value as 'vector'")
        return transforms.conditional(p, _partition(op.get("partition"), p), np.array(vec, dtype=float)).params
    if kind == "condition_positive":
        return transforms.condition_positive(p, _partition(op.get("partition"), p))
    if kind == "reduce_latent":
        return transforms.reduce_latent(p, vec)
    if kind == "canonical":
        return transforms.canonical(p)[1]
    if kind == "permute_latent":
        if vec is None:
            raise InputError("permute_latent needs the permutation as 'vector'")
        return permute_latent(p, vec)
    raise InputError(f"unknown transform kind {kind!r}")


def cmd_transform(args, rc, out):
    p = load_params(args.params)
    text = args.op
    if not text.lstrip().startswith("{"):
        try:
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read op-spec {args.op}: {exc}") from None
    try:
        op = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed op-spec JSON: {exc}") from None
    json.dump(apply_op(p, op).to_dict(), out, indent=2)
    out.write("\n")


def check_report(p: SutParams) -> dict:
    errs = validate(p)
    report = {"valid": not errs, "violations": [str(e) for e in errs], "d": p.d, "m": p.m}
    if errs:
        return report
    adv = list(p.advisories)
    if p.m > 1:
        off = p.gamma_bar[~np.eye(p.m, dtype=bool)]
        if np.allclose(off, off[0]) and off[0] > 0.95:
            adv.append("strong equicorrelation: a skew-t (m = 1) is preferable")
    report["advisories"] = adv
    if p.d >= 2:
        try:
            c, _ = transforms.canonical(p)
            report["canonical"] = {"exists": True, "rows": int(c.shape[0])}
        except InputError as exc:
            report["canonical"] = {"exists": False, "reason": str(exc)}
    else:
        report["canonical"] = {"exists": False, "reason": "d = 1"}
    report["redundant_latent"] = transforms.redundant_latent(p)
    report["quadratic_form"] = quadform.invariance_check(p)
    report["identifiability"] = (
        "latent permutations leave the distribution unchanged" if p.m > 1 else "no latent permutation ambiguity"
    )
    return report


def cmd_check(args, rc, out):
    try:
        with open(args.params, encoding="utf-8") as fh:
            p = SutParams.from_json(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read {args.params}: {exc}") from None
    report = check_report(p)
    json.dump(report, out, indent=2)
    out.write("\n")
    if not report["valid"]:
        raise _Invalid()


class _Invalid(InputError):
    pass


def cmd_quadform(args, rc, out):
    p = load_params(args.params)
    grid = parse_axis(args.grid) if args.grid else None
    est = quadform.quadform_pdf(p, grid, rc.qmc, n_directions=args.directions)
    _table(["v", "density", "se"], np.column_stack([est.grid, est.density, est.se]), rc, out)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--qmc-points", type=int, default=argparse.SUPPRESS)
    common.add_argument("--qmc-rand", type=int, default=argparse.SUPPRESS)
    common.add_argument("--tol", type=float, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS)
    common.add_argument("--params", default=argparse.SUPPRESS, help="SUT parameters as JSON")

    ap = argparse.ArgumentParser(prog="sut", description="Unified skew-t distribution tools", parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.set_defaults(func=fn)
        return s

    for name, fn in (("pdf", cmd_pdf), ("cdf", cmd_cdf)):
        s = add(name, fn, f"evaluate the {name} on a grid or at points")
        s.add_argument("--grid", action="append", help="min:max:steps, one per coordinate")
        s.add_argument("--at", help="points as 'y1,y2;y1,y2'")
    s = add("contour", cmd_contour, "bivariate pdf grid (figure presets available)")
    s.add_argument("--preset", choices=presets.CONTOUR_PRESETS)
    s.add_argument("--grid", action="append")
    s = add("sample", cmd_sample, "draw a sample")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--method", choices=sorted(sampling.SAMPLERS), default="convolution")
    s = add("moments", cmd_moments, "moments up to order four and Mardia measures")
    s.add_argument("--route", choices=("convolution", "mixture", "mc"), default="convolution")
    s.add_argument("--n", type=int, default=10**6, help="draws for the mc route")
    s = add("mardia-sweep", cmd_mardia_sweep, "Mardia measures against the latent dimension")
    s.add_argument("--family", choices=("fig2", "symmetric"), default="fig2")
    s.add_argument("--rho", type=float, default=None, help="latent equicorrelation for the fig2 family")
    s.add_argument("--m-min", type=int, default=1)
    s.add_argument("--m-max", type=int, default=10)
    s = add("transform", cmd_transform, "apply a closure operation")
    s.add_argument("--op", required=True, help="op-spec JSON (inline or file)")
    add("check", cmd_check, "validity and identifiability report")
    s = add("quadform", cmd_quadform, "density of the quadratic form")
    s.add_argument("--grid", help="min:max:steps (default: central 99.8%% of the symmetric law)")
    s.add_argument("--directions", type=int, default=quadform.DEFAULT_DIRECTIONS)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        rc = RunConfig(
            seed=getattr(args, "seed", 0),
            qmc_points=getattr(args, "qmc_points", 2**13),
            qmc_randomizations=getattr(args, "qmc_rand", 8),
            tolerance=getattr(args, "tol", 1e-3),
            output=getattr(args, "out", None),
            format=getattr(args, "format", "csv"),
        )
        rc.qmc  # validates QMC settings
        args.params = getattr(args, "params", None)
        if args.command == "check" and not args.params:
            raise InputError("--params is required for this command")
        buf = io.StringIO()
        args.func(args, rc, buf)
    except _Invalid:
        _emit(buf.getvalue(), rc)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(buf.getvalue(), rc)
    return EXIT_OK


def _emit(text: str, rc: RunConfig):
    if rc.output:
        with open(rc.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        with contextlib.suppress(BrokenPipeError):
            sys.stdout.write(text)


if __name__ == "__main__":
    sys.exit(main())
