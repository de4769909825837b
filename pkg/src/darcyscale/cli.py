"""Command-line interface.

Subcommands: generate, solve, upscale, oracle, survey, report.
Exit codes: 0 success, 2 configuration/usage error, 3 ensemble aborted
because too few exact solves were admissible.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import sys

import numpy as np

from . import __version__
from .grid import (FieldFormatError, FieldInvariantError, GridShape,
                   read_field, write_field)
from .modelgen import ChannelSpec, GenerationError, ModelParams, generate_model
from .solver import SingularFieldError, solve
from .spectral import SpectralError, build_spectral, low_mode_source, reduce_operator, verify_low_mode_exactness
from .survey import (ConfigError, EnsembleAbortError, SurveyConfig,
                     emit_report, load_report, run_survey)
from .upscale import DecimationError, PlanError, UpscalePlan, run_plan

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3

METHOD_NAMES = {"mg": "MG", "kk": "KK", "mean": "Mean"}


def _load_channel_spec(path, xy_mode):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for key in ("piece_len_range", "aspect_range", "incline_range",
                "magnitude_range", "xy_fraction_range"):
        if key in data and data[key] is not None:
            data[key] = tuple(data[key])
    if xy_mode is not None:
        data["xy_mode"] = xy_mode
    return ChannelSpec(**data)


def _cmd_generate(args):
    if args.spec:
        spec = _load_channel_spec(args.spec, args.xy_mode)
    else:
        spec = ChannelSpec(xy_mode=args.xy_mode or "zero")
    fld = generate_model(ModelParams(GridShape(args.n), args.seed, spec))
    write_field(fld, args.out)
    print(f"wrote {args.out} (n={args.n}, seed={args.seed}, xy_mode={spec.xy_mode})")
    return EXIT_OK


def _cmd_solve(args):
    fld = read_field(args.field)
    report = solve(fld)
    if args.out:
        write_field(report.phi, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"f={report.f:.6e} validation_ratio={report.validation_ratio:.6f} "
          f"residual={report.residual_norm:.3e}")
    return EXIT_OK


def _cmd_upscale(args):
    fld = read_field(args.field)
    plan = UpscalePlan(METHOD_NAMES[args.method], args.n_block, args.n_target)
    timings = []
    coarse = run_plan(fld, plan, as_printed=args.kk_as_printed, timings=timings)
    write_field(coarse, args.out)
    if args.timing:
        with open(args.timing, "w", encoding="utf-8") as fh:
            json.dump({"method": plan.method, "n_block": plan.n_block,
                       "n_target": plan.n_target, "sweep_seconds": timings,
                       "kk_as_printed": bool(args.kk_as_printed)}, fh, indent=2)
            fh.write("\n")
    print(f"wrote {args.out} ({fld.shape.n} -> {coarse.shape.n}, "
          f"{len(timings)} sweeps, {plan.method})")
    return EXIT_OK


def _cmd_oracle(args):
    fld = read_field(args.field)
    op = build_spectral(fld)
    red, low = reduce_operator(op, args.kc)
    nz = op.nonzero_mask()
    deviations = {}
    for kx, ky in op.modes[low]:
        s = low_mode_source(op, int(kx), int(ky))
        deviations[f"({kx},{ky})"] = verify_low_mode_exactness(fld, args.kc, s)
    data = {
        "n": op.n,
        "kc": args.kc,
        "max_deviation": max(deviations.values()),
        "deviations": deviations,
        "cond_full": float(np.linalg.cond(op.matrix[np.ix_(nz, nz)])),
        "cond_reduced": float(np.linalg.cond(red)),
    }
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"max low-mode deviation {data['max_deviation']:.3e} "
          f"(kc={args.kc}, {int(low.sum())} retained modes)")
    return EXIT_OK


def _load_survey_config(args) -> SurveyConfig:
    if args.preset:
        ref = importlib.resources.files("darcyscale") / "presets" / f"{args.preset}.json"
        data = json.loads(ref.read_text(encoding="utf-8"))
    else:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    if args.limit_models:
        data["n_models"] = args.limit_models
    if args.parallelism:
        data["parallelism"] = args.parallelism
    return SurveyConfig.from_dict(data)


def _cmd_survey(args):
    config = _load_survey_config(args)
    report = run_survey(config)
    files = emit_report(report, args.out)
    agg = report.aggregates
    print(f"{agg['n_admissible']}/{config.n_models} admissible; wrote:")
    for f in files:
        print(f"  {f}")
    return EXIT_OK


def _cmd_report(args):
    report = load_report(args.infile)
    files = emit_report(report, args.out)
    for f in files:
        print(f"  {f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="darcyscale",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a random percolating model")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--xy-mode", choices=["zero", "finite"], dest="xy_mode")
    g.add_argument("--spec", help="ChannelSpec overrides as JSON")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    s = sub.add_parser("solve", help="solve a field and report flow diagnostics")
    s.add_argument("--field", required=True)
    s.add_argument("--out", help="write the pressure solution here")
    s.add_argument("--report", help="write JSON diagnostics here")
    s.set_defaults(func=_cmd_solve)

    u = sub.add_parser("upscale", help="decimate a field to a coarser grid")
    u.add_argument("--field", required=True)
    u.add_argument("--method", choices=sorted(METHOD_NAMES), required=True)
    u.add_argument("--n-block", type=int, default=2, dest="n_block")
    u.add_argument("--n-target", type=int, required=True, dest="n_target")
    u.add_argument("--kk-as-printed", action="store_true", dest="kk_as_printed",
                   help="use the literal published KK formulas (no uniform fixed point)")
    u.add_argument("--out", required=True)
    u.add_argument("--timing", help="write per-sweep wall times here")
    u.set_defaults(func=_cmd_upscale)

    o = sub.add_parser("oracle", help="spectral reduction exactness check")
    o.add_argument("--field", required=True)
    o.add_argument("--kc", type=int, required=True)
    o.add_argument("--report", required=True)
    o.set_defaults(func=_cmd_oracle)

    sv = sub.add_parser("survey", help="run an ensemble survey")
    src = sv.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="SurveyConfig as JSON")
    src.add_argument("--preset", help="named preset shipped with the package")
    sv.add_argument("--limit-models", type=int, dest="limit_models",
                    help="cap n_models (smoke tests of large presets)")
    sv.add_argument("--parallelism", type=int)
    sv.add_argument("--out", required=True)
    sv.set_defaults(func=_cmd_survey)

    r = sub.add_parser("report", help="regenerate artifacts from a stored report")
    r.add_argument("--in", dest="infile", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EnsembleAbortError as exc:
        print(f"ensemble aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, PlanError, FieldFormatError, FieldInvariantError,
            GenerationError, SingularFieldError, DecimationError, SpectralError,
            ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
