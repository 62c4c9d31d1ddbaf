"""Command-line interface: ``sbftl {fit,tl-fit,detect,simulate,screen}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import json
import logging
import sys

import numpy as np

from .dataio import (FitArtifact, file_digest, load_csv, normalize_response, scale_unit_interval,
                     screen_features, write_csv)
from .errors import (ConfigError, DataError, DegenerateMarginalError, DimensionError, DomainError,
                     IllConditionedError, InsufficientSampleError, InvalidBandwidthError, SBFError)
from .flasso import FitConfig, fit_design
from .kernels import BaselineKernel, Bandwidths, EvalGrid
from .methods import pooled_bandwidth
from .model_select import LambdaGrid, rot_bandwidth, select_lambda, select_lambda_pair
from .smoother import build_design
from .transfer import MultiSampleSet, TLConfig, detect_sources, tl_fit

log = logging.getLogger("sbftl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p, top=False):
    # subcommands accept the global flags too; SUPPRESS keeps them from
    # overwriting values given before the subcommand name
    dflt = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=dflt(0), help="random seed")
    p.add_argument("--threads", type=int, default=dflt(1), help="worker processes (simulate)")
    p.add_argument("--verbose", "-v", action="count", default=dflt(0))


def _add_fit_args(p):
    p.add_argument("--data", required=True, help="CSV with a header row")
    p.add_argument("--response", required=True, help="response column name")
    p.add_argument("--bandwidth", default="auto",
                   help="'auto' (rule of thumb), one value, or comma-separated per-covariate values")
    p.add_argument("--grid", type=int, default=101, help="evaluation grid size")
    p.add_argument("--kernel", choices=[k.value for k in BaselineKernel], default="epanechnikov")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)


def build_parser():
    parser = _Parser(prog="sbftl", description="Sparse additive smooth backfitting with transfer learning")
    _add_common(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="target-only penalized fit")
    _add_common(p)
    _add_fit_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float, help="fixed penalty")
    g.add_argument("--bic", action="store_true", help="choose the penalty by BIC (default)")
    p.add_argument("--nw", action="store_true", help="local-constant (Nadaraya-Watson) fit")
    p.add_argument("--out", default="fit.json")

    p = sub.add_parser("tl-fit", help="two-stage transfer fit")
    _add_common(p)
    _add_fit_args(p)
    p.add_argument("--aux", nargs="+", required=True, help="auxiliary CSV files (same columns)")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--bic2d", action="store_true", help="choose (lambda1, lambda2) by BIC (default)")
    p.add_argument("--no-pool-target", action="store_true", help="leave the target out of step 1")
    p.add_argument("--out", default="fit.json")

    p = sub.add_parser("detect", help="transferable source detection")
    _add_common(p)
    _add_fit_args(p)
    p.add_argument("--aux", nargs="+", required=True, help="candidate CSV files")
    p.add_argument("--c-sd", type=float, default=1.0)
    p.add_argument("--splits", type=int, default=2)
    p.add_argument("--out", help="optional JSON report")

    p = sub.add_parser("simulate", help="simulation replications to a CSV table")
    _add_common(p)
    p.add_argument("--scenario", help="TOML scenario file")
    p.add_argument("--n0", type=int)
    p.add_argument("--n-aux", type=int, nargs="+")
    p.add_argument("--d", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--delta-p", type=float)
    p.add_argument("--delta-f", type=float)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--methods", default="NW,LL,TL", help="comma-separated subset of NW,LL,TL")
    p.add_argument("--mc-size", type=int, default=100_000)
    p.add_argument("--out", default="table.csv")

    p = sub.add_parser("screen", help="screen, scale to [0, 1] and rescale the response")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--top-var", type=int, default=3000)
    p.add_argument("--top-cor", type=int, default=450)
    p.add_argument("--target-sd", type=float, default=2.5)
    p.add_argument("--out", default="screened.csv")
    p.add_argument("--scale-out", help="optional JSON with the per-column min/max")
    return parser


def _bandwidths(text, sample, n_eff=None):
    if text == "auto":
        return rot_bandwidth(sample, n_eff=n_eff)
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--bandwidth must be 'auto' or numbers, got {text!r}") from None
    if len(vals) == 1:
        return Bandwidths.constant(vals[0], sample.d)
    if len(vals) != sample.d:
        raise ConfigError(f"--bandwidth lists {len(vals)} values for {sample.d} covariates")
    return Bandwidths.from_values(vals)


def _inner(args):
    return FitConfig(max_outer_iters=args.max_iters, tol=args.tol, grid_size=args.grid)


def _load_sample(path, response, columns=None):
    table = load_csv(path, response)
    if columns is not None and table.columns != columns:
        raise DataError(f"{path}: covariate columns differ from the target file")
    return table, table.to_sample()


def _cmd_fit(args):
    table, sample = _load_sample(args.data, args.response)
    kernel = BaselineKernel.parse(args.kernel)
    bw = _bandwidths(args.bandwidth, sample)
    cfg = _inner(args)
    grid = EvalGrid.uniform(cfg.grid_size)
    design = build_design(sample, bw, grid, kernel, not args.nw, ridge_floor=cfg.ridge_floor)
    if args.lam is not None:
        fit = fit_design(design, cfg.with_lambda(args.lam))
    else:
        _, fit = select_lambda(sample, bw, LambdaGrid.for_response(sample.y), cfg, design=design,
                               kernel=kernel, local_linear=not args.nw)
    art = FitArtifact.from_fit(fit, config={"columns": table.columns, "method": "NW" if args.nw else "LL"},
                               seed=args.seed, input_digest=file_digest(args.data))
    art.save(args.out)
    print(f"lambda={fit.lam:.6g} active={len(fit.active_set)}/{sample.d} converged={fit.diagnostics.converged} "
          f"-> {args.out}")


def _cmd_tl_fit(args):
    table, target = _load_sample(args.data, args.response)
    auxes = [_load_sample(p, args.response, table.columns)[1] for p in args.aux]
    mset = MultiSampleSet(target, auxes)
    include = not args.no_pool_target
    fixed = args.lambda1 is not None or args.lambda2 is not None
    if fixed and (args.lambda1 is None or args.lambda2 is None or args.bic2d):
        raise ConfigError("give both --lambda1 and --lambda2, or use --bic2d")
    bw_pool = pooled_bandwidth(mset, include) if args.bandwidth == "auto" else _bandwidths(args.bandwidth, target)
    cfg = TLConfig(lambda1=args.lambda1 or 0.0, lambda2=args.lambda2 or 0.0, bw_pooled=bw_pool,
                   bw_target=_bandwidths(args.bandwidth, target), include_target_in_pool=include,
                   inner=_inner(args), kernel=BaselineKernel.parse(args.kernel))
    if fixed:
        res = tl_fit(mset, cfg)
        lam1, lam2 = cfg.lambda1, cfg.lambda2
    else:
        pooled_y = np.concatenate([s.y for s in mset.pool(include)[0]])
        lam1, lam2, res = select_lambda_pair(mset, cfg, LambdaGrid.for_response(pooled_y, 10),
                                             LambdaGrid.for_response(target.y, 10))
    art = FitArtifact.from_fit(res.final, config={"columns": table.columns, "method": "TL", "lambda1": lam1,
                                                  "lambda2": lam2, "pool_target": include},
                               seed=args.seed, input_digest=file_digest(args.data, *args.aux))
    art.save(args.out)
    print(f"lambda1={lam1:.6g} lambda2={lam2:.6g} active={len(res.final.active_set)}/{target.d} -> {args.out}")


def _cmd_detect(args):
    table, target = _load_sample(args.data, args.response)
    cands = {p: _load_sample(p, args.response, table.columns)[1] for p in args.aux}
    scores = detect_sources(target, cands, c_sd=args.c_sd, n_splits=args.splits, seed=args.seed)
    for s in scores:
        print(f"{s.label}\tscore={s.score:.6g}\t{'accept' if s.accepted else 'reject'}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump([{"label": s.label, "score": s.score, "accepted": s.accepted,
                        "split_scores": s.split_scores} for s in scores], fh, indent=1)


def _scenario(args):
    from .simlab import ScenarioConfig, scenario_from_dict

    data = {}
    if args.scenario:
        import tomli

        try:
            with open(args.scenario, "rb") as fh:
                data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{args.scenario}: {exc}") from exc
        data = data.get("scenario", data)
    flags = {"n0": args.n0, "n_aux": args.n_aux, "d": args.d, "t": args.t,
             "delta_p": args.delta_p, "delta_f": args.delta_f}
    data.update({k: v for k, v in flags.items() if v is not None})
    data["seed"] = args.seed
    data["replications"] = args.reps
    cfg = scenario_from_dict(data) if data else ScenarioConfig()
    return cfg


def _cmd_simulate(args):
    from .simlab import run_experiment

    cfg = _scenario(args)
    methods = [m.strip().upper() for m in args.methods.split(",") if m.strip()]
    rows = run_experiment([cfg], methods, out=args.out, threads=args.threads, mc_size=args.mc_size)
    failed = sum(1 for r in rows if r[-1] != "ok")
    print(f"{len(rows)} row(s) -> {args.out}" + (f" ({failed} failed)" if failed else ""))


def _cmd_screen(args):
    table = load_csv(args.data, args.response)
    table = screen_features(table, args.top_var, args.top_cor)
    table, info = scale_unit_interval(table)
    table = normalize_response(table, args.target_sd)
    write_csv(table, args.out)
    if args.scale_out:
        with open(args.scale_out, "w") as fh:
            json.dump({"columns": table.columns, **info.to_dict()}, fh, indent=1)
    print(f"{table.n} rows x {table.p} covariates -> {args.out} (dropped {table.dropped_count} row(s))")


COMMANDS = {"fit": _cmd_fit, "tl-fit": _cmd_tl_fit, "detect": _cmd_detect,
            "simulate": _cmd_simulate, "screen": _cmd_screen}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, InvalidBandwidthError) as exc:
        print(f"sbftl: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError, DimensionError, InsufficientSampleError, OSError) as exc:
        print(f"sbftl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IllConditionedError, DegenerateMarginalError, SBFError, ArithmeticError) as exc:
        print(f"sbftl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
