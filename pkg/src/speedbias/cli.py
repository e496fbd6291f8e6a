"""Command-line front end: ``speedbias {simulate,bias,regress,trend}``.

Exit status is 0 on success, 1 for input or validation errors and 2 when a
computation fails. Every run writes ``run_meta.json`` to the output
directory next to its artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__, bias, regression, ssm, synth, temporal
from .data import DataValidationError, load_dataset, summarize, write_dataset

log = logging.getLogger("speedbias")

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _run_meta(args, artifacts, extra=None) -> dict:
    config = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k != "func"
    }
    meta = {
        "command": args.command,
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "kernel_backend": ssm.BACKEND,
        "rng": bias.RNG_ALGORITHM,
        "artifacts": sorted(artifacts),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra or {})
    return meta


# ---------------------------------------------------------------------------
# commands


def _load(args):
    d = load_dataset(args.measurements, args.regions, device_filter=args.device)
    if d.n == 0:
        raise DataValidationError("no measurements left after filtering")
    return d


def _resampled(d, seed):
    plan = bias.build_resample_plan(d, seed=seed)
    return plan, bias.resample(d, plan)


def cmd_simulate(args, out: Path) -> dict:
    spec_path = args.spec or synth.example_spec_path()
    spec = synth.SynthSpec.from_file(spec_path)
    if args.seed is not None:
        spec = synth.SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    if args.replicates < 1:
        raise InputError("--replicates must be >= 1")

    def emit(sp, where: Path):
        where.mkdir(parents=True, exist_ok=True)
        d, truth = synth.generate(sp)
        write_dataset(d, where / "measurements.csv", where / "regions.csv")
        truth.write(where / "ground_truth.json")
        write_json(where / "spec.json", sp.to_dict())
        return ["measurements.csv", "regions.csv", "ground_truth.json", "spec.json"]

    if args.replicates == 1:
        return {"artifacts": emit(spec, out), "spec_seed": spec.seed}
    children = np.random.SeedSequence(spec.seed).spawn(args.replicates)
    width = len(str(args.replicates - 1))
    names, seeds = [], []
    for r, child in enumerate(children):
        seed = int(child.generate_state(1, np.uint32)[0])
        sub = f"rep_{r:0{width}d}"
        emit(synth.SynthSpec.from_dict({**spec.to_dict(), "seed": seed}), out / sub)
        names.append(sub)
        seeds.append(seed)
    return {"artifacts": names, "spec_seed": spec.seed, "replicate_seeds": seeds}


def cmd_bias(args, out: Path) -> dict:
    d = _load(args)
    chi = bias.chi_square_homogeneity(d)
    s = summarize(d)
    write_json(
        out / "chi_square.json",
        {
            **chi.as_dict(),
            "p_value_text": bias.stats.format_p(chi.p_value),
            "k": s.k,
            "n": s.n,
            "N": s.N,
            "significance": bias.significance_stars(chi.p_value),
        },
    )
    plan, rs = _resampled(d, args.seed)
    grid = bias.default_grid(d, args.grid_points)
    estimates = [
        bias.empirical_cdf_biased(d, grid),
        bias.empirical_cdf_reweighted(d, grid, renormalize=args.renormalize),
        bias.empirical_cdf_resampled(rs, grid),
    ]
    for est, name in zip(estimates, ("biased", "reweighted", "resampled")):
        write_csv(out / f"cdf_{name}.csv", ("x", "estimate", "ci_low", "ci_high", "kind"), est.rows())
    part = bias.classify_regions(d, plan)
    tests = bias.demographic_t_tests(d, part)
    write_csv(
        out / "demographic_tests.csv",
        ("variable", "over_mean", "under_mean", "t", "df", "p_value", "stars"),
        (g.as_row() for g in tests),
    )
    label = {**{r: "over" for r in part.over}, **{r: "under" for r in part.under}}
    counts = dict(zip(d.region_ids, d.counts()))
    write_csv(
        out / "region_classes.csv",
        ("region_id", "population", "n", "target", "class"),
        (
            (rid, d.regions[rid].population, int(counts[rid]), plan.targets[rid], label.get(rid, "exact"))
            for rid in d.region_ids
        ),
    )
    artifacts = [
        "chi_square.json",
        "cdf_biased.csv",
        "cdf_reweighted.csv",
        "cdf_resampled.csv",
        "demographic_tests.csv",
        "region_classes.csv",
    ]
    return {"artifacts": artifacts, "notes": list(rs.notes)}


def cmd_regress(args, out: Path) -> dict:
    d = _load(args)
    _, rs = _resampled(d, args.seed)
    fits = {}
    for name, data in (("original", d), ("resampled", rs)):
        dm = regression.build_design(data, standardize=args.standardize, source=name)
        fits[name] = regression.backward_aic(dm, aic=args.aic_variant)
        write_json(out / f"fit_{name}.json", fits[name].as_dict())

    names = ["intercept"] + [n for n in fits["original"].corr_names]
    for extra in fits["resampled"].corr_names:
        if extra not in names:
            names.append(extra)
    rows = []
    for var in names:
        row = [var]
        for fit in fits.values():
            if var in fit.names:
                j = fit.names.index(var)
                row += [fit.beta[j], fit.se[j], fit.ci95[j, 0], fit.ci95[j, 1]]
            else:
                row += [None] * 4
        rows.append(row)
    header = ["variable"] + [
        f"{src}_{col}" for src in fits for col in ("beta", "se", "ci_low", "ci_high")
    ]
    write_csv(out / "coef_compare.csv", header, rows)

    corr_rows = []
    for src, fit in fits.items():
        for var, line in zip(fit.corr_names, fit.corr):
            corr_rows.append([src, var, *line])
    width = max(len(f.corr_names) for f in fits.values())
    write_csv(
        out / "corr_matrix.csv",
        ["source", "variable", *fits["original"].corr_names] if width else ["source", "variable"],
        corr_rows,
    )
    return {
        "artifacts": ["fit_original.json", "fit_resampled.json", "coef_compare.csv", "corr_matrix.csv"],
        "dropped_constant": list(fits["original"].dropped),
        "notes": list(rs.notes),
    }


def cmd_trend(args, out: Path) -> dict:
    d = _load(args)
    _, rs = _resampled(d, args.seed)
    series = [temporal.TimeSeries.from_dataset(x, aggregate=args.gp_aggregation) for x in (d, rs)]
    grid = None
    if args.grid_step is not None:
        if not args.grid_step > 0:
            raise InputError("--grid-step must be positive")
        hi = max(s.t[-1] for s in series)
        grid = np.arange(0.0, hi + args.grid_step, args.grid_step)
    if args.gp_max_iter < 1:
        raise InputError("--gp-max-iter must be >= 1")
    report = temporal.trend_report(*series, grid=grid, max_iter=args.gp_max_iter)
    write_csv(out / "trend.csv", ("t", "source", "method", "mean", "ci_low", "ci_high"), report.rows())
    write_json(
        out / "gp_meta.json",
        {
            **{src: fit.meta() for src, fit in report.gp.items()},
            "linear": report.slopes(),
            "aggregation": args.gp_aggregation,
            "kernel": "matern52",
        },
    )
    converged = all(f.converged for f in report.gp.values())
    return {"artifacts": ["trend.csv", "gp_meta.json"], "gp_converged": converged}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def globals_(suppress):
        # subcommands accept the global flags too; SUPPRESS keeps them from
        # overwriting values given before the subcommand name
        g = argparse.ArgumentParser(add_help=False)
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--seed", type=int, default=dflt(None), help="RNG seed (default 0; simulate: spec seed)")
        g.add_argument("--out", type=Path, default=dflt(Path(".")), help="output directory (created if absent)")
        g.add_argument("--device", default=dflt(None), help="keep only measurements from this device type")
        g.add_argument("-v", "--verbose", action="store_true", default=dflt(False), help="log progress to stderr")
        return g

    common = globals_(True)

    p = _Parser(
        prog="speedbias",
        description="Sampling-bias diagnostics, demographic regression and temporal "
        "trends for crowdsourced internet speed measurements.",
        parents=[globals_(False)],
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset with ground truth")
    sp.add_argument("--spec", type=Path, default=None, help="JSON spec file (default: bundled example)")
    sp.add_argument("--replicates", type=int, default=1, help="number of datasets; >1 writes rep_* subdirectories")
    sp.set_defaults(func=cmd_simulate)

    def inputs(q):
        q.add_argument("--measurements", type=Path, required=True, help="measurements CSV")
        q.add_argument("--regions", type=Path, required=True, help="regions CSV")

    sp = sub.add_parser("bias", parents=[common], help="chi-squared test, CDF estimators, demographic t-tests")
    inputs(sp)
    sp.add_argument("--grid-points", type=int, default=bias.DEFAULT_GRID_POINTS, help="CDF grid size")
    sp.add_argument(
        "--renormalize",
        action="store_true",
        help="drop unsampled regions from the re-weighted CDF instead of failing",
    )
    sp.set_defaults(func=cmd_bias)

    sp = sub.add_parser("regress", parents=[common], help="regressions on original and re-sampled data")
    inputs(sp)
    sp.add_argument(
        "--standardize", action=argparse.BooleanOptionalAction, default=True,
        help="centre and scale covariates over regions",
    )
    sp.add_argument(
        "--aic-variant", choices=sorted(regression.AIC_PENALTIES), default="unit",
        help="penalty per parameter: unit=1, standard=2",
    )
    sp.set_defaults(func=cmd_regress)

    sp = sub.add_parser("trend", parents=[common], help="linear and GP trends on original and re-sampled data")
    inputs(sp)
    sp.add_argument(
        "--gp-aggregation", choices=("raw", "daily"), default="raw",
        help="fit on every measurement or on daily means",
    )
    sp.add_argument("--grid-step", type=float, default=None, help="prediction grid spacing in days (default 1)")
    sp.add_argument("--gp-max-iter", type=int, default=400, help="optimiser iteration budget per GP fit")
    sp.set_defaults(func=cmd_trend)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command != "simulate" and args.seed is None:
        args.seed = 0
    if args.seed is not None and args.seed < 0:
        print("speedbias: error: --seed must be non-negative", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "bias" and args.grid_points < 2:
        print("speedbias: error: --grid-points must be >= 2", file=sys.stderr)
        return EXIT_INPUT
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        result = args.func(args, out)
    except (DataValidationError, FileNotFoundError, synth.SpecError, InputError,
            bias.UncoveredRegionsError) as exc:
        print(f"speedbias: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (regression.RankDeficientError, linalg.LinAlgError, ValueError,
            ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"speedbias: computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    write_json(out / "run_meta.json", _run_meta(args, result.pop("artifacts"), result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
