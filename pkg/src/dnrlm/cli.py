"""Command-line front end.

Subcommands::

    fit             divide a logistic CSV, fit every subset, recombine
    recombine       recombine serialized subset fits
    cpa             contour probabilities of an approximation sample
    simulate        write logistic-regression datasets
    exitpoll        exit-poll posterior comparison
    logistic-study  logistic divide-and-recombine accuracy study

Exit codes: 0 success, 1 usage error, 2 model or runtime error. Every
output directory receives a ``manifest.json`` with the resolved options and
all derived seeds, which is enough to rerun the command.
"""
import argparse
import csv
import json
import os
import sys

import numpy as np

from dnrlm import __version__, cpa
from dnrlm.datamodels import betabinom_mode, load_logistic_csv, load_poll_csv, logistic_loglik, logistic_mle, write_logistic_csv
from dnrlm.engine import RUN_KINDS, SSN, DnrConfig, recombine_all, run_pipeline
from dnrlm.errors import DnrError, IndivisibleRows
from dnrlm.experiments import (
    STUDY_THIN,
    SimDesign,
    exit_poll_data,
    exitpoll_study,
    logistic_study,
    poll_log_ref,
    simulate_logistic,
    write_exitpoll_report,
    write_logistic_study,
)
from dnrlm.mcmc import DEFAULT_SEED, McmcConfig, derive_seed, read_sample_csv
from dnrlm.recombine import NORMAL_LOCAL, NORMAL_MM, SCHEMA_VERSION, SN_MM, dump_fits, load_fits
from dnrlm.skewnormal import SnParams, sn_log_pdf, sn_mode

EXIT_OK, EXIT_USAGE, EXIT_MODEL = 0, 1, 2

FIT_MODELS = {"sn": SN_MM, "ssn": SSN, "normal-mm": NORMAL_MM, "normal-local": NORMAL_LOCAL}
RECOMBINE_MODELS = {"sn": (SN_MM,), "ssn": (SSN,), "normal": (NORMAL_MM, NORMAL_LOCAL)}

# errors that mean the request itself was malformed
USAGE_ERRORS = (IndivisibleRows,)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _targets(text):
    try:
        return cpa.parse_targets(text)
    except DnrError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_mcmc(p, draws=10000, burnin=5000, thin=1):
    p.add_argument("--draws", type=_pos_int, default=draws, help=f"retained MCMC draws per chain (default {draws})")
    p.add_argument("--burnin", type=_nonneg_int, default=burnin, help=f"burn-in proposals (default {burnin})")
    p.add_argument("--thin", type=_pos_int, default=thin, help=f"keep every k-th post-burn-in state (default {thin})")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help=f"master seed (default {DEFAULT_SEED})")


def build_parser():
    parser = _Parser(prog="dnrlm", description="Divide-and-recombine likelihood models.")
    parser.add_argument("--version", action="version", version=f"dnrlm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser(
        "fit",
        help="divide, fit and recombine a logistic-regression CSV",
        description="Input CSV columns: y (0/1), x1..xp. Writes fits.json, estimates.json, "
        "warnings.txt, timing.csv and manifest.json; with --dump-chains also chain_<s>.csv.",
    )
    p.add_argument("--data", required=True, help="CSV with columns y, x1..xp")
    p.add_argument("--r", type=_nonneg_int, required=True, help="log2 of the number of subsets")
    p.add_argument("--model", action="append", choices=sorted(FIT_MODELS), help="repeatable (default sn)")
    _add_mcmc(p)
    p.add_argument("--workers", type=_pos_int, default=1)
    p.add_argument("--shuffle", action="store_true", help="permute rows with a seed-derived permutation first")
    p.add_argument("--max-attempts", type=_pos_int, default=10, help="SN fit resampling attempts before clipping")
    p.add_argument("--dump-chains", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser(
        "recombine",
        help="recombine serialized subset fits",
        description="Reads fits.json as written by fit. Writes estimates.json, warnings.txt and manifest.json.",
    )
    p.add_argument("--fits", required=True)
    p.add_argument("--model", action="append", choices=sorted(RECOMBINE_MODELS),
                   help="repeatable; default is every kind present in the fits file (SSN only on request)")
    p.add_argument("--out", required=True)

    p = sub.add_parser(
        "cpa",
        help="contour probabilities of an approximation against a reference",
        description="Sample CSVs have a header row and one draw per row. --logref is one of "
        "std-normal, exitpoll, poll:PATH (CSV fips,total_voters,sample_voters,sample_clinton), "
        "logistic:PATH (data CSV) or sn:PATH (JSON with xi, omega, alpha). "
        "Writes cpa.csv (h, T, A, diff), summary.json and manifest.json.",
    )
    p.add_argument("--ref-sample", required=True)
    p.add_argument("--approx-sample", required=True)
    p.add_argument("--logref", required=True)
    p.add_argument("--mode", help="comma-separated mode; found automatically when omitted")
    p.add_argument("--targets", type=_targets, default=cpa.DEFAULT_TARGETS, help="start:stop:step (default 0.05:0.95:0.05)")
    p.add_argument("--out", required=True)

    p = sub.add_parser(
        "simulate",
        help="write simulated logistic-regression datasets",
        description="Writes run_<k>.csv (columns y, x1..xp) with 2^(m+r) rows for k = 1..runs.",
    )
    p.add_argument("--m", type=_nonneg_int, default=8)
    p.add_argument("--r", type=_nonneg_int, default=3)
    p.add_argument("--p", type=_pos_int, default=5)
    p.add_argument("--runs", type=_pos_int, default=1)
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)

    p = sub.add_parser(
        "exitpoll",
        help="compare SN and normal approximations of the exit-poll posterior",
        description="Writes modes.csv, qq_alpha.csv, qq_beta.csv, cpa_<method>.csv, summary.json, manifest.json.",
    )
    _add_mcmc(p, thin=STUDY_THIN)
    p.add_argument("--n-compare", type=_pos_int, default=10000, help="draws from each approximation")
    p.add_argument("--targets", type=_targets, default=cpa.DEFAULT_TARGETS)
    p.add_argument("--out", required=True)

    p = sub.add_parser(
        "logistic-study",
        help="logistic divide-and-recombine accuracy study",
        description="Writes cpa_series.csv (run, method, h, T, A, diff), summary.json and manifest.json.",
    )
    p.add_argument("--m", type=_nonneg_int, default=8)
    p.add_argument("--r", type=_nonneg_int, default=3)
    p.add_argument("--p", type=_pos_int, default=5)
    p.add_argument("--runs", type=_pos_int, default=5)
    _add_mcmc(p, thin=STUDY_THIN)
    p.add_argument("--workers", type=_pos_int, default=1)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _manifest(out, args, argv, **resolved):
    opts = {k: v for k, v in vars(args).items() if k != "command"}
    opts = {k: list(v) if isinstance(v, tuple) else v for k, v in opts.items()}
    _write_json(os.path.join(out, "manifest.json"), {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "options": opts,
        **resolved,
    })


def _mcmc(args):
    return McmcConfig(n_draws=args.draws, burnin=args.burnin, thin=args.thin, seed=args.seed)


def _write_estimates(path, estimates):
    ordered = {k: estimates[k].to_dict() for k in RUN_KINDS if k in estimates}
    _write_json(path, {"schema_version": SCHEMA_VERSION, "estimates": ordered})


def _write_warnings(path, warnings):
    with open(path, "w") as fh:
        for w in warnings:
            fh.write(w + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args, argv):
    data = load_logistic_csv(args.data)
    kinds = tuple(k for k in RUN_KINDS if k in {FIT_MODELS[m] for m in (args.model or ["sn"])})
    config = DnrConfig(
        r_log2=args.r,
        model_kinds=kinds,
        mcmc=_mcmc(args),
        master_seed=args.seed,
        workers=args.workers,
        shuffle=args.shuffle,
        keep_chains=args.dump_chains,
        max_attempts=args.max_attempts,
    )
    run = run_pipeline(data, config)
    os.makedirs(args.out, exist_ok=True)
    dump_fits(run.fits, os.path.join(args.out, "fits.json"))
    _write_estimates(os.path.join(args.out, "estimates.json"), run.estimates)
    _write_warnings(os.path.join(args.out, "warnings.txt"), run.warnings)
    with open(os.path.join(args.out, "timing.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "seconds"])
        for phase, sec in run.timing.items():
            w.writerow([phase, f"{sec:.6f}"])
    for s, draws in run.chains.items():
        with open(os.path.join(args.out, f"chain_{s}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"theta{j + 1}" for j in range(draws.shape[1])])
            w.writerows([[repr(float(v)) for v in row] for row in draws])
    _manifest(args.out, args, argv, n_rows=data.n, p=data.p, config=config.to_dict())
    for w in run.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_recombine(args, argv):
    fits = load_fits(args.fits)
    present = {f.model_kind for f in fits}
    if args.model:
        wanted = {k for m in args.model for k in RECOMBINE_MODELS[m]}
        wanted = {k for k in wanted if k == SSN or k in present}
    else:
        wanted = present
    kinds = tuple(k for k in RUN_KINDS if k in wanted)
    if not kinds:
        raise UsageError(f"--model: no matching fits in {args.fits}")
    estimates, warnings = recombine_all(fits, kinds)
    os.makedirs(args.out, exist_ok=True)
    _write_estimates(os.path.join(args.out, "estimates.json"), estimates)
    _write_warnings(os.path.join(args.out, "warnings.txt"), warnings)
    _manifest(args.out, args, argv, model_kinds=list(kinds), n_fits=len(fits))
    if not estimates:
        raise DnrError("; ".join(warnings))
    return EXIT_OK


def resolve_logref(spec, dim):
    """Return ``(vectorized log_ref, mode)`` for a builtin reference name."""
    name, _, param = spec.partition(":")
    if name == "std-normal":
        return (lambda x: -0.5 * np.sum(np.square(np.atleast_2d(x)), axis=1)), np.zeros(dim)
    if name in ("exitpoll", "poll"):
        if name == "poll" and not param:
            raise UsageError("--logref: poll needs a CSV path, as poll:PATH")
        data = load_poll_csv(param) if name == "poll" else exit_poll_data()
        return poll_log_ref(data), betabinom_mode(data)[0]
    if name == "logistic" and param:
        data = load_logistic_csv(param)
        return (lambda t: logistic_loglik(np.atleast_2d(t), data)), logistic_mle(data)[0]
    if name == "sn" and param:
        with open(param) as fh:
            params = SnParams.from_json(fh.read())
        return (lambda t: np.atleast_1d(sn_log_pdf(np.atleast_2d(t), params))), sn_mode(params)
    raise UsageError(f"--logref: unknown reference {spec!r}")


def cmd_cpa(args, argv):
    ref = read_sample_csv(args.ref_sample)
    approx = read_sample_csv(args.approx_sample)
    if ref.ndim != 2 or approx.ndim != 2 or ref.shape[1] != approx.shape[1]:
        raise UsageError("--approx-sample: column count differs from --ref-sample")
    log_ref, mode = resolve_logref(args.logref, ref.shape[1])
    if args.mode:
        try:
            mode = np.array([float(v) for v in args.mode.split(",")])
        except ValueError:
            raise UsageError(f"--mode: cannot parse {args.mode!r}") from None
    h = cpa.thresholds_for_targets(log_ref, mode, ref, args.targets)
    res = cpa.cpa_run(log_ref, mode, ref, approx, h)
    os.makedirs(args.out, exist_ok=True)
    cpa.write_cpa_csv(os.path.join(args.out, "cpa.csv"), res)
    _write_json(os.path.join(args.out, "summary.json"), {
        "schema_version": SCHEMA_VERSION,
        "n1": res.n1,
        "n2": res.n2,
        "mode": mode.tolist(),
        "max_abs_diff": res.max_abs_diff(),
        "mean_abs_diff": res.mean_abs_diff(),
    })
    _manifest(args.out, args, argv, mode=mode.tolist())
    return EXIT_OK


def cmd_simulate(args, argv):
    design = SimDesign(runs=args.runs, m_log2=args.m, r_log2=args.r, p=args.p, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    seeds = {}
    for k in range(1, design.runs + 1):
        write_logistic_csv(os.path.join(args.out, f"run_{k}.csv"), simulate_logistic(design, k))
        seeds[str(k)] = derive_seed(design.run_seed(k), 0)
    _manifest(args.out, args, argv, n_rows=design.n, data_seeds=seeds)
    return EXIT_OK


def cmd_exitpoll(args, argv):
    report = exitpoll_study(_mcmc(args), n_compare=args.n_compare, targets=args.targets)
    summary = write_exitpoll_report(report, args.out)
    _manifest(args.out, args, argv, config=report.config)
    for k in ("sn", "normal-mm", "normal-local"):
        print(f"{k:13s} mode distance {summary['distances'][k]:.4f}  CPA max|A-T| {summary['cpa_max_abs_diff'][k]:.4f}")
    return EXIT_OK


def cmd_logistic_study(args, argv):
    design = SimDesign(runs=args.runs, m_log2=args.m, r_log2=args.r, p=args.p, seed=args.seed)
    mcmc = McmcConfig(n_draws=args.draws, burnin=args.burnin, thin=args.thin, seed=args.seed)
    reports, failures = logistic_study(design, mcmc=mcmc, workers=args.workers)
    write_logistic_study(reports, failures, design, args.out)
    _manifest(args.out, args, argv, run_seeds={str(k): design.run_seed(k) for k in range(1, design.runs + 1)})
    for rep in reports:
        diffs = "  ".join(f"{k} {r.mean_abs_diff():.4f}" for k, r in rep.cpa.items())
        print(f"run {rep.run_index}: mean|A-T| {diffs}")
    for k, msg in failures.items():
        print(f"run {k} failed: {msg}", file=sys.stderr)
    return EXIT_MODEL if failures and not reports else EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "recombine": cmd_recombine,
    "cpa": cmd_cpa,
    "simulate": cmd_simulate,
    "exitpoll": cmd_exitpoll,
    "logistic-study": cmd_logistic_study,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except USAGE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DnrError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
