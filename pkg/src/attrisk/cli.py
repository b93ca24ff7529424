"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 fit failure, 4 numerical failure.
Outputs are staged in a temporary directory and moved into place only when
the whole command succeeds.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import re
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from ._seeding import seed_sequence
from .errors import AttriskError, FitError, NumericalError
from .report import (
    JOINT_DIR,
    REPORT_NAME,
    joint_filename,
    read_report,
    write_joint,
    write_json,
    write_report,
)
from .risk import DEFAULT_G, DEFAULT_H, DEFAULT_RADIUS, RecordError, evaluate_all, summarize, summarize_rows
from .schema import load_dataset, read_plan, validate_plan, write_dataset, write_plan
from .synthesizers import DrawsSet, NIGPrior, draw_index, fit_plan, read_draws, simulate_synthetic, write_draws


EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FIT = 3
EXIT_NUMERICAL = 4

SEED_ENV = "ATTRISK_SEED"
PLAN_COPY = "plan.json"


class UsageError(AttriskError, ValueError):
    """A command-line argument is invalid."""


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError("must be positive")
    return v


def parse_G(text: str) -> list[int]:
    """``"11"`` or a comma list such as ``"11,7"``, one size per continuous variable."""
    try:
        sizes = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid sizes must be integers, got {text!r}") from None
    if any(g < 1 for g in sizes):
        raise argparse.ArgumentTypeError("grid sizes must be at least 1")
    return sizes


def parse_records(text: str) -> list[int]:
    """Comma list of 0-based indices and inclusive ranges, e.g. ``"0-99,150"``.

    Order of first appearance is kept and duplicates are dropped.
    """
    out: list[int] = []
    seen = set()
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        m = re.fullmatch(r"(\d+)(?:-(\d+))?", part)
        if not m:
            raise argparse.ArgumentTypeError(f"bad record selector {part!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) is not None else lo
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {part!r}")
        for r in range(lo, hi + 1):
            if r not in seen:
                seen.add(r)
                out.append(r)
    return out


def resolve_seed(seed: int | None, generate: bool = True) -> int | None:
    """Explicit seed, else ``ATTRISK_SEED``, else a fresh random seed (or None)."""
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if generate:
        return int(np.random.SeedSequence().entropy % (2**63))
    return None


@contextlib.contextmanager
def staged_output(out):
    """Yield a scratch directory whose contents replace files in ``out`` on success."""
    out = Path(out).resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".attrisk-", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if not out.exists():
        os.replace(tmp, out)
        return
    for item in sorted(tmp.iterdir()):
        target = out / item.name
        if target.is_dir() and not target.is_symlink():
            shutil.rmtree(target)
        os.replace(item, target)
    shutil.rmtree(tmp, ignore_errors=True)


def _numbered(paths, pattern: str) -> list[Path]:
    rx = re.compile(pattern)
    found = [(int(m.group(1)), p) for p in paths if (m := rx.fullmatch(p.name))]
    return [p for _, p in sorted(found)]


def expand_inputs(items, pattern: str, what: str) -> list[Path]:
    """Files given directly, or the numbered files matching ``pattern`` inside a directory."""
    files: list[Path] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            inside = _numbered(p.iterdir(), pattern)
            if not inside:
                raise UsageError(f"no {what} files in directory {p}")
            files.extend(inside)
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"{what} file not found: {p}")
    return files


def _load_inputs(args):
    columns, raw_plan = read_plan(args.plan)
    data = load_dataset(args.data, columns)
    plan = validate_plan(raw_plan, data)
    return columns, data, plan


# ---------------------------------------------------------------- synthesize


def cmd_synthesize(args) -> int:
    seed = resolve_seed(args.seed)
    columns, data, plan = _load_inputs(args)
    fit_seed, sim_seed = seed_sequence(seed).spawn(2)
    prior = NIGPrior(scale=args.prior_scale)
    draws = fit_plan(data, plan, n_draws=args.n_draws, burn_in=args.burn_in, prior=prior, seed=fit_seed)
    synthetic = simulate_synthetic(plan, data, draws, m=args.m, thin=args.thin, seed=sim_seed)

    steps_meta = []
    for s, dm in enumerate(draws):
        steps_meta.append(
            {
                "step": s + 1,
                "model": str(plan.steps[s]),
                "family": plan.steps[s].family,
                "draws": dm.n_draws,
                "acceptance_rate": dm.acceptance_rate,
                "warnings": list(dm.warnings),
                "draw_rows": [draw_index(dm.n_draws, args.m, args.thin, l) for l in range(args.m)],
            }
        )
    meta = {
        "seed": seed,
        "m": args.m,
        "thin": args.thin,
        "n_draws": args.n_draws,
        "burn_in": args.burn_in,
        "prior": {"coefficient_scale": prior.scale, "a0": prior.a0, "b0": prior.b0},
        "n_records": data.n,
        "steps": steps_meta,
    }
    with staged_output(args.out) as tmp:
        for l, syn in enumerate(synthetic):
            write_dataset(syn, tmp / f"synthetic_{l + 1}.csv")
        for s, dm in enumerate(draws):
            write_draws(dm, tmp / f"draws_step{s + 1}.csv")
        write_plan(plan, tmp / PLAN_COPY)
        write_json(meta, tmp / "synthesis.json")

    print(f"seed {seed}; {data.n} records; {args.m} synthetic dataset(s) written to {args.out}")
    for st in steps_meta:
        rate = "exact conjugate draws" if st["acceptance_rate"] is None else f"acceptance {st['acceptance_rate']:.3f}"
        print(f"  step {st['step']}: {st['model']} [{st['family']}] {st['draws']} draws, {rate}")
        for w in st["warnings"]:
            print(f"    warning: {w}")
    return EXIT_OK


# ---------------------------------------------------------------------- risk


def cmd_risk(args) -> int:
    seed = resolve_seed(args.seed, generate=False)
    columns, data, plan = _load_inputs(args)
    syn_files = expand_inputs(args.syndata, r"synthetic_(\d+)\.csv", "synthetic data")
    draw_files = expand_inputs(args.draws, r"draws_step(\d+)\.csv", "draws")
    if len(draw_files) != len(plan):
        raise UsageError(f"plan has {len(plan)} steps but {len(draw_files)} draws files were given")
    syn = [load_dataset(p, columns, tag=f"synthetic:{l + 1}") for l, p in enumerate(syn_files)]
    for l, d in enumerate(syn):
        if d.n != data.n:
            raise UsageError(f"{syn_files[l]} has {d.n} records, the confidential data has {data.n}")
    draws = DrawsSet([read_draws(p, step=s, plan=plan) for s, p in enumerate(draw_files)])
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)

    report = evaluate_all(
        data, syn, draws, plan,
        G=args.G, radius=args.radius, H=args.H, records=args.records, threads=threads, seed=seed,
    )
    with staged_output(args.out) as tmp:
        write_report(report, tmp / REPORT_NAME)
        if args.dump_joint:
            (tmp / JOINT_DIR).mkdir()
            levels = {v: plan.column(v).levels for v in plan.synthesized if plan.column(v).kind == "categorical"}
            for r in report.results:
                write_joint(r, tmp / JOINT_DIR / joint_filename(r.record), levels)

    meta = report.metadata
    print(f"{meta['n_records']} record(s); grid {tuple(meta['G'])}; H={meta['H']}; m={meta['m']}")
    if report.results:
        s = summarize(report)
        print(
            f"mean truth probability {s['mean_truth_prob']:.6g} vs uniform prior {s['uniform_prior']:.6g}; "
            f"median {s['median_truth_prob']:.6g}"
        )
        print(f"truth ranked first for {s['rank1_count']} of {s['n_records']} record(s)")
    return EXIT_OK


# -------------------------------------------------------------------- report

SUMMARY_NAME = "summary.csv"


def summary_table(summary: dict) -> list[tuple[str, str, str]]:
    rows = []
    for key in ("n_records", "uniform_prior", "mean_truth_prob", "median_truth_prob", "fraction_below_prior", "rank1_count"):
        rows.append(("joint", key, _cell(summary[key])))
    for rank, count in sorted(summary["rank_histogram"].items()):
        rows.append(("joint", f"rank_{rank}_count", str(count)))
    for v, stats in summary["variables"].items():
        for key, value in stats.items():
            rows.append((v, key, _cell(value)))
    return rows


def _cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _report_path(path) -> Path:
    p = Path(path)
    return p / REPORT_NAME if p.is_dir() else p


def cmd_report(args) -> int:
    path = _report_path(args.report)
    rows, meta = read_report(path)
    summary = summarize_rows(rows, meta)

    overlay = None
    if args.emit_plots and args.data and args.plan and args.syndata:
        columns, data, plan = _load_inputs(args)
        syn_files = expand_inputs(args.syndata, r"synthetic_(\d+)\.csv", "synthetic data")
        overlay = (data, [load_dataset(p, columns) for p in syn_files], plan)

    with staged_output(args.out) as tmp:
        with open(tmp / SUMMARY_NAME, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["scope", "statistic", "value"])
            writer.writerows(summary_table(summary))
        write_json(summary, tmp / "summary.json")
        if args.emit_plots:
            _emit_plots(rows, meta, tmp, overlay)

    print(
        f"{summary['n_records']} record(s): mean truth probability {summary['mean_truth_prob']:.6g} "
        f"(prior {summary['uniform_prior']:.6g}); {summary['rank1_count']} ranked first"
    )
    return EXIT_OK


def _emit_plots(rows, meta, out: Path, overlay) -> None:
    from . import plotting

    n_cells = int(np.prod(meta["G"]))
    plotting.probability_density(
        [r["truth_prob"] for r in rows], meta["uniform_prior"], out / "truth_prob_density.svg",
        title=f"joint posterior probability of the truth ({n_cells} guesses)",
    )
    plotting.rank_histogram([r["truth_rank"] for r in rows], n_cells, out / "rank_histogram.svg")
    for v in meta["variables"]:
        plotting.probability_density(
            [r[f"marginal_{v}"] for r in rows], meta["marginal_uniform_prior"][v], out / f"marginal_{v}_density.svg",
            title=f"marginal posterior probability of the true {v}",
        )
        null = float(np.mean([r[f"null_abs_diff_{v}"] for r in rows]))
        plotting.abs_diff_histogram([r[f"abs_diff_{v}"] for r in rows], null, out / f"abs_diff_{v}.svg", v)
    if overlay is not None:
        data, syn, plan = overlay
        for v in plan.synthesized:
            col = plan.column(v)
            levels = col.levels if col.kind == "categorical" else None
            plotting.overlay_histogram(data[v], [s[v] for s in syn], out / f"overlay_{v}.svg", v, levels)


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrisk",
        description="Bayesian synthesizers and attribute disclosure risk estimation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress messages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="fit the plan and write synthetic datasets and draws")
    p.add_argument("--data", required=True, help="confidential data CSV")
    p.add_argument("--plan", required=True, help="plan JSON with columns and steps")
    p.add_argument("--out", default="synthesis", help="output directory (default: %(default)s)")
    p.add_argument("--m", type=_positive_int, default=1, help="number of synthetic datasets (default: 1)")
    p.add_argument("--thin", type=_positive_int, default=5, help="spacing of draw rows between datasets (default: 5)")
    p.add_argument("--n-draws", type=_positive_int, default=1000, help="retained posterior draws per step (default: 1000)")
    p.add_argument("--burn-in", type=int, default=1000, help="Metropolis burn-in iterations (default: 1000)")
    p.add_argument("--prior-scale", type=_positive_float, default=2.0, help="prior SD of coefficients (default: 2)")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (fallback: ${SEED_ENV})")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("risk", help="estimate attribute disclosure risk per record")
    p.add_argument("--data", required=True, help="confidential data CSV")
    p.add_argument("--plan", required=True, help="plan JSON with columns and steps")
    p.add_argument("--syndata", required=True, nargs="+", help="synthetic CSV files or a directory of synthetic_<l>.csv")
    p.add_argument("--draws", required=True, nargs="+", help="draws CSV files in step order or a directory of draws_step<s>.csv")
    p.add_argument("--out", default="risk", help="output directory (default: %(default)s)")
    p.add_argument("--H", type=_positive_int, default=DEFAULT_H, help="importance draws (default: %(default)s)")
    p.add_argument("--G", type=parse_G, default=None, help=f"guesses per continuous variable, one value or a comma list (default: {DEFAULT_G})")
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS, help="relative half-width of continuous grids (default: %(default)s)")
    p.add_argument("--records", type=parse_records, default=None, help="0-based record indices and ranges, e.g. 0-99,150")
    p.add_argument("--dump-joint", action="store_true", help="write the full joint array of every record")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads (default: available cores)")
    p.add_argument("--seed", type=int, default=None, help=f"seed recorded in the metadata (fallback: ${SEED_ENV})")
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("report", help="summarize a risk report and optionally plot it")
    p.add_argument("--report", required=True, help="risk_report.csv or the directory holding it")
    p.add_argument("--out", default="summary", help="output directory (default: %(default)s)")
    p.add_argument("--emit-plots", action="store_true", help="write SVG figures")
    p.add_argument("--data", help="confidential data CSV, for overlay plots")
    p.add_argument("--plan", help="plan JSON, for overlay plots")
    p.add_argument("--syndata", nargs="+", help="synthetic data, for overlay plots")
    p.set_defaults(func=cmd_report)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, RecordError):
        if exc.numerical:
            return EXIT_NUMERICAL
        if any(isinstance(e, FitError) for e in exc.failures.values()):
            return EXIT_FIT
        return EXIT_INVALID
    if isinstance(exc, (NumericalError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(exc, FitError):
        return EXIT_FIT
    return EXIT_INVALID


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (AttriskError, ValueError, ArithmeticError, OSError) as exc:
        print(f"attrisk {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
