"""Command line driver for convergence studies and diagnostics tables.

Runs a (case, scheme, level range) study, writes the error/EOC table as
CSV, and optionally a per-level diagnostics table with the coercivity,
conformity-defect and consistency-defect numbers.  Level l uses a mesh
with 2^l subdivisions per direction.  Output is deterministic: repeated
runs with the same configuration are byte-identical.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .analysis import compute_errors, emit_csv, emit_diagnostics_csv
from .assembly import SolverError
from .cases import CASE_NAMES, get_case
from .control import postprocess, solve_kkt_pdas
from .gd_core import compute_cd, compute_sd_upper, compute_wd
from .schemes import SCHEMES, build_scheme

DEFAULT_LEVELS = (2, 6)


class LevelFailure(Exception):
    """Solver breakdown at one study level; carries the mesh size."""

    def __init__(self, level, h, cause):
        super().__init__(f"level {level} (h={h:.3e}): {cause}")
        self.level = level
        self.h = h


def thread_count():
    """Worker cap from GDMOPT_THREADS; defaults to serial execution."""
    raw = os.environ.get("GDMOPT_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"GDMOPT_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def run_level(case, scheme, level, shift=0.0, pdas_max_iter=100, pdas_tol=1e-10):
    """Solve one study level and return its error report."""
    mesh = case.build_mesh(scheme, 2 ** level, shift=shift)
    gd = build_scheme(scheme, mesh, case.bc)
    problem = case.build_problem(gd)
    try:
        solution = solve_kkt_pdas(problem, max_iter=pdas_max_iter, tol=pdas_tol)
    except SolverError as exc:
        raise LevelFailure(level, mesh.h, exc) from exc
    post = postprocess(problem, solution, case.p)
    return compute_errors(
        gd, case, solution.y, solution.p, solution.u, post,
        level=level, pdas_iters=solution.iterations,
    )


def run_study(case_name, scheme, levels=DEFAULT_LEVELS, shift=0.0,
              pdas_max_iter=100, pdas_tol=1e-10, threads=1):
    """Run all levels of a study; reports stop at the first failed level.

    Returns (reports, failure) where failure is None or the LevelFailure
    of the first level (in order) whose solve broke down.  Levels run
    independently, so rows are identical whether levels are run together
    or one at a time.
    """
    case = get_case(case_name)
    ids = list(range(levels[0], levels[1] + 1))
    outcomes = {}
    if threads > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                level: pool.submit(
                    run_level, case, scheme, level, shift, pdas_max_iter, pdas_tol
                )
                for level in ids
            }
            for level in ids:
                try:
                    outcomes[level] = futures[level].result()
                except LevelFailure as exc:
                    outcomes[level] = exc
    else:
        for level in ids:
            try:
                outcomes[level] = run_level(
                    case, scheme, level, shift, pdas_max_iter, pdas_tol
                )
            except LevelFailure as exc:
                outcomes[level] = exc
                break
    reports = []
    for level in ids:
        outcome = outcomes.get(level)
        if isinstance(outcome, LevelFailure):
            return reports, outcome
        if outcome is None:
            break
        reports.append(outcome)
    return reports, None


def run_diagnostics(case_name, scheme, levels=DEFAULT_LEVELS, shift=0.0):
    """Per-level coercivity / conformity / consistency table rows."""
    case = get_case(case_name)
    rows = []
    for level in range(levels[0], levels[1] + 1):
        mesh = case.build_mesh(scheme, 2 ** level, shift=shift)
        gd = build_scheme(scheme, mesh, case.bc)
        rows.append((
            level,
            mesh.h,
            compute_cd(gd),
            compute_wd(gd, case.grad_y),
            compute_sd_upper(gd, case.y, case.grad_y),
            compute_sd_upper(gd, case.p, case.grad_p),
        ))
    return rows


def _levels_arg(text):
    try:
        if ".." in text:
            a, _, b = text.partition("..")
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if lo < 0:
        raise argparse.ArgumentTypeError("levels must be nonnegative")
    if hi < lo:
        raise argparse.ArgumentTypeError("level range must satisfy A <= B")
    return lo, hi


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gdmopt",
        description="Convergence studies for gradient-scheme discretisations "
                    "of box-constrained elliptic optimal control problems.",
    )
    parser.add_argument("--case", required=True, choices=CASE_NAMES,
                        help="benchmark problem to run")
    parser.add_argument("--scheme", required=True, choices=SCHEMES,
                        help="gradient discretisation")
    parser.add_argument("--levels", type=_levels_arg, default=DEFAULT_LEVELS,
                        metavar="A..B", help="inclusive level range (default 2..6)")
    parser.add_argument("--shift", type=float, default=0.0,
                        help="cell-point shift factor for hmm on Cartesian meshes")
    parser.add_argument("--out", default=None, metavar="PATH",
                        help="CSV output path (default: stdout)")
    parser.add_argument("--diagnostics", action="store_true",
                        help="emit the per-level diagnostics table instead")
    parser.add_argument("--pdas-max-iter", type=int, default=100)
    parser.add_argument("--pdas-tol", type=float, default=1e-10)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not 0.0 <= args.shift < 0.5:
        parser.error("--shift must lie in [0, 0.5)")
    if args.shift != 0.0 and args.scheme != "hmm":
        parser.error("--shift applies only to --scheme hmm")
    if args.shift != 0.0 and args.case == "example2-lshape":
        parser.error("--shift requires a Cartesian-capable case")
    if args.pdas_max_iter < 1:
        parser.error("--pdas-max-iter must be at least 1")
    if args.pdas_tol <= 0.0:
        parser.error("--pdas-tol must be positive")
    try:
        threads = thread_count()
    except ValueError as exc:
        parser.error(str(exc))

    out = args.out if args.out is not None else sys.stdout
    if args.diagnostics:
        rows = run_diagnostics(args.case, args.scheme, args.levels, shift=args.shift)
        emit_diagnostics_csv(rows, out)
        return 0

    reports, failure = run_study(
        args.case, args.scheme, args.levels, shift=args.shift,
        pdas_max_iter=args.pdas_max_iter, pdas_tol=args.pdas_tol,
        threads=threads,
    )
    marker = None if failure is None else (failure.level, failure.h)
    emit_csv(reports, out, failure=marker)
    if failure is not None:
        print(f"solver failure: {failure}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
