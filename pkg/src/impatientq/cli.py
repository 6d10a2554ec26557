"""``impatientq`` command line: solve, sweep, compare and simulate scenarios.

Exit codes: 0 success, 1 malformed input, 2 solver non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import mg1, mmk
from .measures import PerformanceReport, measures_mmk, solve_with_diagnostics
from .model import MmkConfig
from .scenario import Scenario, ScenarioError, load_scenario, pooled_service, with_total_arrival_rate
from .sim import SimConfig, simulate, thread_count

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2
SOLVER_ERRORS = (mg1.NonConvergenceError, mmk.SolverError)
FIG_COLUMNS = ("pct_served_all", "overall_awt", "throughput", "avg_service_time_served")
DIAG_COLUMNS = ("truncation_diagonal_used", "tail_bound", "rounding_bound", "precision_bits",
                "extended_precision")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --- formatting ---------------------------------------------------------------

def _json_num(x):
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.10g}")


def _json_tree(obj):
    if isinstance(obj, dict):
        return {k: _json_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_tree(v) for v in obj]
    return _json_num(obj)


def _csv_cell(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.6g}"
    return "" if x is None else str(x)


def to_json(obj) -> str:
    return json.dumps(_json_tree(obj), indent=2) + "\n"


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_csv_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- subcommands ----------------------------------------------------------------

def _solve_row(system):
    report, diag = solve_with_diagnostics(system)
    return {**report.flat(), **diag}, report, diag


def cmd_solve(args) -> int:
    sc = load_scenario(args.scenario)
    row, report, diag = _solve_row(sc.system)
    if args.format == "json":
        text = to_json({"scenario": sc.name, "units": {"time": sc.time_unit},
                        "report": report.to_dict(), "diagnostics": diag})
    else:
        text = to_csv([row], list(row))
    _emit(text, args.out)
    return EXIT_OK


def _sweep_point(sc: Scenario, total: float, split: float) -> dict:
    row = {"system": sc.name, "lambda": total}
    try:
        res, _, _ = _solve_row(with_total_arrival_rate(sc.system, total, split))
    except SOLVER_ERRORS as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(res)
    row["error"] = ""
    return row


def sweep_rows(scenarios, start, stop, steps, split):
    grid = np.linspace(start, stop, steps)
    jobs = [(sc, float(lam)) for sc in scenarios for lam in grid]
    run = lambda job: _sweep_point(job[0], job[1], split)
    threads = thread_count()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run, jobs))   # map keeps submission order
    return [run(j) for j in jobs]


def sweep_columns():
    names = [n for n in _flat_names() if n not in FIG_COLUMNS]
    return ["system", "lambda", *FIG_COLUMNS, *names, *DIAG_COLUMNS, "error"]


def _flat_names():
    from .measures import ClassReport
    out = [f"{c}_{f}" for c in ("class1", "class2") for f in ClassReport.__dataclass_fields__]
    out += [f for f in PerformanceReport.__dataclass_fields__ if f not in ("class1", "class2")]
    return out


def gnuplot_script(data_path: str, systems) -> str:
    names = " ".join(systems)
    panels = [(3, "fraction served"), (4, "mean wait of all customers"),
              (5, "throughput"), (6, "mean service time of served")]
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set multiplot layout 2,2",
        "set xlabel 'total arrival rate'",
        f"systems = \"{names}\"",
    ]
    for col, title in panels:
        lines.append(f"set title '{title}'")
        lines.append(
            f"plot for [s in systems] '{data_path}' using 2:(strcol(1) eq s ? ${col} : 1/0) "
            f"with linespoints title s")
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    if args.vary != "total_arrival_rate":
        raise InputError(f"cannot vary {args.vary!r}")
    if not (0 < args.start <= args.stop) or args.steps < 1:
        raise InputError("sweep range must satisfy 0 < --from <= --to and --steps >= 1")
    scenarios = [load_scenario(p) for p in args.scenario]
    rows = sweep_rows(scenarios, args.start, args.stop, args.steps, args.split)
    cols = sweep_columns()
    text = to_json(rows) if args.format == "json" else to_csv(rows, cols)
    _emit(text, args.out)
    if args.plot:
        data = args.out or "sweep.csv"
        Path(args.plot).write_text(gnuplot_script(data, [s.name for s in scenarios]))
    return EXIT_OK


TABLE_COLUMNS = ("awt1", "awt2", "rs1_pct", "rs2_pct", "aq1", "aq2", "util_pct", "ast")


def table_row(report: PerformanceReport) -> dict:
    """Table-shaped subset; percentages are scaled for display here only."""
    c1, c2 = report.class1, report.class2
    return {"awt1": c1.awt, "awt2": c2.awt,
            "rs1_pct": 100 * c1.p_serve, "rs2_pct": 100 * c2.p_serve,
            "aq1": c1.lq, "aq2": c2.lq,
            "util_pct": 100 * report.utilization, "ast": report.avg_service_time_served}


def _relerr(sim_row, ana_row):
    return {c: (abs(sim_row[c] - ana_row[c]) / abs(sim_row[c]) if sim_row[c] else math.nan)
            for c in TABLE_COLUMNS}


def compare_rows(sc: Scenario, seed=None, with_sim=True):
    system = sc.system
    if not isinstance(system, MmkConfig):
        raise InputError("compare needs an mmk scenario (exponential service and patience)")
    distinct = table_row(solve_with_diagnostics(system)[0])
    pooled_cfg = pooled_service(system)
    pooled = table_row(measures_mmk(mmk.solve_mmk_equal_mu(pooled_cfg), pooled_cfg))
    rows = [{"method": "analytic_distinct_mu", **distinct},
            {"method": "analytic_pooled_mu", **pooled}]
    if with_sim:
        simc = dict(sc.sim)
        if seed is not None:
            simc["seed"] = seed
        est = simulate(SimConfig(system, **simc))
        simr = table_row(est.mean)
        rows.append({"method": "simulation", **simr})
        rows.append({"method": "relerr_distinct_mu", **_relerr(simr, distinct)})
        rows.append({"method": "relerr_pooled_mu", **_relerr(simr, pooled)})
    return rows


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario)
    rows = compare_rows(sc, args.seed, not args.no_sim)
    if args.format == "json":
        text = to_json({"scenario": sc.name, "units": {"time": sc.time_unit}, "rows": rows})
    else:
        text = to_csv(rows, ["method", *TABLE_COLUMNS])
    _emit(text, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    simc = dict(sc.sim)
    if args.seed is not None:
        simc["seed"] = args.seed
    try:
        cfg = SimConfig(sc.system, **simc)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    est = simulate(cfg)
    if args.format == "json":
        text = to_json({"scenario": sc.name, "units": {"time": sc.time_unit}, "sim": simc,
                        **est.to_dict()})
    else:
        mean, half = est.mean.flat(), est.half_width.flat()
        rows = [{"field": k, "mean": mean[k], "half_width": half[k]} for k in mean]
        text = to_csv(rows, ["field", "mean", "half_width"])
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="impatientq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, default_format):
        sp.add_argument("--format", choices=("json", "csv"), default=default_format)
        sp.add_argument("--out", metavar="PATH", help="write to PATH instead of stdout")

    s = sub.add_parser("solve", help="analytic performance measures of one scenario")
    s.add_argument("scenario")
    common(s, "json")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="measures over a range of total arrival rates")
    s.add_argument("scenario", nargs="+")
    s.add_argument("--vary", default="total_arrival_rate")
    s.add_argument("--from", dest="start", type=float, required=True)
    s.add_argument("--to", dest="stop", type=float, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--split", type=float, default=0.5, help="class-1 share of the arrivals")
    s.add_argument("--plot", metavar="PATH", help="also write a gnuplot script")
    common(s, "csv")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("compare", help="distinct vs pooled service rates vs simulation")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--no-sim", action="store_true", help="analytic rows only")
    common(s, "csv")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("simulate", help="simulation estimates with 95%% confidence intervals")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    common(s, "json")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, InputError, ValueError) as exc:
        print(f"impatientq: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SOLVER_ERRORS as exc:
        print(f"impatientq: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
