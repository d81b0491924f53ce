"""Command-line entry point: gen | prep | solve | match | bench | report."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import harness
from .bip import ModelOptions, save_solution, validate_solution
from .decomp import FULL, SIMPLIFIED, run_decomposition
from .harness import (
    METHODS,
    MH_FLEX,
    RollingConfig,
    emit_report,
    restrict_transfer_stations,
    result_row,
    rolling_horizon,
    run_method,
)
from .net import build_grid_network
from .prep import preprocess
from .solver import SearchLimits, export_lp, solve_bip
from .trips import GenConfig, generate_instance, load_instance, save_instance


def _grid_side(stations: int) -> int:
    side = round(stations**0.5)
    if side * side != stations:
        raise SystemExit(f"--stations must be a perfect square, got {stations}")
    return side


def cmd_gen(args) -> int:
    side = _grid_side(args.stations)
    net = build_grid_network(side, side, args.edge_time)
    cfg = GenConfig(
        n_riders=args.riders,
        n_drivers=args.drivers,
        release_period=args.release,
        budget_factor_rider=args.budget_rider,
        budget_factor_driver=args.budget_driver,
        directional=args.directional,
        capacity=args.capacity,
        max_transfers=args.max_transfers,
        delta_t=args.dt,
    )
    inst = generate_instance(net, cfg, seed=args.seed)
    save_instance(inst, args.output)
    print(f"wrote instance with {args.riders} riders / {args.drivers} drivers to {args.output}")
    return 0


def cmd_prep(args) -> int:
    inst = load_instance(args.instance)
    prep = preprocess(inst)
    stats = prep.stats()
    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant", "kind", "links", "reduction_ratio", "filtered"])
        filtered_ids = {p.id for p in prep.filtered}
        universe = stats["universe_size"] or 1
        for p in inst.participants():
            n = stats["link_counts"][p.id]
            writer.writerow([p.id, p.kind, n, repr(n / universe), p.id in filtered_ids])
    print(
        f"universe {stats['universe_size']} links; mean reduction ratio "
        f"{stats['mean_reduction_ratio']:.4f}; filtered {stats['n_filtered']} of "
        f"{stats['n_riders']} riders; stats in {args.output}"
    )
    return 0


def _limits(args) -> SearchLimits:
    return SearchLimits(
        time_limit=args.time_limit,
        node_limit=getattr(args, "node_limit", None),
    )


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    prep = preprocess(inst)
    opts = ModelOptions(delta_t=inst.grid.delta_t)
    if args.export_lp:
        from .bip import build_model

        prog = build_model(prep.kept, prep.drivers, prep.pairs, prep.linksets, opts)
        with open(args.export_lp, "w") as fh:
            fh.write(export_lp(prog))
        print(f"wrote LP file to {args.export_lp}")
    sol = harness.solve_monolithic(prep, opts, _limits(args))
    report = validate_solution(sol, inst)
    print(f"status {sol.status}; served {len(sol.served)} of {len(prep.kept)} kept riders")
    if not report.ok:
        print(f"VALIDATION FAILED: {report.violations[:5]}")
        return 1
    if args.output:
        save_solution(sol, args.output)
        print(f"solution written to {args.output}")
    return 0


def cmd_match(args) -> int:
    inst = load_instance(args.instance)
    prep = preprocess(inst)
    opts = ModelOptions(delta_t=inst.grid.delta_t)
    limits = _limits(args)
    if args.method == "monolithic":
        sol = harness.solve_monolithic(prep, opts, limits)
        trace_rows = [
            {
                "iteration": 1,
                "num_subproblems": 1,
                "num_active": 1,
                "lb": sol.bound_trace[0][1],
                "ub": sol.bound_trace[0][2],
                "elapsed": sol.solve_seconds,
            }
        ]
    else:
        variant = SIMPLIFIED if args.method == "decomp-simple" else FULL
        sol, state = run_decomposition(
            prep, limits, variant=variant, opts=opts, collect_state=True
        )
        trace_rows = state.trace
    report = validate_solution(sol, inst)
    print(
        f"method {args.method}: status {sol.status}, served {len(sol.served)} "
        f"of {len(prep.kept)} kept riders in {sol.iterations} iteration(s)"
    )
    if not report.ok:
        print(f"VALIDATION FAILED: {report.violations[:5]}")
        return 1
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "num_subproblems", "num_active", "lb", "ub", "elapsed"])
            for row in trace_rows:
                writer.writerow(
                    [
                        row["iteration"],
                        row["num_subproblems"],
                        row["num_active"],
                        row["lb"],
                        row["ub"],
                        f"{row['elapsed']:.3f}",
                    ]
                )
        print(f"trace written to {args.trace}")
    if args.output:
        save_solution(sol, args.output)
        print(f"solution written to {args.output}")
    return 0


def cmd_bench(args) -> int:
    os.makedirs(args.output_dir, exist_ok=True)
    side = _grid_side(args.stations)
    net = build_grid_network(side, side, args.edge_time)
    methods = args.methods.split(",") if args.methods else list(METHODS)
    for m in methods:
        if m not in METHODS:
            raise SystemExit(f"unknown method {m!r}")
    limits = SearchLimits(time_limit=args.time_limit)
    rows = []
    run_id = 0
    for n_riders in args.riders_grid:
        for n_drivers in args.drivers_grid:
            for seed in range(args.seeds):
                cfg = GenConfig(
                    n_riders=n_riders,
                    n_drivers=n_drivers,
                    release_period=args.release,
                    budget_factor_rider=args.budget_rider,
                    budget_factor_driver=args.budget_driver,
                    directional=args.directional,
                    delta_t=args.dt,
                )
                inst = generate_instance(net, cfg, seed=seed)
                label = f"run{run_id:04d}_r{n_riders}_d{n_drivers}_s{seed}"
                run_id += 1
                if args.reopt_period:
                    for m in methods:
                        sol, metrics, _ = rolling_horizon(
                            inst, RollingConfig(args.reopt_period), m, limits
                        )
                        rows.append(result_row(inst, metrics, args.reopt_period, label))
                        save_solution(sol, os.path.join(args.output_dir, f"{label}_{m}.json"))
                elif args.transfer_top_pct is not None:
                    prep = preprocess(inst)
                    out = restrict_transfer_stations(prep, args.transfer_top_pct, limits)
                    for tag in ("unrestricted", "restricted"):
                        sol, metrics = out[tag]
                        rows.append(result_row(inst, metrics, None, f"{label}_{tag}"))
                        save_solution(sol, os.path.join(args.output_dir, f"{label}_{tag}.json"))
                else:
                    prep = preprocess(inst)
                    for m in methods:
                        sol, metrics = run_method(prep, m, limits)
                        rows.append(result_row(inst, metrics, None, label))
                        save_solution(sol, os.path.join(args.output_dir, f"{label}_{m}.json"))
                print(f"{label}: done")
    out_csv = os.path.join(args.output_dir, "results.csv")
    emit_report(rows, "csv", out_csv)
    print(f"aggregate results in {out_csv}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        with open(path) as fh:
            rows.append(json.load(fh))
    summary = [
        {
            "instance": os.path.basename(p),
            "method": "",
            "num_served": len([r for r, rec in row["riders"].items() if rec["served"]]),
            "status": row.get("status"),
        }
        for p, row in zip(args.inputs, rows)
    ]
    emit_report(summary, args.format, args.output)
    print(f"wrote {args.format} report to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hopmatch", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a random instance")
    g.add_argument("--riders", type=int, required=True)
    g.add_argument("--drivers", type=int, required=True)
    g.add_argument("--stations", type=int, default=49)
    g.add_argument("--edge-time", type=float, default=5.0)
    g.add_argument("--release", type=float, default=60.0)
    g.add_argument("--budget-rider", type=float, default=1.1)
    g.add_argument("--budget-driver", type=float, default=1.1)
    g.add_argument("--directional", action="store_true")
    g.add_argument("--capacity", type=int, default=4)
    g.add_argument("--max-transfers", type=int, default=3)
    g.add_argument("--dt", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    p = sub.add_parser("prep", help="pre-process an instance and dump link statistics")
    p.add_argument("instance")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_prep)

    s = sub.add_parser("solve", help="monolithic exact solve")
    s.add_argument("instance")
    s.add_argument("--time-limit", type=float, default=None)
    s.add_argument("--node-limit", type=int, default=None)
    s.add_argument("--export-lp", default=None)
    s.add_argument("-o", "--output", default=None)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("match", help="decomposition or monolithic matching")
    m.add_argument("instance")
    m.add_argument("--method", choices=["decomp", "decomp-simple", "monolithic"], default="decomp")
    m.add_argument("--time-limit", type=float, default=None)
    m.add_argument("--trace", default=None)
    m.add_argument("-o", "--output", default=None)
    m.set_defaults(func=cmd_match)

    b = sub.add_parser("bench", help="experiment grid over riders/drivers/seeds")
    b.add_argument("--methods", default=None, help="comma-separated subset of methods")
    b.add_argument("--riders-grid", type=int, nargs="+", required=True)
    b.add_argument("--drivers-grid", type=int, nargs="+", required=True)
    b.add_argument("--seeds", type=int, default=1)
    b.add_argument("--stations", type=int, default=49)
    b.add_argument("--edge-time", type=float, default=5.0)
    b.add_argument("--release", type=float, default=60.0)
    b.add_argument("--budget-rider", type=float, default=1.1)
    b.add_argument("--budget-driver", type=float, default=1.1)
    b.add_argument("--directional", action="store_true")
    b.add_argument("--dt", type=float, default=1.0)
    b.add_argument("--reopt-period", type=float, default=None)
    b.add_argument("--transfer-top-pct", type=float, default=None)
    b.add_argument("--time-limit", type=float, default=None)
    b.add_argument("-o", "--output-dir", required=True)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="aggregate solution JSON files into a report")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--format", choices=["csv", "json"], default="csv")
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
