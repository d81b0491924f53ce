"""Matching methods, rolling-horizon simulation, metrics, and report output."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Sequence

from .bip import MatchSolution, ModelOptions, build_model, extract_solution
from .decomp import FULL, default_route, run_decomposition
from .net import Link, Network, static_travel_time
from .prep import LinkSet, PairSet, PrepResult, preprocess, prune_to_paths
from .solver import SearchLimits, solve_bip
from .trips import DUMMY_DRIVER_ID, Instance, Participant, commit_driver

OD_BASED = "od-based"
SH_FIXED = "single-hop-fixed"
MH_FIXED = "multi-hop-fixed"
SH_FLEX = "single-hop-flex"
MH_FLEX = "multi-hop-flex"
METHODS = (OD_BASED, SH_FIXED, MH_FIXED, SH_FLEX, MH_FLEX)


@dataclass(frozen=True)
class RollingConfig:
    """Re-optimization every `reopt_period` minutes; demand for period i
    arrives within [(i-1)k, ik).  Absent period means a static solve."""

    reopt_period: float | None = None

    def __post_init__(self):
        if self.reopt_period is not None and self.reopt_period <= 0:
            raise ValueError("reopt_period must be > 0")


@dataclass
class Metrics:
    method: str
    num_served: int
    pct_served: float
    kept_riders: int
    filtered_riders: int
    transfers_min: float | None = None
    transfers_avg: float | None = None
    transfers_max: float | None = None
    wait_min: float | None = None
    wait_avg: float | None = None
    wait_max: float | None = None
    num_drivers_involved: int = 0
    extra_time_min: float | None = None
    extra_time_avg: float | None = None
    extra_time_max: float | None = None
    occupancy_min: float | None = None
    occupancy_avg: float | None = None
    occupancy_max: float | None = None
    solve_seconds: float = 0.0
    iterations: int = 1
    status: str = "optimal"
    lb: float | None = None
    ub: float | None = None

    def to_row(self) -> dict:
        return asdict(self)


def _min_avg_max(values: Sequence[float]) -> tuple[float | None, float | None, float | None]:
    if not values:
        return None, None, None
    return min(values), sum(values) / len(values), max(values)


def rider_waits_minutes(itin, delta_t: float) -> float:
    """Waiting-link minutes strictly between two carried segments."""
    real = [l for l, did in itin if did != DUMMY_DRIVER_ID]
    if not real:
        return 0.0
    lo = min(l.t_j for l in real)
    hi = max(l.t_i for l in real)
    return sum(
        l.duration * delta_t
        for l, did in itin
        if did == DUMMY_DRIVER_ID and l.t_i >= lo and l.t_j <= hi
    )


def compute_metrics(
    sol: MatchSolution,
    instance: Instance,
    kept_count: int,
    filtered_count: int,
    method: str = MH_FLEX,
) -> Metrics:
    dt = instance.grid.delta_t
    served = sorted(sol.served)
    transfers = [float(sol.transfers[r]) for r in served]
    waits = [
        rider_waits_minutes(sol.itineraries[r], dt)
        for r in served
        if sol.transfers.get(r, 0) >= 1
    ]

    matched: set[str] = set()
    loads: dict[tuple[str, Link], int] = {}
    for rid in served:
        for l, did in sol.itineraries[rid]:
            if did != DUMMY_DRIVER_ID:
                matched.add(did)
                loads[(did, l)] = loads.get((did, l), 0) + 1

    extras = []
    for did in sorted(matched):
        d = instance.driver(did)
        route = sol.routes.get(did)
        if not route:
            continue
        span = (max(l.t_j for l in route) - min(l.t_i for l in route)) * dt
        extras.append(max(0.0, span - static_travel_time(instance.network, d.origin, d.destination)))

    occ = [float(n) for n in loads.values()]

    tr = _min_avg_max(transfers)
    wt = _min_avg_max(waits)
    ex = _min_avg_max(extras)
    oc = _min_avg_max(occ)
    last = sol.bound_trace[-1] if sol.bound_trace else None
    return Metrics(
        method=method,
        num_served=len(served),
        pct_served=100.0 * len(served) / kept_count if kept_count else 0.0,
        kept_riders=kept_count,
        filtered_riders=filtered_count,
        transfers_min=tr[0],
        transfers_avg=tr[1],
        transfers_max=tr[2],
        wait_min=wt[0],
        wait_avg=wt[1],
        wait_max=wt[2],
        num_drivers_involved=len(matched),
        extra_time_min=ex[0],
        extra_time_avg=ex[1],
        extra_time_max=ex[2],
        occupancy_min=oc[0],
        occupancy_avg=oc[1],
        occupancy_max=oc[2],
        solve_seconds=sol.solve_seconds,
        iterations=sol.iterations,
        status=sol.status,
        lb=last[1] if last else float(len(served)),
        ub=last[2] if last else float(len(served)),
    )


# --- fixed-route restrictions ---------------------------------------------------


def shortest_path_stations(net: Network, origin: int, dest: int) -> tuple[int, ...]:
    """Deterministic static shortest path as a station sequence (ties broken
    by smallest station id at each hop)."""
    to_dest = net.shortest_times_from(dest)
    path = [origin]
    s = origin
    guard = 0
    while s != dest:
        nxt = min(
            (nb for nb, w in net.adjacency[s].items() if abs(w + to_dest[nb] - to_dest[s]) < 1e-9),
            default=None,
        )
        if nxt is None:
            raise RuntimeError(f"no shortest-path step from {s} toward {dest}")
        path.append(nxt)
        s = nxt
        guard += 1
        if guard > len(net.stations):
            raise RuntimeError("shortest path reconstruction cycled")
    return tuple(path)


def fixed_route_linkset(prep: PrepResult, d: Participant) -> LinkSet:
    """Driver link set restricted to their static shortest path: forward moves
    along consecutive path stations plus waits at path stations, pruned back to
    complete feasible routes."""
    if d.fixed_route is not None:
        return prep.linksets[d.id]
    stations = shortest_path_stations(prep.instance.network, d.origin, d.destination)
    steps = set(zip(stations, stations[1:]))
    on_path = set(stations)
    allowed = frozenset(
        l
        for l in prep.linksets[d.id].links
        if (l.s_i, l.s_j) in steps or (l.is_waiting and l.s_i in on_path)
    )
    kept = prune_to_paths(allowed, d.origin, d.destination, d.earliest_departure, d.latest_arrival)
    return LinkSet(pid=d.id, links=kept)


def restricted_pairs(
    prep: PrepResult,
    driver_linksets: dict[str, LinkSet],
    od_equal: bool = False,
) -> tuple[PairSet, list[Participant]]:
    """Pair set over overridden driver link sets; `od_equal` additionally
    requires matching OD stations (the od-based method)."""
    drivers = [d for d in prep.drivers if driver_linksets[d.id].links]
    pairs: dict[tuple[str, str], frozenset[Link]] = {}
    rider_drivers: dict[str, tuple[str, ...]] = {}
    for r in prep.kept:
        lr = prep.linksets[r.id].links
        dids = []
        for d in drivers:
            if od_equal and (d.origin != r.origin or d.destination != r.destination):
                continue
            inter = lr & driver_linksets[d.id].links
            if inter:
                pairs[(r.id, d.id)] = inter
                dids.append(d.id)
        pairs[(r.id, DUMMY_DRIVER_ID)] = frozenset(l for l in lr if l.is_waiting)
        rider_drivers[r.id] = tuple(sorted(dids))
    return (
        PairSet(pairs=pairs, rider_drivers=rider_drivers, dummy_id=DUMMY_DRIVER_ID),
        drivers,
    )


# --- method runners ---------------------------------------------------------------


def solve_monolithic(
    prep: PrepResult,
    opts: ModelOptions | None = None,
    limits: SearchLimits | None = None,
    riders: Sequence[Participant] | None = None,
    drivers: Sequence[Participant] | None = None,
    pairs: PairSet | None = None,
    linksets: dict[str, LinkSet] | None = None,
) -> MatchSolution:
    """One whole-problem solve over the pre-processed (or overridden) sets."""
    t0 = time.perf_counter()
    opts = opts or ModelOptions(delta_t=prep.instance.grid.delta_t)
    riders = list(prep.kept) if riders is None else list(riders)
    drivers = list(prep.drivers) if drivers is None else list(drivers)
    pairs = prep.pairs if pairs is None else pairs
    linksets = prep.linksets if linksets is None else linksets

    prog = build_model(
        riders,
        drivers,
        pairs,
        linksets,
        opts,
        station_universe=frozenset(prep.instance.network.stations),
    )
    x, status, bound = solve_bip(prog, limits)
    if x is None:
        sol = MatchSolution(
            served=frozenset(),
            itineraries={},
            routes={},
            transfers={},
            objective=0.0,
            status="infeasible" if status == "infeasible" else "limit",
        )
    else:
        sol = extract_solution(prog, x)
        sol.status = "optimal" if status == "optimal" else "limit"
    for d in prep.drivers:
        if d.id not in sol.routes:
            route = default_route(d, prep)
            if route:
                sol.routes[d.id] = route
    sol.solve_seconds = time.perf_counter() - t0
    ub = float(len(sol.served)) if sol.status == "optimal" else float(math.ceil(max(bound, 0.0)))
    sol.bound_trace = ((1, float(len(sol.served)), ub),)
    return sol


def run_method(
    prep: PrepResult,
    method: str,
    limits: SearchLimits | None = None,
    opts: ModelOptions | None = None,
    engine: str = "decomp",
) -> tuple[MatchSolution, Metrics]:
    """Solve one instance with one of the five matching methods."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    base = opts or ModelOptions(delta_t=prep.instance.grid.delta_t)

    if method in (OD_BASED, SH_FIXED, MH_FIXED):
        fixed_sets = dict(prep.linksets)
        for d in prep.drivers:
            fixed_sets[d.id] = fixed_route_linkset(prep, d)
        pairset, drivers = restricted_pairs(prep, fixed_sets, od_equal=method == OD_BASED)
        mopts = ModelOptions(
            objective=base.objective,
            transfer_stations=base.transfer_stations,
            service_time=base.service_time,
            w_r_policy=base.w_r_policy,
            single_hop=method != MH_FIXED,
            delta_t=base.delta_t,
        )
        sol = solve_monolithic(
            prep, mopts, limits, riders=prep.kept, drivers=drivers, pairs=pairset, linksets=fixed_sets
        )
    elif method == SH_FLEX:
        mopts = ModelOptions(
            objective=base.objective,
            transfer_stations=base.transfer_stations,
            service_time=base.service_time,
            w_r_policy=base.w_r_policy,
            single_hop=True,
            delta_t=base.delta_t,
        )
        sol = solve_monolithic(prep, mopts, limits)
    else:  # MH_FLEX
        if engine == "monolithic":
            sol = solve_monolithic(prep, base, limits)
        else:
            variant = FULL if engine in ("decomp", "full") else engine
            sol = run_decomposition(prep, limits, variant=variant, opts=base)

    metrics = compute_metrics(
        sol, prep.instance, len(prep.kept), len(prep.filtered), method=method
    )
    return sol, metrics


# --- rolling horizon ----------------------------------------------------------------


def rolling_horizon(
    instance: Instance,
    rcfg: RollingConfig,
    method: str = MH_FLEX,
    limits: SearchLimits | None = None,
    opts: ModelOptions | None = None,
    engine: str = "decomp",
) -> tuple[MatchSolution, Metrics, list[Metrics]]:
    """Periodic re-optimization: each period matches the newly arrived demand
    plus previously committed drivers with leftover seats; matched itineraries
    are fixed when announced.  Returns the aggregate solution, its metrics,
    and per-period metrics."""
    t0 = time.perf_counter()
    if rcfg.reopt_period is None:
        prep = preprocess(instance)
        sol, metrics = run_method(prep, method, limits, opts, engine)
        return sol, metrics, [metrics]

    k = rcfg.reopt_period
    dt = instance.grid.delta_t
    max_ed = max([0.0] + [p.earliest_departure * dt for p in instance.participants()])
    n_periods = int(math.floor(max_ed / k)) + 1

    committed: dict[str, Participant] = {}
    committed_loads: dict[str, dict[Link, int]] = {}
    agg_itineraries: dict[str, tuple[tuple[Link, str], ...]] = {}
    agg_routes: dict[str, tuple[Link, ...]] = {}
    agg_served: set[str] = set()
    per_period: list[Metrics] = []
    total_kept = 0
    total_filtered = 0
    iterations = 0

    for period in range(n_periods):
        tau = period * k
        tau_idx = int(math.ceil(tau / dt - 1e-9))

        def in_period(p: Participant) -> bool:
            ed_min = p.earliest_departure * dt
            return tau <= ed_min < tau + k

        riders = tuple(p for p in instance.riders if in_period(p))
        fresh_drivers = tuple(p for p in instance.drivers if in_period(p))
        carried = tuple(
            committed[did]
            for did in sorted(committed)
            if any(
                l.t_i >= tau_idx and cap > 0
                for l, cap in zip(committed[did].fixed_route, committed[did].route_capacity)
            )
        )
        if not riders and not fresh_drivers:
            continue
        sub_inst = Instance(
            network=instance.network,
            grid=instance.grid,
            ttm=instance.ttm,
            riders=riders,
            drivers=fresh_drivers + carried,
            dummy=instance.dummy,
            seed=instance.seed,
            config=instance.config,
        )
        prep = preprocess(sub_inst)
        total_kept += len(prep.kept)
        total_filtered += len(prep.filtered)
        sol, metrics = run_method(prep, method, limits, opts, engine)
        per_period.append(metrics)
        iterations += sol.iterations

        agg_served |= sol.served
        for rid, itin in sol.itineraries.items():
            if rid in sol.served:
                agg_itineraries[rid] = itin

        # commit matched drivers with their residual seat capacity
        loads: dict[str, dict[Link, int]] = {}
        for rid in sol.served:
            for l, did in sol.itineraries[rid]:
                if did != DUMMY_DRIVER_ID:
                    loads.setdefault(did, {})[l] = loads.get(did, {}).get(l, 0) + 1
        for did in sorted(loads):
            base_driver = instance.driver(did)
            route = sol.routes[did]
            prev = committed_loads.get(did, {})
            merged = dict(prev)
            for l, n in loads[did].items():
                merged[l] = merged.get(l, 0) + n
            committed_loads[did] = merged
            residual = tuple(base_driver.capacity - merged.get(l, 0) for l in route)
            committed[did] = commit_driver(base_driver, route, residual)
            agg_routes[did] = route

    transfers = {
        rid: len({did for _, did in itin if did != DUMMY_DRIVER_ID}) - 1
        for rid, itin in agg_itineraries.items()
    }
    aggregate = MatchSolution(
        served=frozenset(agg_served),
        itineraries=agg_itineraries,
        routes=agg_routes,
        transfers=transfers,
        objective=float(len(agg_served)),
        status="optimal",
        iterations=max(1, iterations),
        solve_seconds=time.perf_counter() - t0,
    )
    agg_metrics = compute_metrics(
        aggregate, instance, total_kept, total_filtered, method=method
    )
    return aggregate, agg_metrics, per_period


# --- transfer-station restriction experiment -------------------------------------


def transfer_station_counts(sol: MatchSolution) -> dict[int, int]:
    """How often each station hosts a change of carrying driver."""
    counts: dict[int, int] = {}
    for rid, itin in sol.itineraries.items():
        real = [(l, did) for l, did in itin if did != DUMMY_DRIVER_ID]
        for (a, da), (b, db) in zip(real, real[1:]):
            if da != db:
                counts[a.s_j] = counts.get(a.s_j, 0) + 1
    return counts


def restrict_transfer_stations(
    prep: PrepResult,
    top_pct: float = 0.8,
    limits: SearchLimits | None = None,
    opts: ModelOptions | None = None,
    engine: str = "decomp",
) -> dict:
    """Solve unrestricted, keep the busiest `top_pct` of transfer stations,
    re-solve with transfers limited to them."""
    base_sol, base_metrics = run_method(prep, MH_FLEX, limits, opts, engine)
    counts = transfer_station_counts(base_sol)
    ranked = sorted(counts, key=lambda s: (-counts[s], s))
    keep = ranked[: max(1, math.ceil(top_pct * len(ranked)))] if ranked else []
    s_t = frozenset(keep)
    base = opts or ModelOptions(delta_t=prep.instance.grid.delta_t)
    restricted_opts = ModelOptions(
        objective=base.objective,
        transfer_stations=s_t,
        service_time=base.service_time,
        w_r_policy=base.w_r_policy,
        single_hop=base.single_hop,
        delta_t=base.delta_t,
    )
    r_sol, r_metrics = run_method(prep, MH_FLEX, limits, restricted_opts, engine)
    return {
        "unrestricted": (base_sol, base_metrics),
        "restricted": (r_sol, r_metrics),
        "transfer_stations": s_t,
        "station_counts": counts,
    }


# --- reports -----------------------------------------------------------------------


REPORT_COLUMNS = [
    "instance",
    "seed",
    "n_riders",
    "n_drivers",
    "stations",
    "delta_t",
    "release_period",
    "budget_factor_rider",
    "budget_factor_driver",
    "directional",
    "reopt_period",
    "method",
] + [f.name for f in fields(Metrics) if f.name != "method"]


def result_row(instance: Instance, metrics: Metrics, reopt_period: float | None = None, label: str = "") -> dict:
    cfg = instance.config
    row = {
        "instance": label,
        "seed": instance.seed,
        "n_riders": len(instance.riders),
        "n_drivers": len(instance.drivers),
        "stations": len(instance.network.stations),
        "delta_t": instance.grid.delta_t,
        "release_period": cfg.release_period if cfg else None,
        "budget_factor_rider": cfg.budget_factor_rider if cfg else None,
        "budget_factor_driver": cfg.budget_factor_driver if cfg else None,
        "directional": cfg.directional if cfg else None,
        "reopt_period": reopt_period,
    }
    row.update(metrics.to_row())
    return row


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(rows: list[dict], fmt: str, path: str) -> None:
    """Stable-order report; identical inputs give identical bytes."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for row in rows:
                writer.writerow([_cell(row.get(col)) for col in REPORT_COLUMNS])
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(path: str) -> list[dict]:
    """Inverse of emit_report's CSV branch (round-trip checked in tests)."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for col, text in rec.items():
                if text == "":
                    row[col] = None
                    continue
                for cast in (int, float):
                    try:
                        row[col] = cast(text)
                        break
                    except ValueError:
                        continue
                else:
                    if text in ("True", "False"):
                        row[col] = text == "True"
                    else:
                        row[col] = text
            out.append(row)
    return out
