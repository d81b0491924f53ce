"""Iterative decomposition of the matching problem.

Each iteration solves independent rider sub-problems, then merges riders whose
driver assignments collide.  Solutions of previously seen rider sets are
reused, loops between iterations are broken by intermediate sub-problems, and
per-iteration bounds give an anytime heuristic under a time limit.
"""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field, replace

from .bip import MatchSolution, ModelOptions, build_model, extract_solution
from .net import Link
from .prep import PrepResult
from .solver import SearchLimits, solve_bip, solve_set_packing
from .trips import Participant

MIN_SOLVE_SECONDS = 0.05

FULL = "full"
SIMPLIFIED = "simplified"


@dataclass(frozen=True)
class SubSolution:
    riders: frozenset[str]
    served: frozenset[str]
    itineraries: dict[str, tuple[tuple[Link, str], ...]] = field(compare=False)
    routes: dict[str, tuple[Link, ...]] = field(compare=False)
    matched: frozenset[str] = frozenset()
    loads: dict[tuple[str, Link], int] = field(default_factory=dict, compare=False)
    status: str = "optimal"
    bound: float = 0.0  # upper bound on this rider set's served count


@dataclass
class SubProblem:
    index: int
    riders: frozenset[str]
    applicable: bool = True
    active: bool = True
    solution: SubSolution | None = None


@dataclass
class DecompositionState:
    iteration: int = 1
    subproblems: list[SubProblem] = field(default_factory=list)
    partitions: list[tuple[frozenset[str], ...]] = field(default_factory=list)
    cache: dict[frozenset[str], SubSolution] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    bound_trace: list[tuple[int, float, float]] = field(default_factory=list)
    lb_payloads: list[dict] = field(default_factory=list)
    solves: int = 0

    def partition(self) -> tuple[frozenset[str], ...]:
        return tuple(sp.riders for sp in self.subproblems)


def init_subproblems(kept_rider_ids: list[str]) -> DecompositionState:
    """One active singleton sub-problem per rider."""
    state = DecompositionState()
    state.subproblems = [
        SubProblem(index=i, riders=frozenset([rid]))
        for i, rid in enumerate(sorted(kept_rider_ids))
    ]
    return state


@dataclass(frozen=True)
class _Ctx:
    prep: PrepResult
    opts: ModelOptions
    riders: dict[str, Participant]
    drivers: dict[str, Participant]

    def capacity(self, did: str, link: Link) -> int:
        d = self.drivers[did]
        if d.fixed_route is not None:
            return dict(zip(d.fixed_route, d.route_capacity)).get(link, 0)
        return d.capacity


def _make_ctx(prep: PrepResult, opts: ModelOptions | None) -> _Ctx:
    opts = opts or ModelOptions(delta_t=prep.instance.grid.delta_t)
    return _Ctx(
        prep=prep,
        opts=opts,
        riders={r.id: r for r in prep.kept},
        drivers={d.id: d for d in prep.drivers},
    )


def _solve_subproblem(rider_ids: frozenset[str], ctx: _Ctx, time_budget: float | None) -> SubSolution:
    pairs = ctx.prep.pairs
    dids = sorted({d for rid in rider_ids for d in pairs.rider_drivers.get(rid, ())})
    riders = [ctx.riders[rid] for rid in sorted(rider_ids)]
    drivers = [ctx.drivers[did] for did in dids]
    prog = build_model(riders, drivers, pairs, ctx.prep.linksets, ctx.opts)
    limits = None
    if time_budget is not None:
        limits = SearchLimits(time_limit=max(MIN_SOLVE_SECONDS, time_budget))
    x, status, _ = solve_bip(prog, limits)
    if x is None:
        return SubSolution(
            riders=rider_ids,
            served=frozenset(),
            itineraries={},
            routes={},
            status="limit",
            bound=float(len(rider_ids)),
        )
    sol = extract_solution(prog, x)
    matched = frozenset(
        did for itin in sol.itineraries.values() for _, did in itin if did in ctx.drivers
    )
    loads: dict[tuple[str, Link], int] = defaultdict(int)
    for itin in sol.itineraries.values():
        for l, did in itin:
            if did in ctx.drivers:
                loads[(did, l)] += 1
    served_bound = float(len(sol.served)) if status == "optimal" else float(len(rider_ids))
    return SubSolution(
        riders=rider_ids,
        served=sol.served,
        itineraries=sol.itineraries,
        routes=sol.routes,
        matched=matched,
        loads=dict(loads),
        status="optimal" if status == "optimal" else "limit",
        bound=served_bound,
    )


# --- conflicts -----------------------------------------------------------------


def _driver_records(state: DecompositionState):
    """did -> [(sub index, route, per-link load)] over sub-problems where the
    driver carries at least one rider."""
    rec: dict[str, list[tuple[int, tuple[Link, ...], dict[Link, int]]]] = defaultdict(list)
    for sp in state.subproblems:
        sol = sp.solution
        if sol is None:
            continue
        for did in sorted(sol.matched):
            loads = {l: n for (d2, l), n in sol.loads.items() if d2 == did}
            rec[did].append((sp.index, sol.routes.get(did, ()), loads))
    return rec


def _driver_conflicted(records, cap_of) -> bool:
    if len(records) < 2:
        return False
    routes = {tuple(r) for _, r, _ in records}
    if len(routes) > 1:
        return True
    combined: dict[Link, int] = defaultdict(int)
    for _, _, loads in records:
        for l, n in loads.items():
            combined[l] += n
    return any(n > cap_of(l) for l, n in combined.items())


def detect_conflicts(state: DecompositionState, ctx: _Ctx) -> list[tuple[str, frozenset[str]]]:
    """Conflict groups: for each driver matched in several sub-problems with
    incompatible assignments (diverging routes, or identical routes whose
    combined loads break capacity), the riders that use that driver.

    Empty output is the termination criterion."""
    groups: list[tuple[str, frozenset[str]]] = []
    for did, records in sorted(_driver_records(state).items()):
        if not _driver_conflicted(records, lambda l, d=did: ctx.capacity(d, l)):
            continue
        riders = set()
        for sp in state.subproblems:
            sol = sp.solution
            if sol is None or did not in sol.matched:
                continue
            for rid, itin in sol.itineraries.items():
                if any(d2 == did for _, d2 in itin):
                    riders.add(rid)
        groups.append((did, frozenset(riders)))
    return groups


# --- next-iteration partitions ---------------------------------------------------


def next_iteration(
    state: DecompositionState, groups: list[tuple[str, frozenset[str]]]
) -> list[tuple[frozenset[str], bool]]:
    """Step 4: conflict groups become new applicable sub-problems; leftover
    riders are imported per old sub-problem (whole imports not applicable,
    partial remainders applicable).  Returns (riders, applicable) pairs."""
    remaining = {rid for sp in state.subproblems for rid in sp.riders}
    new: list[tuple[frozenset[str], bool]] = []
    for _, group in groups:
        take = frozenset(group & remaining)
        if take:
            new.append((take, True))
            remaining -= take
    for sp in state.subproblems:
        rest = frozenset(sp.riders & remaining)
        if not rest:
            continue
        new.append((rest, rest != sp.riders))
        remaining -= rest
    assert not remaining, "partition must cover every rider"
    return new


def detect_loop_and_merge(
    state: DecompositionState, new_partition: list[tuple[frozenset[str], bool]]
) -> list[tuple[frozenset[str], bool]]:
    """Step 5: if the new partition repeats an earlier iteration's, merge two
    previous-iteration sub-problems that overlap one of its sub-problems into
    a single intermediate sub-problem (applied once per iteration)."""
    canon = frozenset(rs for rs, _ in new_partition)
    history = state.partitions[:-1]  # earlier than the previous iteration
    if not any(frozenset(past) == canon for past in history):
        return new_partition
    prev = state.partitions[-1]
    for rs, _ in new_partition:
        sharers = [p for p in prev if p & rs]
        if len(sharers) < 2:
            continue
        merged = sharers[0] | sharers[1]
        adjusted: list[tuple[frozenset[str], bool]] = []
        for s, app in new_partition:
            rest = frozenset(s - merged)
            if rest:
                adjusted.append((rest, app if rest == s else True))
        adjusted.append((merged, True))
        return adjusted
    return new_partition


def _compatible_union(sols: list[SubSolution], ctx: _Ctx) -> SubSolution | None:
    """Union of sub-solutions when no shared driver diverges and no capacity
    breaks; None when they clash."""
    by_driver: dict[str, list[tuple[int, tuple[Link, ...], dict[Link, int]]]] = defaultdict(list)
    for i, sol in enumerate(sols):
        for did in sol.matched:
            loads = {l: n for (d2, l), n in sol.loads.items() if d2 == did}
            by_driver[did].append((i, sol.routes.get(did, ()), loads))
    for did, records in by_driver.items():
        if _driver_conflicted(records, lambda l, d=did: ctx.capacity(d, l)):
            return None
    riders = frozenset().union(*(s.riders for s in sols))
    served = frozenset().union(*(s.served for s in sols))
    itineraries: dict[str, tuple[tuple[Link, str], ...]] = {}
    routes: dict[str, tuple[Link, ...]] = {}
    loads: dict[tuple[str, Link], int] = defaultdict(int)
    for sol in sols:
        itineraries.update(sol.itineraries)
        for k, n in sol.loads.items():
            loads[k] += n
        for did, route in sol.routes.items():
            # matched routes win over incidental routings of unmatched drivers
            if did not in routes or did in sol.matched:
                routes[did] = route
    matched = frozenset().union(*(s.matched for s in sols))
    status = "optimal" if all(s.status == "optimal" for s in sols) else "limit"
    return SubSolution(
        riders=riders,
        served=served,
        itineraries=itineraries,
        routes=routes,
        matched=matched,
        loads=dict(loads),
        status=status,
        bound=sum(s.bound for s in sols),
    )


def identify_active(
    state: DecompositionState,
    partition: list[tuple[frozenset[str], bool]],
    ctx: _Ctx,
) -> list[SubProblem]:
    """Step 6: a sub-problem is inactive when its rider set was solved before
    (solution copied) or is a union of earlier sub-problems whose solutions do
    not conflict (solutions united)."""
    subs: list[SubProblem] = []
    for i, (riders, applicable) in enumerate(partition):
        sp = SubProblem(index=i, riders=riders, applicable=applicable)
        cached = state.cache.get(riders)
        if cached is not None:
            sp.active = False
            sp.solution = cached
        elif applicable:
            union_sol = None
            for past in reversed(state.partitions):
                parts = [p for p in past if p <= riders]
                if parts and frozenset().union(*parts) == riders and len(parts) >= 2:
                    sols = [state.cache[p] for p in parts]
                    union_sol = _compatible_union(sols, ctx)
                    if union_sol is not None:
                        break
            if union_sol is not None:
                sp.active = False
                sp.solution = union_sol
                state.cache[riders] = union_sol
            else:
                sp.active = True
        else:
            # whole import whose solution must already be known
            raise AssertionError(f"non-applicable sub-problem {riders} missing a cached solution")
        subs.append(sp)
    return subs


# --- bounds ---------------------------------------------------------------------


def compute_bounds(state: DecompositionState, ctx: _Ctx) -> tuple[float, float, dict]:
    """Per-iteration bounds: UB as the sum of served counts over sub-problems,
    LB by packing riders whose current assignments are mutually compatible,
    with a joint-capacity repair so the LB solution always validates."""
    ub = sum(sp.solution.bound for sp in state.subproblems)

    rider_sub: dict[str, SubSolution] = {}
    for sp in state.subproblems:
        for rid in sp.solution.served:
            rider_sub[rid] = sp.solution
    riders = sorted(rider_sub)

    def used(rid: str) -> dict[str, set[Link]]:
        out: dict[str, set[Link]] = defaultdict(set)
        for l, did in rider_sub[rid].itineraries[rid]:
            if did in ctx.drivers:
                out[did].add(l)
        return out

    usage = {rid: used(rid) for rid in riders}

    def compatible(a: str, b: str) -> bool:
        sa, sb = rider_sub[a], rider_sub[b]
        if sa is sb:
            return True
        for did in usage[a].keys() & usage[b].keys():
            if sa.routes.get(did) != sb.routes.get(did):
                return False
            for l in usage[a][did] & usage[b][did]:
                if 2 > ctx.capacity(did, l):
                    return False
        return True

    selected = solve_set_packing(riders, {r: rider_sub[r].itineraries[r] for r in riders}, compatible)

    # joint capacity repair: pairwise checks cannot see three-way overloads
    def overloads(sel: list[str]) -> list[tuple[str, Link, list[str]]]:
        per_link: dict[tuple[str, Link], list[str]] = defaultdict(list)
        for rid in sel:
            for did, links in usage[rid].items():
                for l in links:
                    per_link[(did, l)].append(rid)
        out = []
        for (did, l), rids in sorted(per_link.items()):
            if len(rids) > ctx.capacity(did, l):
                out.append((did, l, sorted(rids)))
        return out

    selected = sorted(selected)
    while True:
        over = overloads(selected)
        if not over:
            break
        _, _, rids = over[0]
        selected.remove(rids[-1])

    payload = {
        "served": frozenset(selected),
        "itineraries": {rid: rider_sub[rid].itineraries[rid] for rid in selected},
        "routes": {
            did: rider_sub[rid].routes[did]
            for rid in selected
            for did in usage[rid]
        },
    }
    return float(len(selected)), float(ub), payload


# --- orchestration ----------------------------------------------------------------


def _merged_simplified(state: DecompositionState, ctx: _Ctx) -> list[tuple[frozenset[str], bool]]:
    """Simplified variant: union-find over sub-problems that share a
    conflicting driver; merged components are applicable."""
    parent = list(range(len(state.subproblems)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for did, records in sorted(_driver_records(state).items()):
        if _driver_conflicted(records, lambda l, d=did: ctx.capacity(d, l)):
            idxs = [i for i, _, _ in records]
            for j in idxs[1:]:
                union(idxs[0], j)

    comps: dict[int, list[SubProblem]] = defaultdict(list)
    for i, sp in enumerate(state.subproblems):
        comps[find(i)].append(sp)
    partition: list[tuple[frozenset[str], bool]] = []
    for root in sorted(comps):
        members = comps[root]
        riders = frozenset().union(*(sp.riders for sp in members))
        partition.append((riders, len(members) > 1))
    return partition


def _final_solution(
    state: DecompositionState, ctx: _Ctx, t0: float
) -> MatchSolution:
    served = set()
    itineraries: dict[str, tuple[tuple[Link, str], ...]] = {}
    transfers: dict[str, int] = {}
    routes: dict[str, tuple[Link, ...]] = {}
    for sp in state.subproblems:
        sol = sp.solution
        served |= sol.served
        itineraries.update(sol.itineraries)
        for did in sol.matched:
            routes[did] = sol.routes[did]
    for sp in state.subproblems:
        for did, route in sp.solution.routes.items():
            routes.setdefault(did, route)
    for did, d in ctx.drivers.items():
        if did not in routes:
            route = default_route(d, ctx.prep)
            if route:
                routes[did] = route
    for rid in served:
        dids = {did for _, did in itineraries[rid] if did in ctx.drivers}
        transfers[rid] = len(dids) - 1
    return MatchSolution(
        served=frozenset(served),
        itineraries=itineraries,
        routes=routes,
        transfers=transfers,
        objective=float(len(served)),
        status="optimal",
        bound_trace=tuple(state.bound_trace),
        iterations=state.iteration,
        solve_seconds=time.perf_counter() - t0,
    )


def _heuristic_solution(
    state: DecompositionState, ctx: _Ctx, best_payload: dict, t0: float
) -> MatchSolution:
    served = best_payload["served"]
    transfers = {
        rid: len({did for _, did in itin if did in ctx.drivers}) - 1
        for rid, itin in best_payload["itineraries"].items()
    }
    return MatchSolution(
        served=served,
        itineraries=dict(best_payload["itineraries"]),
        routes=dict(best_payload["routes"]),
        transfers=transfers,
        objective=float(len(served)),
        status="heuristic",
        bound_trace=tuple(state.bound_trace),
        iterations=state.iteration,
        solve_seconds=time.perf_counter() - t0,
    )


def default_route(driver: Participant, prep: PrepResult) -> tuple[Link, ...] | None:
    """Any feasible route for a driver that carries nobody: earliest-arriving
    chain through the driver's own link set."""
    if driver.fixed_route is not None:
        return driver.fixed_route
    links = prep.linksets.get(driver.id)
    if not links or not links.links:
        return None
    by_tail: dict[tuple[int, int], list[Link]] = defaultdict(list)
    for l in sorted(links.links):
        by_tail[(l.t_i, l.s_i)].append(l)
    starts = sorted(t for (t, s) in by_tail if s == driver.origin)
    for t0 in starts:
        chain: list[Link] = []
        node = (t0, driver.origin)
        seen = set()
        while node[1] != driver.destination or not chain:
            if node in seen or node not in by_tail:
                chain = []
                break
            seen.add(node)
            nxt = by_tail[node][0]
            chain.append(nxt)
            node = (nxt.t_j, nxt.s_j)
        if chain:
            return tuple(chain)
    return None


def run_decomposition(
    prep: PrepResult,
    limits: SearchLimits | None = None,
    variant: str = FULL,
    opts: ModelOptions | None = None,
    collect_state: bool = False,
):
    """Run the decomposition to proven optimality, or to the best packing
    lower bound when the time limit is hit (status `heuristic`)."""
    if variant not in (FULL, SIMPLIFIED):
        raise ValueError(f"unknown variant {variant!r}")
    t0 = time.perf_counter()
    deadline = None
    if limits is not None and limits.time_limit is not None:
        deadline = t0 + limits.time_limit
    ctx = _make_ctx(prep, opts)

    kept_ids = sorted(r.id for r in prep.kept)
    state = init_subproblems(kept_ids)
    if not kept_ids:
        sol = MatchSolution(
            served=frozenset(),
            itineraries={},
            routes={
                d.id: route
                for d in prep.drivers
                if (route := default_route(d, prep)) is not None
            },
            transfers={},
            objective=0.0,
            status="optimal",
            bound_trace=((1, 0.0, 0.0),),
            iterations=1,
            solve_seconds=time.perf_counter() - t0,
        )
        return (sol, state) if collect_state else sol

    best_lb = -1.0
    best_payload: dict = {}
    running_ub = float("inf")

    while True:
        actives = [sp for sp in state.subproblems if sp.active and sp.solution is None]
        for pos, sp in enumerate(actives):
            budget = None
            if deadline is not None:
                remaining = deadline - time.perf_counter()
                budget = max(MIN_SOLVE_SECONDS, remaining / max(1, len(actives) - pos))
            sp.solution = _solve_subproblem(sp.riders, ctx, budget)
            state.solves += 1
        for sp in state.subproblems:
            state.cache.setdefault(sp.riders, sp.solution)
        state.partitions.append(state.partition())

        lb, ub_raw, payload = compute_bounds(state, ctx)
        running_ub = min(running_ub, ub_raw)
        if lb > best_lb:
            best_lb, best_payload = lb, payload
        state.bound_trace.append((state.iteration, lb, running_ub))
        state.lb_payloads.append(payload)
        state.trace.append(
            {
                "iteration": state.iteration,
                "num_subproblems": len(state.subproblems),
                "num_active": len(actives),
                "lb": lb,
                "ub": running_ub,
                "elapsed": time.perf_counter() - t0,
            }
        )

        groups = detect_conflicts(state, ctx)
        all_optimal = all(sp.solution.status == "optimal" for sp in state.subproblems)
        if not groups and all_optimal:
            sol = _final_solution(state, ctx, t0)
            return (sol, state) if collect_state else sol
        out_of_time = deadline is not None and time.perf_counter() >= deadline
        if out_of_time or (not groups and not all_optimal):
            sol = _heuristic_solution(state, ctx, best_payload, t0)
            return (sol, state) if collect_state else sol

        if variant == SIMPLIFIED:
            partition = _merged_simplified(state, ctx)
        else:
            partition = next_iteration(state, groups)
            partition = detect_loop_and_merge(state, partition)
        state.iteration += 1
        state.subproblems = identify_active(state, partition, ctx)
