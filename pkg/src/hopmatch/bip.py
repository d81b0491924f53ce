"""Binary program construction over pre-processed link sets, plus solution
extraction and an itinerary-level validator.

The builder always emits the refined formulation: every index set ranges over
the reduced links only.  Ride-budget rows are kept even though the reduced
windows almost make them redundant: a route whose support is not one
contiguous chain (flow allows excursions anchored at the endpoint stations)
can exceed its budget while staying inside the window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .net import Link
from .prep import LinkSet, PairSet
from .trips import DUMMY_DRIVER_ID, Participant


def default_w_r(rider: Participant) -> float:
    """Transfer-penalty weight: with at most V_r + 1 contributing drivers the
    per-rider penalty stays below 1, so the served count stays primary."""
    return 1.0 / (rider.max_transfers + 2)


def travel_time_w_r(rider: Participant, delta_t: float = 1.0) -> float:
    """Weight for the travel-time objective variant: 1 / (budget + 1)."""
    return 1.0 / (rider.ride_budget * delta_t + 1.0)


OBJ_MAX_SERVED = "max-served"
OBJ_MIN_TRAVEL = "max-served-min-travel"
OBJ_DRIVER_MATCH = "with-driver-matching"


@dataclass(frozen=True)
class ModelOptions:
    objective: str = OBJ_MAX_SERVED
    transfer_stations: frozenset[int] | None = None
    service_time: int = 0
    w_r_policy: Callable[[Participant], float] | None = None
    single_hop: bool = False
    driver_weight: float | None = None
    delta_t: float = 1.0

    def __post_init__(self):
        if self.objective not in (OBJ_MAX_SERVED, OBJ_MIN_TRAVEL, OBJ_DRIVER_MATCH):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.service_time < 0:
            raise ValueError("service_time must be >= 0")

    def weight_for(self, rider: Participant) -> float:
        if self.w_r_policy is not None:
            return self.w_r_policy(rider)
        if self.objective == OBJ_MIN_TRAVEL:
            return travel_time_w_r(rider, self.delta_t)
        return default_w_r(rider)


LE, EQ, GE = "<=", "==", ">="


class BinaryProgram:
    """Sparse 0-1 program: named binary variables, sense/rhs rows, fixings."""

    def __init__(self):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        self.kinds: list[tuple] = []
        self.objective: list[float] = []
        self.rows: list[tuple[list[tuple[int, float]], str, float, str]] = []
        self.fixings: dict[int, int] = {}
        self._cache = None

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, kind: tuple, obj: float = 0.0) -> int:
        if name in self.index:
            raise ValueError(f"duplicate variable {name}")
        idx = len(self.names)
        self.names.append(name)
        self.index[name] = idx
        self.kinds.append(kind)
        self.objective.append(obj)
        self._cache = None
        return idx

    def add_row(self, terms: list[tuple[int, float]], sense: str, rhs: float, label: str):
        if sense not in (LE, EQ, GE):
            raise ValueError(f"bad sense {sense!r}")
        for idx, _ in terms:
            if not (0 <= idx < len(self.names)):
                raise ValueError(f"row {label} references undeclared variable {idx}")
        self.rows.append((terms, sense, rhs, label))
        self._cache = None

    def fix(self, idx: int, value: int):
        if value not in (0, 1):
            raise ValueError("fixings must be 0 or 1")
        self.fixings[idx] = value

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.zeros(self.n_vars)
        hi = np.ones(self.n_vars)
        for idx, v in self.fixings.items():
            lo[idx] = hi[idx] = float(v)
        return lo, hi

    def matrices(self):
        """(c, A_ub, b_ub, A_eq, b_eq) with >= rows negated into <=; cached."""
        if self._cache is None:
            import scipy.sparse as sp

            ub_r, ub_c, ub_v, b_ub = [], [], [], []
            eq_r, eq_c, eq_v, b_eq = [], [], [], []
            for terms, sense, rhs, _ in self.rows:
                if sense == EQ:
                    i = len(b_eq)
                    for idx, coef in terms:
                        eq_r.append(i)
                        eq_c.append(idx)
                        eq_v.append(coef)
                    b_eq.append(rhs)
                else:
                    sign = 1.0 if sense == LE else -1.0
                    i = len(b_ub)
                    for idx, coef in terms:
                        ub_r.append(i)
                        ub_c.append(idx)
                        ub_v.append(sign * coef)
                    b_ub.append(sign * rhs)
            n = self.n_vars
            a_ub = (
                sp.csr_matrix((ub_v, (ub_r, ub_c)), shape=(len(b_ub), n))
                if b_ub
                else None
            )
            a_eq = (
                sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(len(b_eq), n))
                if b_eq
                else None
            )
            self._cache = (
                np.asarray(self.objective, dtype=float),
                a_ub,
                np.asarray(b_ub, dtype=float),
                a_eq,
                np.asarray(b_eq, dtype=float),
            )
        return self._cache

    def check_assignment(self, values: np.ndarray, tol: float = 1e-6) -> list[dict]:
        """Evaluate every row at `values`; returns structured violations."""
        out = []
        for terms, sense, rhs, label in self.rows:
            lhs = sum(coef * values[idx] for idx, coef in terms)
            bad = (
                (sense == LE and lhs > rhs + tol)
                or (sense == GE and lhs < rhs - tol)
                or (sense == EQ and abs(lhs - rhs) > tol)
            )
            if bad:
                out.append({"row": label, "lhs": lhs, "sense": sense, "rhs": rhs})
        for idx, v in self.fixings.items():
            if abs(values[idx] - v) > tol:
                out.append({"row": f"fix_{self.names[idx]}", "lhs": float(values[idx]), "sense": EQ, "rhs": v})
        return out


def _link_name(l: Link) -> str:
    return f"{l.t_i}_{l.s_i}_{l.t_j}_{l.s_j}"


def build_model(
    riders: Sequence[Participant],
    drivers: Sequence[Participant],
    pairs: PairSet,
    linksets: dict[str, LinkSet],
    opts: ModelOptions | None = None,
    station_universe: frozenset[int] | None = None,
) -> BinaryProgram:
    """Assemble the refined program for a rider subset and its driver pool.

    `drivers` are the real drivers of the (sub-)problem; committed drivers get
    their route variables fixed.  Every rider must have a dummy pair in
    `pairs`."""
    opts = opts or ModelOptions()
    ts = opts.service_time
    s_t = opts.transfer_stations
    prog = BinaryProgram()

    riders = sorted(riders, key=lambda p: p.id)
    drivers = sorted(drivers, key=lambda p: p.id)
    driver_ids = {d.id for d in drivers}

    if s_t is not None and station_universe is not None and not s_t <= station_universe:
        raise ValueError("transfer_stations is not a subset of the network stations")
    for r in riders:
        if not pairs.has(r.id, pairs.dummy_id):
            raise ValueError(f"rider {r.id} has no dummy pair")

    # --- driver routing variables and rows -------------------------------
    x_idx: dict[tuple[str, Link], int] = {}
    for d in drivers:
        if d.fixed_route is not None:
            for l in d.fixed_route:
                idx = prog.add_var(f"x_{d.id}_{_link_name(l)}", ("x", d.id, l))
                x_idx[(d.id, l)] = idx
                prog.fix(idx, 1)
            continue
        links = sorted(linksets[d.id].links)
        if not links:
            raise ValueError(f"driver {d.id} has an empty link set; exclude it from the model")
        for l in links:
            x_idx[(d.id, l)] = prog.add_var(f"x_{d.id}_{_link_name(l)}", ("x", d.id, l))

        zd_idx = None
        if opts.objective == OBJ_DRIVER_MATCH:
            w_prime = (
                opts.driver_weight
                if opts.driver_weight is not None
                else 1.0 / (len(drivers) + 1)
            )
            zd_idx = prog.add_var(f"zd_{d.id}", ("zd", d.id), obj=w_prime)

        out_os = [x_idx[(d.id, l)] for l in links if l.s_i == d.origin]
        in_os = [x_idx[(d.id, l)] for l in links if l.s_j == d.origin]
        terms = [(i, 1.0) for i in out_os] + [(i, -1.0) for i in in_os]
        if zd_idx is not None:
            prog.add_row(terms + [(zd_idx, -1.0)], EQ, 0.0, f"dorig_{d.id}")
        else:
            prog.add_row(terms, EQ, 1.0, f"dorig_{d.id}")

        in_ds = [x_idx[(d.id, l)] for l in links if l.s_j == d.destination]
        out_ds = [x_idx[(d.id, l)] for l in links if l.s_i == d.destination]
        terms = [(i, 1.0) for i in in_ds] + [(i, -1.0) for i in out_ds]
        if zd_idx is not None:
            prog.add_row(terms + [(zd_idx, -1.0)], EQ, 0.0, f"ddest_{d.id}")
        else:
            prog.add_row(terms, EQ, 1.0, f"ddest_{d.id}")

        arr: dict[tuple[int, int], list[int]] = {}
        dep: dict[tuple[int, int], list[int]] = {}
        for l in links:
            arr.setdefault((l.t_j, l.s_j), []).append(x_idx[(d.id, l)])
            dep.setdefault((l.t_i, l.s_i), []).append(x_idx[(d.id, l)])
        nodes = {(t, s) for (t, s) in arr if s not in (d.origin, d.destination)}
        nodes |= {
            (t - ts, s) for (t, s) in dep if s not in (d.origin, d.destination)
        }
        for t, s in sorted(nodes):
            terms = [(i, 1.0) for i in arr.get((t, s), ())]
            terms += [(i, -1.0) for i in dep.get((t + ts, s), ())]
            if terms:
                prog.add_row(terms, EQ, 0.0, f"dbal_{d.id}_{t}_{s}")

    # --- rider variables --------------------------------------------------
    z_idx: dict[str, int] = {}
    y_idx: dict[tuple[str, str, Link], int] = {}
    u_idx: dict[tuple[str, str], int] = {}
    rider_dids: dict[str, list[str]] = {}
    for r in riders:
        z_idx[r.id] = prog.add_var(f"z_{r.id}", ("z", r.id), obj=1.0)
        w_r = opts.weight_for(r)
        dids = [d for d in pairs.rider_drivers.get(r.id, ()) if d in driver_ids]
        rider_dids[r.id] = dids
        for did in dids + [pairs.dummy_id]:
            real = did != pairs.dummy_id
            for l in sorted(pairs.links(r.id, did)):
                y_obj = -w_r * l.duration if (opts.objective == OBJ_MIN_TRAVEL and real) else 0.0
                y_idx[(r.id, did, l)] = prog.add_var(
                    f"y_{r.id}_{did}_{_link_name(l)}", ("y", r.id, did, l), obj=y_obj
                )
        u_obj = -w_r if opts.objective != OBJ_MIN_TRAVEL else 0.0
        for did in dids:
            u_idx[(r.id, did)] = prog.add_var(f"u_{r.id}_{did}", ("u", r.id, did), obj=u_obj)

    # --- rider routing rows ------------------------------------------------
    for r in riders:
        rid = r.id
        all_dids = rider_dids[rid] + [pairs.dummy_id]
        links_of = {
            did: sorted(pairs.links(rid, did)) for did in all_dids
        }
        out_os, in_os, in_ds, out_ds = [], [], [], []
        arr: dict[tuple[int, int], list[tuple[str, int]]] = {}
        dep: dict[tuple[int, int], list[tuple[str, int]]] = {}
        for did in all_dids:
            for l in links_of[did]:
                yi = y_idx[(rid, did, l)]
                if l.s_i == r.origin:
                    out_os.append(yi)
                if l.s_j == r.origin:
                    in_os.append(yi)
                if l.s_j == r.destination:
                    in_ds.append(yi)
                if l.s_i == r.destination:
                    out_ds.append(yi)
                arr.setdefault((l.t_j, l.s_j), []).append((did, yi))
                dep.setdefault((l.t_i, l.s_i), []).append((did, yi))

        terms = [(i, 1.0) for i in out_os] + [(i, -1.0) for i in in_os]
        prog.add_row(terms + [(z_idx[rid], -1.0)], EQ, 0.0, f"rorig_{rid}")
        terms = [(i, 1.0) for i in in_ds] + [(i, -1.0) for i in out_ds]
        prog.add_row(terms + [(z_idx[rid], -1.0)], EQ, 0.0, f"rdest_{rid}")

        nodes = {(t, s) for (t, s) in arr if s not in (r.origin, r.destination)}
        nodes |= {
            (t - ts, s) for (t, s) in dep if s not in (r.origin, r.destination)
        }
        for t, s in sorted(nodes):
            arr_here = arr.get((t, s), ())
            dep_here = dep.get((t + ts, s), ())
            if s_t is None or s in s_t:
                # transfers allowed: joint conservation over all drivers
                terms = [(yi, 1.0) for _, yi in arr_here]
                terms += [(yi, -1.0) for _, yi in dep_here]
                if terms:
                    prog.add_row(terms, EQ, 0.0, f"rbal_{rid}_{t}_{s}")
            else:
                # transfers forbidden here: conservation holds per driver
                per: dict[str, list[tuple[int, float]]] = {}
                for did, yi in arr_here:
                    per.setdefault(did, []).append((yi, 1.0))
                for did, yi in dep_here:
                    per.setdefault(did, []).append((yi, -1.0))
                for did in sorted(per):
                    prog.add_row(per[did], EQ, 0.0, f"rbal_{rid}_{did}_{t}_{s}")

    # --- capacity ----------------------------------------------------------
    for d in drivers:
        cap_links = (
            list(d.fixed_route) if d.fixed_route is not None else sorted(linksets[d.id].links)
        )
        residual = dict(zip(d.fixed_route, d.route_capacity)) if d.fixed_route else None
        for l in cap_links:
            terms = []
            for r in riders:
                yi = y_idx.get((r.id, d.id, l))
                if yi is not None:
                    terms.append((yi, 1.0))
            if not terms:
                continue
            label = f"cap_{d.id}_{_link_name(l)}"
            if residual is not None:
                prog.add_row(terms, LE, float(residual[l]), label)
            else:
                xi = x_idx[(d.id, l)]
                prog.add_row(terms + [(xi, -float(d.capacity))], LE, 0.0, label)
                # y <= x variable upper bounds: implied for binaries by the
                # capacity row, but they keep the relaxation vertices near
                # integral and collapse branching
                for yi, _ in terms:
                    prog.add_row(
                        [(yi, 1.0), (xi, -1.0)], LE, 0.0, f"ride_{prog.names[yi][2:]}"
                    )

    # --- ride-time budgets ---------------------------------------------------
    # Window containment alone does not cap total link time when a route's
    # support is not one contiguous chain, so the budget rows stay in the
    # refined model.
    for d in drivers:
        if d.fixed_route is not None:
            continue
        terms = [
            (x_idx[(d.id, l)], float(l.duration)) for l in sorted(linksets[d.id].links)
        ]
        prog.add_row(terms, LE, float(d.ride_budget), f"dbudget_{d.id}")
    for r in riders:
        terms = []
        for did in rider_dids[r.id] + [pairs.dummy_id]:
            for l in sorted(pairs.links(r.id, did)):
                terms.append((y_idx[(r.id, did, l)], float(l.duration)))
        if terms:
            prog.add_row(terms, LE, float(r.ride_budget), f"rbudget_{r.id}")

    # --- driver registration and transfer caps -----------------------------
    for r in riders:
        rid = r.id
        for did in rider_dids[rid]:
            ui = u_idx[(rid, did)]
            y_here = [y_idx[(rid, did, l)] for l in sorted(pairs.links(rid, did))]
            for yi in y_here:
                prog.add_row([(yi, 1.0), (ui, -1.0)], LE, 0.0, f"uge_{prog.names[yi][2:]}")
            prog.add_row([(ui, 1.0)] + [(yi, -1.0) for yi in y_here], LE, 0.0, f"ule_{rid}_{did}")
        if rider_dids[rid]:
            cap = 0 if opts.single_hop else r.max_transfers
            terms = [(u_idx[(rid, did)], 1.0) for did in rider_dids[rid]]
            prog.add_row(terms, LE, cap + 1.0, f"transfer_{rid}")

    # --- relaxation-tightening rows (integrally implied) ---------------------
    # A driver contributes only to served riders, and a served rider leaves
    # the origin with a real driver; both follow from the rows above for
    # binary points but cut fractional ones, which keeps branching sparse.
    for r in riders:
        rid = r.id
        for did in rider_dids[rid]:
            prog.add_row(
                [(u_idx[(rid, did)], 1.0), (z_idx[rid], -1.0)], LE, 0.0, f"uz_{rid}_{did}"
            )
        if rider_dids[rid]:
            terms = [(u_idx[(rid, did)], 1.0) for did in rider_dids[rid]]
            prog.add_row(terms + [(z_idx[rid], -1.0)], GE, 0.0, f"zserve_{rid}")

    return prog


# --- solutions ---------------------------------------------------------------


@dataclass
class MatchSolution:
    served: frozenset[str]
    itineraries: dict[str, tuple[tuple[Link, str], ...]]
    routes: dict[str, tuple[Link, ...]]
    transfers: dict[str, int]
    objective: float
    status: str = "optimal"
    bound_trace: tuple[tuple[int, float, float], ...] = ()
    iterations: int = 1
    solve_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "status": self.status,
            "iterations": self.iterations,
            "solve_seconds": self.solve_seconds,
            "bound_trace": [list(t) for t in self.bound_trace],
            "riders": {
                rid: {
                    "served": rid in self.served,
                    "transfers": self.transfers.get(rid),
                    "itinerary": [
                        {"t_i": l.t_i, "s_i": l.s_i, "t_j": l.t_j, "s_j": l.s_j, "driver": did}
                        for l, did in self.itineraries.get(rid, ())
                    ],
                }
                for rid in sorted(set(self.itineraries) | self.served)
            },
            "drivers": {
                did: [[l.t_i, l.s_i, l.t_j, l.s_j] for l in route]
                for did, route in sorted(self.routes.items())
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "MatchSolution":
        itineraries = {
            rid: tuple(
                (Link(e["t_i"], e["s_i"], e["t_j"], e["s_j"]), e["driver"])
                for e in rec["itinerary"]
            )
            for rid, rec in data["riders"].items()
        }
        served = frozenset(r for r, rec in data["riders"].items() if rec["served"])
        transfers = {
            r: rec["transfers"] for r, rec in data["riders"].items() if rec["transfers"] is not None
        }
        routes = {
            did: tuple(Link(*l) for l in route) for did, route in data["drivers"].items()
        }
        return cls(
            served=served,
            itineraries=itineraries,
            routes=routes,
            transfers=transfers,
            objective=data["objective"],
            status=data.get("status", "optimal"),
            bound_trace=tuple(tuple(t) for t in data.get("bound_trace", ())),
            iterations=data.get("iterations", 1),
            solve_seconds=data.get("solve_seconds", 0.0),
        )


def save_solution(sol: MatchSolution, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(sol.to_json(), fh, indent=2, sort_keys=True)


class InfeasibleAssignment(ValueError):
    def __init__(self, violations: list[dict]):
        super().__init__(f"assignment violates {len(violations)} constraint(s)")
        self.violations = violations


def extract_solution(
    program: BinaryProgram, assignment: np.ndarray, tol: float = 1e-6
) -> MatchSolution:
    """Rebuild itineraries and routes from a feasible binary assignment."""
    values = np.asarray(assignment, dtype=float)
    bad = program.check_assignment(values, tol=tol)
    if bad:
        raise InfeasibleAssignment(bad)

    served: set[str] = set()
    itineraries: dict[str, list[tuple[Link, str]]] = {}
    routes: dict[str, list[Link]] = {}
    u_sum: dict[str, int] = {}
    for idx, kind in enumerate(program.kinds):
        if values[idx] < 0.5:
            continue
        tag = kind[0]
        if tag == "z":
            served.add(kind[1])
        elif tag == "y":
            _, rid, did, l = kind
            itineraries.setdefault(rid, []).append((l, did))
        elif tag == "x":
            _, did, l = kind
            routes.setdefault(did, []).append(l)
        elif tag == "u":
            _, rid, did = kind
            u_sum[rid] = u_sum.get(rid, 0) + 1

    out_itin = {
        rid: tuple(sorted(links, key=lambda e: (e[0].t_i, e[0].t_j, e[0].s_i, e[0].s_j, e[1])))
        for rid, links in itineraries.items()
    }
    out_routes = {did: tuple(sorted(ls)) for did, ls in routes.items()}
    transfers = {rid: u_sum.get(rid, 1) - 1 for rid in served}
    return MatchSolution(
        served=frozenset(served),
        itineraries=out_itin,
        routes=out_routes,
        transfers=transfers,
        objective=float(len(served)),
    )


def solution_supports(sol: MatchSolution) -> tuple[set, set]:
    """(y-support, x-support) of a solution, for round-trip checks."""
    y = {(rid, did, l) for rid, itin in sol.itineraries.items() for l, did in itin}
    x = {(did, l) for did, route in sol.routes.items() for l in route}
    return y, x


# --- validation ---------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list[dict] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, rule: str, who: str, detail: str, link: Link | None = None):
        self.violations.append({"rule": rule, "who": who, "detail": detail, "link": link})

    def warn(self, rule: str, who: str, detail: str):
        self.warnings.append({"rule": rule, "who": who, "detail": detail})


def _node_balance(links: Sequence[Link], origin: int, dest: int) -> tuple[bool, str]:
    """Unit-flow check: net +1 out of the origin station, net +1 into the
    destination station, balance at every other (interval, station) node.
    Mirrors the model rows, so any feasible assignment passes even when the
    support is not a single contiguous chain."""
    net_flow: dict[tuple[int, int], int] = {}  # arrivals - departures per node
    for l in links:
        net_flow[(l.t_i, l.s_i)] = net_flow.get((l.t_i, l.s_i), 0) - 1
        net_flow[(l.t_j, l.s_j)] = net_flow.get((l.t_j, l.s_j), 0) + 1
    os_net = sum(v for (t, s), v in net_flow.items() if s == origin)
    ds_net = sum(v for (t, s), v in net_flow.items() if s == dest)
    if os_net != -1:
        return False, f"net flow out of origin is {-os_net}, expected 1"
    if ds_net != 1:
        return False, f"net flow into destination is {ds_net}, expected 1"
    for (t, s), v in net_flow.items():
        if s not in (origin, dest) and v != 0:
            return False, f"flow imbalance {v} at node ({t},{s})"
    return True, ""


def _is_contiguous(links: Sequence[Link]) -> bool:
    ordered = sorted(links)
    return all(
        (a.t_j, a.s_j) == (b.t_i, b.s_i) for a, b in zip(ordered, ordered[1:])
    )


def validate_solution(
    sol: MatchSolution,
    instance,
    residuals: dict[tuple[str, Link], int] | None = None,
) -> ValidationReport:
    """Re-verify a solution directly from itineraries (not the constraint
    matrix): windows, budgets, flow, capacity, transfer caps, accompaniment,
    and registration consistency."""
    rep = ValidationReport()
    route_sets = {did: set(route) for did, route in sol.routes.items()}
    loads: dict[tuple[str, Link], int] = {}

    for rid, itin in sol.itineraries.items():
        r = instance.rider(rid)
        if rid not in sol.served:
            if itin:
                rep.add("served-flag", rid, "unserved rider has itinerary links")
            continue
        if not itin:
            rep.add("served-flag", rid, "served rider has no itinerary")
            continue
        links = [l for l, _ in itin]
        for l in links:
            if l.t_i < r.earliest_departure or l.t_j > r.latest_arrival:
                rep.add("window", rid, f"link {l} outside window {r.window}", l)
        if sum(l.duration for l in links) > r.ride_budget:
            rep.add("budget", rid, f"total link time exceeds budget {r.ride_budget}")
        ok, msg = _node_balance(links, r.origin, r.destination)
        if not ok:
            rep.add("flow", rid, msg)
        elif not _is_contiguous(links):
            rep.warn("contiguity", rid, "itinerary is not a single contiguous chain")
        real_dids = set()
        for l, did in itin:
            if did == DUMMY_DRIVER_ID:
                if not l.is_waiting:
                    rep.add("accompaniment", rid, f"dummy driver on moving link {l}", l)
            else:
                real_dids.add(did)
                if l not in route_sets.get(did, ()):
                    rep.add("accompaniment", rid, f"driver {did} does not traverse {l}", l)
                loads[(did, l)] = loads.get((did, l), 0) + 1
        if not real_dids:
            rep.add("accompaniment", rid, "served rider carried by no real driver")
        if len(real_dids) - 1 > r.max_transfers:
            rep.add("transfer-cap", rid, f"{len(real_dids) - 1} transfers > cap {r.max_transfers}")
        if rid in sol.transfers and sol.transfers[rid] != len(real_dids) - 1:
            rep.add(
                "registration",
                rid,
                f"recorded transfers {sol.transfers[rid]} != distinct drivers - 1 = {len(real_dids) - 1}",
            )

    for rid in sol.served:
        if rid not in sol.itineraries:
            rep.add("served-flag", rid, "served rider has no itinerary")

    for did, route in sol.routes.items():
        d = instance.driver(did)
        if not route:
            rep.add("flow", did, "empty driver route")
            continue
        for l in route:
            if l.t_i < d.earliest_departure or l.t_j > d.latest_arrival:
                rep.add("window", did, f"link {l} outside window {d.window}", l)
        if sum(l.duration for l in route) > d.ride_budget:
            rep.add("budget", did, f"total link time exceeds budget {d.ride_budget}")
        if d.fixed_route is not None:
            if tuple(sorted(route)) != tuple(sorted(d.fixed_route)):
                rep.add("commitment", did, "route differs from committed route")
        else:
            ok, msg = _node_balance(route, d.origin, d.destination)
            if not ok:
                rep.add("flow", did, msg)
            elif not _is_contiguous(route):
                rep.warn("contiguity", did, "route is not a single contiguous chain")

    for (did, l), n in loads.items():
        d = instance.driver(did)
        cap = residuals.get((did, l), d.capacity) if residuals is not None else d.capacity
        if n > cap:
            rep.add("capacity", did, f"{n} riders on link {l} exceed capacity {cap}", l)

    return rep
