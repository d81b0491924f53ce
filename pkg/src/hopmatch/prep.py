"""Pre-processing: reduced graphs, link reduction, rider filtering, pair sets.

The reduction never cuts a link that lies on any complete feasible
origin-to-destination path, so models built on the reduced sets keep the
optimum of the unreduced formulation.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field

from .net import Link, Network, TimeGrid, TravelTimeModel
from .trips import Instance, Participant


@dataclass(frozen=True)
class ReducedGraph:
    """Stations a participant can touch without blowing their ride budget:
    s is included iff static(OS,s) + static(s,DS) <= budget."""

    pid: str
    stations: frozenset[int]
    edges: frozenset[tuple[int, int]]  # undirected admissible pairs


@dataclass(frozen=True)
class LinkSet:
    pid: str
    links: frozenset[Link]
    arrivals: dict[int, tuple[int, ...]] = field(default_factory=dict, compare=False)
    incoming: dict[int, tuple[Link, ...]] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.links)


def reduced_graph(p: Participant, net: Network, delta_t: float = 1.0) -> ReducedGraph:
    """Time-metric ellipse with the participant's OD stations as focal points.

    The inclusion test compares in minutes; `delta_t` converts the interval
    budget.  `ride_budget * delta_t` rounds the original budget up, so the
    ellipse can only widen (safe over-approximation)."""
    from_os = net.shortest_times_from(p.origin)
    to_ds = net.shortest_times_from(p.destination)
    budget_minutes = p.ride_budget * delta_t
    eps = 1e-9
    stations = frozenset(
        s
        for s in net.stations
        if from_os.get(s, float("inf")) + to_ds.get(s, float("inf")) <= budget_minutes + eps
    )
    edges = frozenset(
        (a, b) for a, b, _ in net.edges if a in stations and b in stations
    )
    return ReducedGraph(pid=p.id, stations=stations, edges=edges)


def forward_links(
    p: Participant,
    net: Network,
    grid: TimeGrid,
    ttm: TravelTimeModel,
    rg: ReducedGraph | None = None,
) -> tuple[set[Link], dict[int, set[int]]]:
    """Forward movement: propagate reachable intervals station by station over
    the reduced graph, generating candidate links.

    Returns the candidate links and the per-station reachable intervals.
    Arrivals at the destination later than the latest arrival time are still
    generated here; the backward movement removes them."""
    rg = rg or reduced_graph(p, net, grid.delta_t)
    ed, la = p.window
    last = grid.horizon - 1
    links: set[Link] = set()
    arrivals: dict[int, set[int]] = defaultdict(set)

    latest_start = la - ttm.static_intervals(p.origin, p.destination)
    if latest_start < ed:
        return links, dict(arrivals)
    seeds = set(range(ed, min(latest_start, last - 1) + 1))
    if not seeds:
        return links, dict(arrivals)
    arrivals[p.origin] = set(seeds)

    adj = {
        s: [nb for nb in net.adjacency[s] if nb in rg.stations] + [s]
        for s in rg.stations
    }
    pending: dict[int, set[int]] = defaultdict(set)
    pending[p.origin] = set(seeds)
    queue = deque([p.origin])
    queued = {p.origin}
    while queue:
        s1 = queue.popleft()
        queued.discard(s1)
        todo = sorted(pending.pop(s1, ()))
        for s2 in adj[s1]:
            for t in todo:
                if t >= min(la, last):
                    continue
                dur = 1 if s2 == s1 else ttm.dynamic_intervals(t, s1, s2)
                tj = t + dur
                if tj > last:
                    continue
                if tj > la and s2 != p.destination:
                    continue
                links.add(Link(t, s1, tj, s2))
                if tj <= la and tj not in arrivals[s2]:
                    arrivals[s2].add(tj)
                    pending[s2].add(tj)
                    if s2 not in queued:
                        queued.add(s2)
                        queue.append(s2)
    return links, dict(arrivals)


def _co_reachable_prune(links: set[Link], dest: int, la: int) -> frozenset[Link]:
    """Backward movement: drop every link whose head cannot continue to an
    on-time destination arrival (deletions cascade until a fixed point)."""
    out_by_node: dict[tuple[int, int], list[Link]] = defaultdict(list)
    nodes = set()
    for l in links:
        out_by_node[(l.t_i, l.s_i)].append(l)
        nodes.add((l.t_i, l.s_i))
        nodes.add((l.t_j, l.s_j))
    alive: dict[tuple[int, int], bool] = {}
    for node in sorted(nodes, key=lambda n: -n[0]):
        t, s = node
        ok = s == dest and t <= la
        if not ok:
            ok = any(alive.get((l.t_j, l.s_j), False) for l in out_by_node.get(node, ()))
        alive[node] = ok
    return frozenset(l for l in links if alive[(l.t_j, l.s_j)])


def link_reduction(
    p: Participant,
    net: Network,
    grid: TimeGrid,
    ttm: TravelTimeModel,
    rg: ReducedGraph | None = None,
) -> LinkSet:
    """Two-stage reduction producing every link that lies on some complete
    feasible trip for `p`, and nothing else.

    Committed drivers short-circuit to their fixed route."""
    if p.fixed_route is not None:
        kept = frozenset(p.fixed_route)
        return LinkSet(pid=p.id, links=kept, **_station_indexes(kept))
    candidates, _ = forward_links(p, net, grid, ttm, rg)
    if not candidates:
        return LinkSet(pid=p.id, links=frozenset())
    kept = _co_reachable_prune(candidates, p.destination, p.latest_arrival)
    return LinkSet(pid=p.id, links=kept, **_station_indexes(kept))


def _station_indexes(links: frozenset[Link]) -> dict:
    arr: dict[int, set[int]] = defaultdict(set)
    inc: dict[int, list[Link]] = defaultdict(list)
    for l in links:
        arr[l.s_j].add(l.t_j)
        inc[l.s_j].append(l)
    return {
        "arrivals": {s: tuple(sorted(ts)) for s, ts in arr.items()},
        "incoming": {s: tuple(sorted(ls)) for s, ls in inc.items()},
    }


def prune_to_paths(
    links: frozenset[Link] | set[Link],
    origin: int,
    dest: int,
    ed: int,
    la: int,
) -> frozenset[Link]:
    """Restrict an arbitrary link set to links on a complete origin-to-
    destination path that departs no earlier than `ed` and arrives by `la`.

    Used for fixed-route link sets, where the route restriction can strand
    links that the full reduction would have kept."""
    by_tail: dict[tuple[int, int], list[Link]] = defaultdict(list)
    for l in links:
        if l.t_i >= ed and l.t_j <= la:
            by_tail[(l.t_i, l.s_i)].append(l)
    reach: set[Link] = set()
    seen = set()
    stack = [(t, origin) for t in range(ed, la + 1) if (t, origin) in by_tail]
    seen.update(stack)
    while stack:
        node = stack.pop()
        for l in by_tail.get(node, ()):
            reach.add(l)
            head = (l.t_j, l.s_j)
            if head not in seen:
                seen.add(head)
                stack.append(head)
    return _co_reachable_prune(reach, dest, la)


# --- rider filtering and pair sets ------------------------------------------


def _shared_incident(inter: frozenset[Link], station: int) -> bool:
    return any(l.s_i == station or l.s_j == station for l in inter)


def filter_riders(
    instance: Instance, linksets: dict[str, LinkSet]
) -> tuple[tuple[Participant, ...], tuple[Participant, ...]]:
    """Keep a rider only if some driver shares a link at the rider's origin
    station and some (possibly different) driver shares one at the
    destination station."""
    driver_links = [
        (d, linksets[d.id].links) for d in instance.drivers if linksets[d.id].links
    ]
    kept, filtered = [], []
    for r in instance.riders:
        lr = linksets[r.id].links
        orig_ok = dest_ok = False
        if lr:
            for _, ld in driver_links:
                inter = lr & ld
                if not inter:
                    continue
                orig_ok = orig_ok or _shared_incident(inter, r.origin)
                dest_ok = dest_ok or _shared_incident(inter, r.destination)
                if orig_ok and dest_ok:
                    break
        (kept if orig_ok and dest_ok else filtered).append(r)
    return tuple(kept), tuple(filtered)


@dataclass(frozen=True)
class PairSet:
    """Feasible (rider, driver) pairs M with the shared link set of each pair.

    Every kept rider also has a pair with the dummy driver, whose shared set
    is the rider's own waiting links."""

    pairs: dict[tuple[str, str], frozenset[Link]]
    rider_drivers: dict[str, tuple[str, ...]]  # real drivers only, sorted
    dummy_id: str

    def links(self, rid: str, did: str) -> frozenset[Link]:
        return self.pairs[(rid, did)]

    def has(self, rid: str, did: str) -> bool:
        return (rid, did) in self.pairs


def feasible_pairs(
    instance: Instance,
    linksets: dict[str, LinkSet],
    kept_riders: tuple[Participant, ...] | None = None,
) -> PairSet:
    from .trips import DUMMY_DRIVER_ID

    if kept_riders is None:
        kept_riders, _ = filter_riders(instance, linksets)
    driver_links = [
        (d, linksets[d.id].links) for d in instance.drivers if linksets[d.id].links
    ]
    pairs: dict[tuple[str, str], frozenset[Link]] = {}
    rider_drivers: dict[str, tuple[str, ...]] = {}
    for r in kept_riders:
        lr = linksets[r.id].links
        dids = []
        for d, ld in driver_links:
            inter = lr & ld
            if inter:
                pairs[(r.id, d.id)] = inter
                dids.append(d.id)
        pairs[(r.id, DUMMY_DRIVER_ID)] = frozenset(l for l in lr if l.is_waiting)
        rider_drivers[r.id] = tuple(sorted(dids))
    return PairSet(pairs=pairs, rider_drivers=rider_drivers, dummy_id=DUMMY_DRIVER_ID)


# --- one-call pre-processing --------------------------------------------------


@dataclass(frozen=True)
class PrepResult:
    instance: Instance
    reduced: dict[str, ReducedGraph]
    linksets: dict[str, LinkSet]
    kept: tuple[Participant, ...]
    filtered: tuple[Participant, ...]
    pairs: PairSet
    drivers: tuple[Participant, ...]  # drivers with a nonempty link set

    def stats(self) -> dict:
        from .net import link_universe

        universe = len(link_universe(self.instance.network, self.instance.grid, self.instance.ttm))
        counts = {pid: len(ls) for pid, ls in self.linksets.items()}
        ratios = [c / universe for c in counts.values()] if universe else []
        return {
            "universe_size": universe,
            "link_counts": counts,
            "mean_reduction_ratio": (sum(ratios) / len(ratios)) if ratios else 0.0,
            "n_riders": len(self.instance.riders),
            "n_kept": len(self.kept),
            "n_filtered": len(self.filtered),
        }


def preprocess(instance: Instance) -> PrepResult:
    net, grid, ttm = instance.network, instance.grid, instance.ttm
    reduced: dict[str, ReducedGraph] = {}
    linksets: dict[str, LinkSet] = {}
    for p in instance.participants():
        rg = None
        if p.fixed_route is None:
            rg = reduced_graph(p, net, grid.delta_t)
            reduced[p.id] = rg
        linksets[p.id] = link_reduction(p, net, grid, ttm, rg)
    kept, filtered = filter_riders(instance, linksets)
    pairs = feasible_pairs(instance, linksets, kept)
    drivers = tuple(d for d in instance.drivers if linksets[d.id].links)
    return PrepResult(
        instance=instance,
        reduced=reduced,
        linksets=linksets,
        kept=kept,
        filtered=filtered,
        pairs=pairs,
        drivers=drivers,
    )
