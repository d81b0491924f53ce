"""Stations, time discretization, travel-time models, and time-expanded links.

Everything here is immutable after construction and safe to share across
concurrent solver workers.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple


class TimeExpandedLink(NamedTuple):
    """Timed movement (t_i, s_i, t_j, s_j): leave s_i in interval t_i, arrive
    at s_j in interval t_j.  A waiting link has s_i == s_j and t_j == t_i + 1."""

    t_i: int
    s_i: int
    t_j: int
    s_j: int

    @property
    def is_waiting(self) -> bool:
        return self.s_i == self.s_j

    @property
    def duration(self) -> int:
        return self.t_j - self.t_i


Link = TimeExpandedLink


@dataclass(frozen=True)
class TimeGrid:
    """Discretization of the study horizon into `horizon` intervals of
    `delta_t` minutes each.  Interval indices run 0 .. horizon-1."""

    delta_t: float
    horizon: int
    origin: float = 0.0

    def __post_init__(self):
        if self.delta_t <= 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    def minutes_to_intervals(self, minutes: float) -> int:
        """Conservative (round-up) conversion so a traveler leaving at the very
        end of an interval still arrives within the computed interval."""
        return max(0, math.ceil(minutes / self.delta_t - 1e-12))


class Network:
    """Station set with symmetric positive-time edges between neighbors.

    Stations carry planar coordinates used only for instance generation and
    clustering; all feasibility logic works on travel times.
    """

    def __init__(
        self,
        stations: Iterable[int],
        coords: dict[int, tuple[float, float]],
        edges: Iterable[tuple[int, int, float]],
        net_id: str = "net",
    ):
        self.id = net_id
        self.stations: tuple[int, ...] = tuple(sorted(stations))
        self.coords = dict(coords)
        station_set = set(self.stations)
        if len(self.stations) != len(station_set):
            raise ValueError("duplicate station ids")

        self.adjacency: dict[int, dict[int, float]] = {s: {} for s in self.stations}
        edge_list = []
        for a, b, minutes in edges:
            if a not in station_set or b not in station_set:
                raise ValueError(f"edge ({a},{b}) references unknown station")
            if a == b:
                raise ValueError(f"self-loop edge at station {a}")
            if minutes <= 0:
                raise ValueError(f"edge ({a},{b}) travel time must be > 0")
            self.adjacency[a][b] = minutes
            self.adjacency[b][a] = minutes
            edge_list.append((min(a, b), max(a, b), minutes))
        self.edges: tuple[tuple[int, int, float], ...] = tuple(sorted(set(edge_list)))

        if len(self.stations) > 1 and not self._connected():
            raise ValueError("network graph must be connected")

        self._index = {s: i for i, s in enumerate(self.stations)}
        self._static_tt: dict[int, dict[int, float]] = {}

    def _connected(self) -> bool:
        seen = {self.stations[0]}
        stack = [self.stations[0]]
        while stack:
            s = stack.pop()
            for nb in self.adjacency[s]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.stations)

    def neighbors(self, s: int) -> dict[int, float]:
        return self.adjacency[s]

    def shortest_times_from(self, source: int) -> dict[int, float]:
        """Single-source shortest path times in minutes (cached Dijkstra)."""
        if source not in self.adjacency:
            raise KeyError(f"unknown station id {source}")
        cached = self._static_tt.get(source)
        if cached is not None:
            return cached
        dist = {source: 0.0}
        pq = [(0.0, source)]
        while pq:
            d, s = heapq.heappop(pq)
            if d > dist.get(s, math.inf):
                continue
            for nb, w in self.adjacency[s].items():
                nd = d + w
                if nd < dist.get(nb, math.inf):
                    dist[nb] = nd
                    heapq.heappush(pq, (nd, nb))
        self._static_tt[source] = dist
        return dist

    def to_json(self) -> dict:
        out = {
            "stations": [
                {"id": s, "x": self.coords[s][0], "y": self.coords[s][1]}
                for s in self.stations
            ],
            "edges": [{"a": a, "b": b, "minutes": m} for a, b, m in self.edges],
        }
        return out

    @classmethod
    def from_json(cls, data: dict, net_id: str = "net") -> "Network":
        stations = [st["id"] for st in data["stations"]]
        coords = {st["id"]: (st["x"], st["y"]) for st in data["stations"]}
        edges = [(e["a"], e["b"], e["minutes"]) for e in data["edges"]]
        return cls(stations, coords, edges, net_id=net_id)


def build_grid_network(rows: int, cols: int, edge_time: float) -> Network:
    """rows x cols lattice with 4-neighbor edges, all of length `edge_time`."""
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    if edge_time <= 0:
        raise ValueError("edge_time must be > 0")
    stations = list(range(rows * cols))
    coords = {i * cols + j: (float(j), float(i)) for i in range(rows) for j in range(cols)}
    edges = []
    for i in range(rows):
        for j in range(cols):
            s = i * cols + j
            if j + 1 < cols:
                edges.append((s, s + 1, edge_time))
            if i + 1 < rows:
                edges.append((s, s + cols, edge_time))
    return Network(stations, coords, edges, net_id=f"grid{rows}x{cols}")


def static_travel_time(net: Network, s1: int, s2: int) -> float:
    """Shortest-path travel time in minutes under base edge times."""
    if s2 not in net.adjacency:
        raise KeyError(f"unknown station id {s2}")
    dist = net.shortest_times_from(s1)
    try:
        return dist[s2]
    except KeyError:
        raise KeyError(f"station {s2} unreachable from {s1}") from None


@dataclass(frozen=True)
class TravelTimeModel:
    """Static (all-pairs shortest-path minutes) plus dynamic per-interval edge
    times realized as multipliers over base edge times.

    Multipliers must be >= 1 so static times remain an underestimate of any
    dynamic traversal, which the link-reduction seeding relies on.
    """

    network: Network
    grid: TimeGrid
    profile: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.profile and len(self.profile) != self.grid.horizon:
            raise ValueError("profile length must equal grid horizon")
        if any(f < 1.0 for f in self.profile):
            raise ValueError("profile multipliers must be >= 1.0 (underestimate requirement)")

    def multiplier(self, t: int) -> float:
        return self.profile[t] if self.profile else 1.0

    def static_minutes(self, s1: int, s2: int) -> float:
        return static_travel_time(self.network, s1, s2)

    def static_intervals(self, s1: int, s2: int) -> int:
        return self.grid.minutes_to_intervals(self.static_minutes(s1, s2))

    def dynamic_intervals(self, t: int, s1: int, s2: int) -> int:
        return dynamic_travel_time(self, t, s1, s2)


def dynamic_travel_time(model: TravelTimeModel, t: int, s1: int, s2: int) -> int:
    """Interval count to traverse edge (s1, s2) departing in interval t."""
    if not (0 <= t < model.grid.horizon):
        raise ValueError(f"interval {t} outside horizon {model.grid.horizon}")
    base = model.network.adjacency[s1].get(s2)
    if base is None:
        raise KeyError(f"({s1},{s2}) is not a network edge")
    return max(1, model.grid.minutes_to_intervals(base * model.multiplier(t)))


def link_universe(net: Network, grid: TimeGrid, ttm: TravelTimeModel) -> set[Link]:
    """All edge links with both endpoints inside the horizon, plus all waiting
    links (t, s, t+1, s)."""
    links: set[Link] = set()
    last = grid.horizon - 1
    for t in range(grid.horizon):
        for a, b, _ in net.edges:
            for s1, s2 in ((a, b), (b, a)):
                tj = t + dynamic_travel_time(ttm, t, s1, s2)
                if tj <= last:
                    links.add(Link(t, s1, tj, s2))
    for t in range(last):
        for s in net.stations:
            links.add(Link(t, s, t + 1, s))
    return links


def load_network(path: str) -> tuple[Network, tuple[float, ...]]:
    """Read a network JSON file; returns the network and the optional profile
    (empty tuple when absent)."""
    with open(path) as fh:
        data = json.load(fh)
    net = Network.from_json(data)
    profile: tuple[float, ...] = ()
    if "profile" in data:
        entries = sorted(data["profile"], key=lambda e: e["t"])
        profile = tuple(e["factor"] for e in entries)
    return net, profile


def save_network(net: Network, path: str, profile: tuple[float, ...] = ()) -> None:
    data = net.to_json()
    if profile:
        data["profile"] = [{"t": t, "factor": f} for t, f in enumerate(profile)]
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
