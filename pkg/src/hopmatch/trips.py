"""Participants, random instance generation, and driver commitments."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .net import Link, Network, TimeGrid, TravelTimeModel, static_travel_time

RIDER = "rider"
DRIVER = "driver"
DUMMY_DRIVER_ID = "dprime"
DUMMY_CAPACITY = 10**9


@dataclass(frozen=True)
class Participant:
    """A rider or driver request.

    Times are interval indices on the instance grid; `ride_budget` is an
    interval count.  `fixed_route` (with parallel `route_capacity`) marks a
    driver whose itinerary was committed in an earlier matching round.
    """

    id: str
    kind: str
    origin: int | None
    destination: int | None
    earliest_departure: int
    latest_arrival: int
    ride_budget: int
    notification_deadline: int | None = None
    capacity: int = 4
    max_transfers: int = 3
    fixed_route: tuple[Link, ...] | None = None
    route_capacity: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in (RIDER, DRIVER):
            raise ValueError(f"kind must be rider|driver, got {self.kind!r}")
        if self.earliest_departure > self.latest_arrival:
            raise ValueError(f"{self.id}: earliest_departure > latest_arrival")
        if self.kind == DRIVER and self.capacity < 1:
            raise ValueError(f"{self.id}: driver capacity must be >= 1")
        if self.kind == RIDER and self.max_transfers < 0:
            raise ValueError(f"{self.id}: max_transfers must be >= 0")
        if self.notification_deadline is None:
            # participants must know their match before they would depart
            object.__setattr__(self, "notification_deadline", self.earliest_departure)

    @property
    def is_rider(self) -> bool:
        return self.kind == RIDER

    @property
    def is_dummy(self) -> bool:
        return self.id == DUMMY_DRIVER_ID

    @property
    def window(self) -> tuple[int, int]:
        return (self.earliest_departure, self.latest_arrival)


def make_dummy_driver(horizon: int) -> Participant:
    """Synthetic driver that 'carries' waiting riders on same-station links.

    It has no real origin, destination, or time window, unlimited capacity,
    and is excluded from driver routing and transfer counting."""
    return Participant(
        id=DUMMY_DRIVER_ID,
        kind=DRIVER,
        origin=None,
        destination=None,
        earliest_departure=0,
        latest_arrival=max(0, horizon - 1),
        ride_budget=horizon,
        capacity=DUMMY_CAPACITY,
    )


def dummy_links(net: Network, grid: TimeGrid) -> frozenset[Link]:
    """Admissible links of the dummy driver: every waiting link in the grid."""
    return frozenset(
        Link(t, s, t + 1, s) for t in range(grid.horizon - 1) for s in net.stations
    )


@dataclass(frozen=True)
class GenConfig:
    n_riders: int
    n_drivers: int
    release_period: float = 60.0
    budget_factor_rider: float = 1.1
    budget_factor_driver: float = 1.1
    directional: bool = False
    capacity: int = 4
    max_transfers: int = 3
    delta_t: float = 1.0
    service_time: int = 0

    def __post_init__(self):
        if self.n_riders < 0 or self.n_drivers < 0:
            raise ValueError("participant counts must be >= 0")
        if self.budget_factor_rider < 1.0 or self.budget_factor_driver < 1.0:
            raise ValueError("budget factors must be >= 1")
        if self.release_period < 0:
            raise ValueError("release_period must be >= 0")


@dataclass(frozen=True)
class Instance:
    network: Network
    grid: TimeGrid
    ttm: TravelTimeModel
    riders: tuple[Participant, ...]
    drivers: tuple[Participant, ...]
    dummy: Participant
    seed: int | None = None
    config: GenConfig | None = None

    def __post_init__(self):
        ids = [p.id for p in self.riders] + [p.id for p in self.drivers]
        if len(ids) != len(set(ids)):
            raise ValueError("participant ids must be unique")
        if DUMMY_DRIVER_ID in ids:
            raise ValueError("dummy driver id reserved")

    def participants(self) -> Iterator[Participant]:
        yield from self.riders
        yield from self.drivers

    def rider(self, pid: str) -> Participant:
        return self._by_id()[pid]

    def driver(self, pid: str) -> Participant:
        if pid == DUMMY_DRIVER_ID:
            return self.dummy
        return self._by_id()[pid]

    def _by_id(self) -> dict[str, Participant]:
        cached = getattr(self, "_id_map", None)
        if cached is None:
            cached = {p.id: p for p in self.participants()}
            object.__setattr__(self, "_id_map", cached)
        return cached


def dummy_driver(instance: Instance) -> Participant:
    return instance.dummy


def _directional_clusters(net: Network) -> tuple[list[int], list[int]]:
    """Split stations into two disjoint sections by median x-coordinate."""
    if len(net.stations) < 2:
        raise ValueError("network too small to bisect for directional trips")
    by_x = sorted(net.stations, key=lambda s: (net.coords[s][0], net.coords[s][1], s))
    half = len(by_x) // 2
    return by_x[:half], by_x[half:]


def generate_instance(net: Network, cfg: GenConfig, seed: int | None = None) -> Instance:
    """Random instance: uniform OD pairs (or clustered when directional),
    departures uniform over the release period, ride budgets drawn from
    [tt, factor*tt], and latest arrival = departure + budget."""
    rng = np.random.default_rng(seed)
    stations = list(net.stations)
    if cfg.directional:
        origin_pool, dest_pool = _directional_clusters(net)
    else:
        origin_pool = dest_pool = stations

    n_release = max(1, round(cfg.release_period / cfg.delta_t))

    def draw(pid: str, kind: str, factor: float) -> Participant:
        os_ = int(rng.choice(origin_pool))
        while True:
            ds = int(rng.choice(dest_pool))
            if ds != os_:
                break
        ed = int(rng.integers(0, n_release))
        tt = static_travel_time(net, os_, ds)
        tb_minutes = float(rng.uniform(tt, factor * tt))
        tb = max(1, math.ceil(tb_minutes / cfg.delta_t - 1e-12))
        return Participant(
            id=pid,
            kind=kind,
            origin=os_,
            destination=ds,
            earliest_departure=ed,
            latest_arrival=ed + tb,
            ride_budget=tb,
            capacity=cfg.capacity,
            max_transfers=cfg.max_transfers,
        )

    riders = tuple(
        draw(f"r{i}", RIDER, cfg.budget_factor_rider) for i in range(cfg.n_riders)
    )
    drivers = tuple(
        draw(f"d{i}", DRIVER, cfg.budget_factor_driver) for i in range(cfg.n_drivers)
    )

    horizon = max([1] + [p.latest_arrival + 1 for p in riders + drivers])
    grid = TimeGrid(delta_t=cfg.delta_t, horizon=horizon)
    ttm = TravelTimeModel(network=net, grid=grid)
    return Instance(
        network=net,
        grid=grid,
        ttm=ttm,
        riders=riders,
        drivers=drivers,
        dummy=make_dummy_driver(horizon),
        seed=seed,
        config=cfg,
    )


def commit_driver(
    p: Participant,
    route: tuple[Link, ...],
    remaining_capacity_per_link: tuple[int, ...],
) -> Participant:
    """Freeze a driver onto `route`; models built later fix the route links to
    1 and cap rider assignment by the per-link remaining capacity."""
    if p.kind != DRIVER or p.is_dummy:
        raise ValueError("only real drivers can be committed")
    if not route:
        raise ValueError("empty route")
    if len(route) != len(remaining_capacity_per_link):
        raise ValueError("route and capacity vectors differ in length")
    route = tuple(Link(*l) for l in route)
    for a, b in zip(route, route[1:]):
        if (a.t_j, a.s_j) != (b.t_i, b.s_i):
            raise ValueError(f"route disconnected between {a} and {b}")
    lo, hi = route[0].t_i, route[-1].t_j
    if lo < p.earliest_departure or hi > p.latest_arrival:
        raise ValueError("route lies outside the driver's travel time window")
    if sum(l.duration for l in route) > p.ride_budget:
        raise ValueError("route exceeds the driver's ride-time budget")
    if any(c < 0 for c in remaining_capacity_per_link):
        raise ValueError("negative remaining capacity")
    return replace(
        p, fixed_route=route, route_capacity=tuple(int(c) for c in remaining_capacity_per_link)
    )


# --- instance (de)serialization -------------------------------------------

def _participant_to_json(p: Participant) -> dict:
    out = {
        "id": p.id,
        "kind": p.kind,
        "origin": p.origin,
        "destination": p.destination,
        "earliest_departure": p.earliest_departure,
        "latest_arrival": p.latest_arrival,
        "ride_budget": p.ride_budget,
        "notification_deadline": p.notification_deadline,
        "capacity": p.capacity,
        "max_transfers": p.max_transfers,
    }
    if p.fixed_route is not None:
        out["fixed_route"] = [list(l) for l in p.fixed_route]
        out["route_capacity"] = list(p.route_capacity)
    return out


def _participant_from_json(data: dict) -> Participant:
    route = data.get("fixed_route")
    return Participant(
        id=data["id"],
        kind=data["kind"],
        origin=data["origin"],
        destination=data["destination"],
        earliest_departure=data["earliest_departure"],
        latest_arrival=data["latest_arrival"],
        ride_budget=data["ride_budget"],
        notification_deadline=data["notification_deadline"],
        capacity=data["capacity"],
        max_transfers=data["max_transfers"],
        fixed_route=tuple(Link(*l) for l in route) if route else None,
        route_capacity=tuple(data["route_capacity"]) if route else None,
    )


def instance_to_json(inst: Instance) -> dict:
    cfg = inst.config
    return {
        "network": inst.network.to_json(),
        "grid": {
            "delta_t": inst.grid.delta_t,
            "horizon": inst.grid.horizon,
            "origin": inst.grid.origin,
        },
        "profile": list(inst.ttm.profile),
        "participants": [_participant_to_json(p) for p in inst.participants()],
        "seed": inst.seed,
        "config": None if cfg is None else vars(cfg) | {},
    }


def instance_from_json(data: dict) -> Instance:
    net = Network.from_json(data["network"])
    g = data["grid"]
    grid = TimeGrid(delta_t=g["delta_t"], horizon=g["horizon"], origin=g.get("origin", 0.0))
    ttm = TravelTimeModel(network=net, grid=grid, profile=tuple(data.get("profile", ())))
    parts = [_participant_from_json(p) for p in data["participants"]]
    riders = tuple(p for p in parts if p.kind == RIDER)
    drivers = tuple(p for p in parts if p.kind == DRIVER)
    cfg = GenConfig(**data["config"]) if data.get("config") else None
    return Instance(
        network=net,
        grid=grid,
        ttm=ttm,
        riders=riders,
        drivers=drivers,
        dummy=make_dummy_driver(grid.horizon),
        seed=data.get("seed"),
        config=cfg,
    )


def save_instance(inst: Instance, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json(inst), fh, indent=2, sort_keys=True)


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        return instance_from_json(json.load(fh))
