import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hopmatch.net import Network, TimeGrid, TravelTimeModel, build_grid_network
from hopmatch.trips import Participant, make_dummy_driver


@pytest.fixture(scope="session")
def grid5() -> Network:
    return build_grid_network(5, 5, 5.0)


@pytest.fixture(scope="session")
def grid7() -> Network:
    return build_grid_network(7, 7, 5.0)


def diamond_net() -> Network:
    """Two parallel routes between stations 0 and 3: the short one via 1
    (19 + 19 = 38 minutes) and a longer one via 2 (20 + 20 = 40 minutes)."""
    return Network(
        stations=[0, 1, 2, 3],
        coords={0: (0, 0), 1: (1, 1), 2: (1, -1), 3: (2, 0)},
        edges=[(0, 1, 19.0), (1, 3, 19.0), (0, 2, 20.0), (2, 3, 20.0)],
        net_id="diamond",
    )


def line_net(times=(5.0, 5.0)) -> Network:
    """Stations 0..n in a chain with the given edge times."""
    n = len(times)
    return Network(
        stations=list(range(n + 1)),
        coords={i: (float(i), 0.0) for i in range(n + 1)},
        edges=[(i, i + 1, t) for i, t in enumerate(times)],
        net_id="line",
    )


def participant(
    pid="p0",
    kind="driver",
    origin=0,
    destination=1,
    ed=0,
    budget=None,
    la=None,
    capacity=4,
    max_transfers=3,
) -> Participant:
    if budget is None:
        budget = (la - ed) if la is not None else 10
    if la is None:
        la = ed + budget
    return Participant(
        id=pid,
        kind=kind,
        origin=origin,
        destination=destination,
        earliest_departure=ed,
        latest_arrival=la,
        ride_budget=budget,
        capacity=capacity,
        max_transfers=max_transfers,
    )


def grid_and_ttm(net: Network, horizon: int, delta_t: float = 1.0, profile=()):
    grid = TimeGrid(delta_t=delta_t, horizon=horizon)
    ttm = TravelTimeModel(network=net, grid=grid, profile=tuple(profile))
    return grid, ttm


def tiny_instance(net, riders, drivers, horizon, delta_t=1.0):
    """Instance from hand-built participants."""
    from hopmatch.trips import Instance

    grid, ttm = grid_and_ttm(net, horizon, delta_t)
    return Instance(
        network=net,
        grid=grid,
        ttm=ttm,
        riders=tuple(riders),
        drivers=tuple(drivers),
        dummy=make_dummy_driver(horizon),
    )


def transfer_instance():
    """Rider must ride d1 for the first leg, wait 2 intervals, then d2."""
    net = line_net(times=(5.0, 5.0))
    rider = participant(pid="r0", kind="rider", origin=0, destination=2, ed=0, budget=12)
    d1 = participant(pid="d1", kind="driver", origin=0, destination=1, ed=0, budget=5)
    d2 = participant(pid="d2", kind="driver", origin=1, destination=2, ed=7, budget=5)
    return tiny_instance(net, [rider], [d1, d2], horizon=14)
