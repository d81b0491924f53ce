"""hopmatch: exact multi-hop peer-to-peer ride matching on time-expanded networks."""

from .bip import (
    BinaryProgram,
    MatchSolution,
    ModelOptions,
    build_model,
    default_w_r,
    extract_solution,
    validate_solution,
)
from .decomp import run_decomposition
from .harness import METHODS, Metrics, RollingConfig, compute_metrics, rolling_horizon, run_method
from .net import (
    Link,
    Network,
    TimeExpandedLink,
    TimeGrid,
    TravelTimeModel,
    build_grid_network,
    dynamic_travel_time,
    link_universe,
    static_travel_time,
)
from .prep import (
    LinkSet,
    PairSet,
    ReducedGraph,
    feasible_pairs,
    filter_riders,
    link_reduction,
    preprocess,
    reduced_graph,
)
from .solver import (
    LpSolution,
    SearchLimits,
    export_lp,
    solve_bip,
    solve_lp_relaxation,
    solve_set_packing,
)
from .trips import (
    GenConfig,
    Instance,
    Participant,
    commit_driver,
    dummy_driver,
    generate_instance,
    load_instance,
    save_instance,
)

__version__ = "0.1.0"
