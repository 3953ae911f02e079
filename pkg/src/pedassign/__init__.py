"""Pedestrian dynamic assignment: distinct routes, microsimulation, equilibrium search."""

__version__ = "0.1.0"

from .geometry import (
    DistanceField,
    OccupancyGrid,
    WalkingGeometry,
    clearance_field,
    distance_field,
    load_geometry,
    parse_scenario,
    rasterize,
    steering_direction,
)
from .routes import (
    Route,
    RouteSet,
    RouteSetConfig,
    build_intermediate_destinations,
    enumerate_routes,
    route_signature,
)
from .simulate import (
    ForceParameters,
    PedestrianState,
    SimulationConfig,
    SpeedDistribution,
    TravelTimeRecord,
    average_travel_times,
    run_simulation,
    social_force,
)
from .assign import (
    AnalyticEvaluator,
    AssignmentResult,
    IterationResult,
    SimulationEvaluator,
    UpdateParams,
    adapt_delta,
    check_termination,
    probability_shift,
    run_assignment,
    run_sweep,
    update_ratios,
)

__all__ = [
    "AnalyticEvaluator",
    "AssignmentResult",
    "DistanceField",
    "ForceParameters",
    "IterationResult",
    "OccupancyGrid",
    "PedestrianState",
    "Route",
    "RouteSet",
    "RouteSetConfig",
    "SimulationConfig",
    "SimulationEvaluator",
    "SpeedDistribution",
    "TravelTimeRecord",
    "UpdateParams",
    "WalkingGeometry",
    "adapt_delta",
    "average_travel_times",
    "build_intermediate_destinations",
    "check_termination",
    "clearance_field",
    "distance_field",
    "enumerate_routes",
    "load_geometry",
    "parse_scenario",
    "probability_shift",
    "rasterize",
    "route_signature",
    "run_assignment",
    "run_simulation",
    "run_sweep",
    "social_force",
    "steering_direction",
    "update_ratios",
    "__version__",
]
