import numpy as np
import pytest
from shapely.geometry import box

from pedassign.experiment import resolve_scenario
from pedassign.geometry import WalkingGeometry, rasterize
from pedassign.routes import RouteSetConfig, enumerate_routes


@pytest.fixture(scope="session")
def two_walls():
    return resolve_scenario("data:two_walls")


@pytest.fixture(scope="session")
def two_walls_routes(two_walls):
    """Full-resolution route set for the shipped scene; built once per session."""
    return enumerate_routes(two_walls, RouteSetConfig(resolution=0.10))


@pytest.fixture(scope="session")
def open_rectangle():
    """Obstacle-free 12 x 6 m scene, origin left, destination right."""
    return WalkingGeometry(
        obstacles=(),
        origin_region=box(0.5, 0.5, 1.5, 5.5),
        destination_region=box(10.5, 0.5, 11.5, 5.5),
        bounds=(0.0, 0.0, 12.0, 6.0),
    )


@pytest.fixture(scope="session")
def one_door_corridor():
    """12 x 6 m scene with a single 1.0 m door in a wall at x = 6."""
    return WalkingGeometry(
        obstacles=(box(5.9, 0.0, 6.2, 2.5), box(5.9, 3.5, 6.2, 6.0)),
        origin_region=box(0.5, 0.5, 1.5, 5.5),
        destination_region=box(10.5, 0.5, 11.5, 5.5),
        bounds=(0.0, 0.0, 12.0, 6.0),
    )


@pytest.fixture(scope="session")
def three_door_wall():
    """Single wall with three doors of qualifying separation."""
    return WalkingGeometry(
        obstacles=(
            box(5.9, 0.0, 6.2, 2.0),
            box(5.9, 3.0, 6.2, 5.5),
            box(5.9, 6.5, 6.2, 9.0),
            box(5.9, 10.0, 6.2, 12.0),
        ),
        origin_region=box(0.5, 0.5, 1.5, 11.5),
        destination_region=box(10.5, 0.5, 11.5, 11.5),
        bounds=(0.0, 0.0, 12.0, 12.0),
    )


@pytest.fixture(scope="session")
def coarse_cfg():
    return RouteSetConfig(resolution=0.10)
