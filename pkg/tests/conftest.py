"""Shared fixtures"""

import pytest

from src.models.floor_plan import Anchor, FloorPlan, Region
from src.services.simulation_service import (
    mirrored_rooms_environment,
    office_environment,
    single_room_environment,
)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs over simulated environments")


def rect(x0, y0, x1, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


@pytest.fixture
def unit_room_plan():
    """1 m x 1 m single room"""
    return FloorPlan(bounds=(1.0, 1.0), rooms=[Region(id="r1", polygon=rect(0, 0, 1, 1))])


@pytest.fixture
def two_room_plan():
    """Two 2 m x 2 m rooms side by side, joined by a 1 m corridor strip below"""
    return FloorPlan(
        bounds=(4.0, 3.0),
        rooms=[
            Region(id="left", polygon=rect(0, 1, 2, 3)),
            Region(id="right", polygon=rect(2, 1, 4, 3)),
        ],
        corridors=[Region(id="hall", polygon=rect(0, 0, 4, 1))],
        anchors=[Anchor(id="A1", x=0.0, y=0.0), Anchor(id="A2", x=4.0, y=0.0), Anchor(id="A3")],
        grid_spacing_m=0.5,
    )


@pytest.fixture
def single_room_env():
    """Noiseless 6 m room with a ranging anchor in each corner"""
    return single_room_environment()


@pytest.fixture
def mirrored_env():
    return mirrored_rooms_environment()


@pytest.fixture(scope="session")
def office_env():
    return office_environment()
