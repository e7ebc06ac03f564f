import pytest

from tests._scene import build_room_scene


@pytest.fixture(scope="session")
def room_scene():
    """(surfel map, trajectory spec, world) built once per session."""
    return build_room_scene()
