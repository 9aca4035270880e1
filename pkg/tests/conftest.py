import numpy as np
import pytest

from embnav.sim.types import (
    FREE, WALL, SURFACE, AgentPose, ObjectInstance, SceneSpec,
    category_height, cell_center,
)


def make_scene(rows=7, cols=7, walls=(), surfaces=(), objects=(),
               category_count=12, seed=0, open_state=None):
    """Hand-built scene for controlled geometry tests.

    objects: iterable of (id, category, cell) or (id, category, cell, elevation).
    """
    grid = np.zeros((rows, cols), dtype=np.int8)
    grid[:] = FREE
    for (i, j) in walls:
        grid[i, j] = WALL
    for (i, j) in surfaces:
        grid[i, j] = SURFACE
    objs = []
    openables = {}
    for entry in objects:
        oid, cat, cell = entry[:3]
        elevation = entry[3] if len(entry) > 3 else 0.0
        objs.append(ObjectInstance(
            id=oid, category=cat, position=cell_center(cell),
            height=elevation + category_height(cat), visible_radius=0.08))
        if cat % 5 == 3:
            openables[oid] = False
    if open_state:
        openables.update(open_state)
    return SceneSpec(seed=seed, grid=grid, objects=objs,
                     openables=openables, category_count=category_count)


def pose_at(cell, heading=0, horizon=0):
    return AgentPose(position=cell_center(cell), heading=float(heading),
                     horizon=float(horizon))


@pytest.fixture
def empty_scene():
    return make_scene()
