"""Ground-truth probe targets for one (scene, pose) frame."""

from __future__ import annotations

import math

import numpy as np

from .render import IMG, render_semantic
from .types import (
    ARM_HEIGHT, CARDINAL_DELTAS, CELL_SIZE, FREE, INTERACT_RANGE,
    AgentPose, ProbeLabels, SceneSpec, snap_heading,
    REACH_ABSENT, REACH_REACHABLE, REACH_VISIBLE,
)

__all__ = ["ground_truth_labels", "free_space_class"]


def free_space_class(scene: SceneSpec, pose: AgentPose) -> int:
    """Clear MoveAhead steps along the snapped heading; 10 means >= 10."""
    grid = scene.grid
    occupied = {o.cell() for o in scene.objects}
    di, dj = CARDINAL_DELTAS[snap_heading(pose.heading)]
    i, j = pose.cell()
    for k in range(1, 11):
        ni, nj = i + k * di, j + k * dj
        if not (0 <= ni < grid.shape[0] and 0 <= nj < grid.shape[1]):
            return k - 1
        if grid[ni, nj] != FREE or (ni, nj) in occupied:
            return k - 1
    return 10


def ground_truth_labels(scene: SceneSpec, pose: AgentPose,
                        semantic: np.ndarray | None = None) -> ProbeLabels:
    """Presence/localization from the rendered semantic buffer; free space
    and reachability from geometry. Pass `semantic` to reuse a frame already
    rendered for this exact (scene, pose).
    """
    if semantic is None:
        semantic = render_semantic(scene, pose)
    c_count = scene.category_count
    presence = np.zeros(c_count, dtype=np.uint8)
    localization = np.zeros((c_count, 3, 3), dtype=np.uint8)
    reach = np.zeros(c_count, dtype=np.int8)

    by_id = {o.id: o for o in scene.objects}
    ids = np.unique(semantic)
    ax, ay = pose.position
    for oid in ids:
        if oid < 0:
            continue
        obj = by_id[int(oid)]
        c = obj.category
        presence[c] = 1
        rows, cols = np.nonzero(semantic == oid)
        localization[c, (3 * rows) // IMG, (3 * cols) // IMG] = 1
        dist = math.hypot(obj.position[0] - ax, obj.position[1] - ay)
        if dist <= INTERACT_RANGE and obj.height <= ARM_HEIGHT:
            reach[c] = REACH_REACHABLE
        elif reach[c] != REACH_REACHABLE:
            reach[c] = REACH_VISIBLE

    return ProbeLabels(
        presence=presence,
        localization=localization,
        free_space=free_space_class(scene, pose),
        reachability=reach,
    )
