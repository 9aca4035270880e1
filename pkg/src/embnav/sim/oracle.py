"""Shortest paths and the scripted expert.

All geodesics are 4-connected BFS over walkable cells at 0.25 m per step.
The expert plans greedily over the BFS distance field; for rearrangement it
fixes misplaced objects nearest-first with ties broken by lowest object id.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from .generate import walkable_mask
from .render import object_visible, ray_clear, wrap_angle
from .types import (
    CARDINAL_DELTAS, CELL_SIZE, HFOV_DEG, INTERACT_RANGE,
    Action, AgentPose, SceneSpec, TaskSpec, cell_center, pos_to_cell, snap_heading,
    DONE, MOVE_AHEAD, PLACE, ROTATE_LEFT, ROTATE_RIGHT,
    OBJECTNAV, POINTNAV, REARRANGE, category_openable,
)

__all__ = [
    "bfs_distances", "qualifying_cells", "interaction_cells",
    "shortest_path_length", "geodesic_to_cells", "expert_action",
]

# Neighbor order for greedy descent ties: east, south, west, north.
_NEIGHBOR_ORDER = [(0, 1), (1, 0), (0, -1), (-1, 0)]


def bfs_distances(mask: np.ndarray, sources: list[tuple[int, int]]) -> np.ndarray:
    """Multi-source BFS; returns cell-count distances, -1 where unreachable."""
    dist = np.full(mask.shape, -1, dtype=np.int32)
    q = deque()
    for s in sources:
        if 0 <= s[0] < mask.shape[0] and 0 <= s[1] < mask.shape[1] and mask[s] and dist[s] < 0:
            dist[s] = 0
            q.append(s)
    while q:
        i, j = q.popleft()
        for di, dj in _NEIGHBOR_ORDER:
            ni, nj = i + di, j + dj
            if (0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1]
                    and mask[ni, nj] and dist[ni, nj] < 0):
                dist[ni, nj] = dist[i, j] + 1
                q.append((ni, nj))
    return dist


def _walkable(scene: SceneSpec) -> np.ndarray:
    return walkable_mask(scene.grid, {o.cell() for o in scene.objects})


def qualifying_cells(scene: SceneSpec, goal_category: int) -> set[tuple[int, int]]:
    """Walkable cells from which some goal-category instance satisfies the
    success rule under the best heading: within range and a clear 2-D ray.
    """
    mask = _walkable(scene)
    out: set[tuple[int, int]] = set()
    targets = [o for o in scene.objects if o.category == goal_category]
    span = int(math.ceil(INTERACT_RANGE / CELL_SIZE))
    for obj in targets:
        oi, oj = obj.cell()
        for i in range(oi - span, oi + span + 1):
            for j in range(oj - span, oj + span + 1):
                if not (0 <= i < mask.shape[0] and 0 <= j < mask.shape[1]):
                    continue
                if not mask[i, j] or (i, j) in out:
                    continue
                c = cell_center((i, j))
                d = math.hypot(obj.position[0] - c[0], obj.position[1] - c[1])
                if d <= INTERACT_RANGE and ray_clear(scene.grid, c, obj.position):
                    out.add((i, j))
    return out


def interaction_cells(scene: SceneSpec, obj) -> set[tuple[int, int]]:
    """Walkable cells from which `obj` can be interacted with after rotating."""
    mask = _walkable(scene)
    out: set[tuple[int, int]] = set()
    oi, oj = obj.cell()
    span = int(math.ceil(INTERACT_RANGE / CELL_SIZE))
    for i in range(oi - span, oi + span + 1):
        for j in range(oj - span, oj + span + 1):
            if not (0 <= i < mask.shape[0] and 0 <= j < mask.shape[1]) or not mask[i, j]:
                continue
            c = cell_center((i, j))
            d = math.hypot(obj.position[0] - c[0], obj.position[1] - c[1])
            if d <= INTERACT_RANGE and ray_clear(scene.grid, c, obj.position):
                out.add((i, j))
    return out


def geodesic_to_cells(scene: SceneSpec, from_cell: tuple[int, int],
                      targets: set[tuple[int, int]]) -> float:
    """Metres from `from_cell` to the nearest target cell; inf if cut off."""
    if from_cell in targets:
        return 0.0
    mask = _walkable(scene)
    dist = bfs_distances(mask, sorted(targets))
    if not (0 <= from_cell[0] < mask.shape[0] and 0 <= from_cell[1] < mask.shape[1]):
        return math.inf
    d = dist[from_cell]
    return math.inf if d < 0 else float(d) * CELL_SIZE


def shortest_path_length(scene: SceneSpec, from_pose: AgentPose, goal) -> float:
    """Geodesic metres from the pose to a goal.

    `goal` is an int (ObjectNav category: nearest success-qualifying cell) or
    an (x, y) position in metres (PointNav: that cell). Returns inf when no
    path exists.
    """
    start = from_pose.cell()
    if isinstance(goal, (int, np.integer)):
        return geodesic_to_cells(scene, start, qualifying_cells(scene, int(goal)))
    return geodesic_to_cells(scene, start, {pos_to_cell(tuple(goal))})


# ---------------------------------------------------------------------------
# Expert

def _rotation_toward(pose: AgentPose, target_bearing: float) -> Action:
    """One rotation step that reduces |bearing|; exact-180 goes right."""
    b = wrap_angle(target_bearing - pose.heading)
    return ROTATE_LEFT if b > 0 else ROTATE_RIGHT


def _bearing_to(pose: AgentPose, point: tuple[float, float]) -> float:
    return math.degrees(math.atan2(point[1] - pose.position[1],
                                   point[0] - pose.position[0]))


def _facing(pose: AgentPose, point: tuple[float, float]) -> bool:
    return abs(wrap_angle(_bearing_to(pose, point) - pose.heading)) <= HFOV_DEG / 2.0


def _step_toward_cells(scene: SceneSpec, pose: AgentPose,
                       targets: set[tuple[int, int]]) -> Action | None:
    """Next action along the BFS-shortest path into `targets`; None if there
    is no path or the pose is already inside the target set.
    """
    cell = pose.cell()
    if cell in targets:
        return None
    mask = _walkable(scene)
    dist = bfs_distances(mask, sorted(targets))
    here = dist[cell]
    if here < 0:
        return None
    best = None
    for cardinal, (di, dj) in ((0, CARDINAL_DELTAS[0]), (90, CARDINAL_DELTAS[90]),
                               (180, CARDINAL_DELTAS[180]), (270, CARDINAL_DELTAS[270])):
        ni, nj = cell[0] + di, cell[1] + dj
        if (0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1]
                and mask[ni, nj] and dist[ni, nj] >= 0 and dist[ni, nj] < here):
            if best is None or dist[ni, nj] < best[0]:
                best = (dist[ni, nj], cardinal)
    if best is None:
        return None
    cardinal = best[1]
    if snap_heading(pose.heading) == cardinal:
        return MOVE_AHEAD
    diff = wrap_angle(cardinal - pose.heading)
    return ROTATE_LEFT if diff > 0 else ROTATE_RIGHT


def _nav_expert(sim, targets: set[tuple[int, int]], face_obj) -> Action:
    pose = sim.pose
    if pose.cell() in targets:
        if face_obj is None:
            return DONE
        if _facing(pose, face_obj.position):
            return DONE
        return _rotation_toward(pose, _bearing_to(pose, face_obj.position))
    step = _step_toward_cells(sim.scene, pose, targets)
    if step is None:
        raise RuntimeError("expert found no path to the goal")
    return step


def _best_visible_goal(sim, targets_cat: int):
    """Nearest goal-category instance interactable from the current cell."""
    pose = sim.pose
    best = None
    for obj in sim.scene.objects:
        if obj.category != targets_cat:
            continue
        d = math.hypot(obj.position[0] - pose.position[0],
                       obj.position[1] - pose.position[1])
        if d <= INTERACT_RANGE and ray_clear(sim.scene.grid, pose.position, obj.position):
            if best is None or d < best[0] or (d == best[0] and obj.id < best[1].id):
                best = (d, obj)
    return None if best is None else best[1]


def expert_action(sim) -> Action:
    """Oracle action for the simulator's current state."""
    task: TaskSpec = sim.task
    if task.kind == OBJECTNAV:
        if sim.objectnav_success():
            return DONE
        targets = sim.qualifying
        face = _best_visible_goal(sim, task.goal_category)
        if sim.pose.cell() in targets and face is None:
            # qualifying under some heading only; face the nearest instance
            face = min((o for o in sim.scene.objects if o.category == task.goal_category),
                       key=lambda o: (math.hypot(o.position[0] - sim.pose.position[0],
                                                 o.position[1] - sim.pose.position[1]), o.id))
        return _nav_expert(sim, targets, face)
    if task.kind == POINTNAV:
        goal_cell = pos_to_cell(task.goal_position)
        if sim.pose.cell() == goal_cell:
            return DONE
        return _nav_expert(sim, {goal_cell}, None)
    if task.kind == REARRANGE:
        return _rearrange_expert(sim)
    raise ValueError(f"unknown task kind {task.kind!r}")


def _rearrange_expert(sim) -> Action:
    from .diff import rearrangement_diff  # local import avoids a cycle

    held = {sim.held} if sim.held is not None else set()
    diff = rearrangement_diff(sim.scene, sim.task.goal_scene, held)
    if diff.empty():
        return DONE
    pose = sim.pose

    if sim.held is not None:
        goal_obj = sim.task.goal_scene.object_by_id(sim.held)
        g = pos_to_cell(goal_obj.position)
        mask = _walkable(sim.scene)
        place_cells = set()
        for di, dj in _NEIGHBOR_ORDER:
            ni, nj = g[0] + di, g[1] + dj
            if 0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1] and mask[ni, nj]:
                place_cells.add((ni, nj))
        if not place_cells:
            raise RuntimeError("no cell to place from")
        if pose.cell() in place_cells:
            want = _cardinal_between(pose.cell(), g)
            if snap_heading(pose.heading) == want:
                return PLACE
            d = wrap_angle(want - pose.heading)
            return ROTATE_LEFT if d > 0 else ROTATE_RIGHT
        step = _step_toward_cells(sim.scene, pose, place_cells)
        if step is None:
            raise RuntimeError("expert cannot reach the place cell")
        return step

    # Choose the nearest fixable object, lowest id on ties.
    mask = _walkable(sim.scene)
    dist = bfs_distances(mask, [pose.cell()])
    best = None
    for e in diff.entries:
        obj = sim.scene.object_by_id(e.object_id)
        cells = interaction_cells(sim.scene, obj)
        if not cells:
            continue
        dcells = [dist[c] for c in cells if dist[c] >= 0] + ([0] if pose.cell() in cells else [])
        if not dcells:
            continue
        d = min(dcells)
        if best is None or d < best[0] or (d == best[0] and e.object_id < best[1].object_id):
            best = (d, e, cells)
    if best is None:
        raise RuntimeError("expert cannot reach any misplaced object")
    _, entry, cells = best
    obj = sim.scene.object_by_id(entry.object_id)
    if pose.cell() in cells:
        if not _facing(pose, obj.position):
            return _rotation_toward(pose, _bearing_to(pose, obj.position))
        if entry.kind == "openable":
            goal_open = sim.task.goal_scene.openables[obj.id]
            return Action("Open" if goal_open else "Close", obj.category)
        return Action("PickUp", obj.category)
    step = _step_toward_cells(sim.scene, pose, cells)
    if step is None:
        raise RuntimeError("expert cannot reach the interaction cell")
    return step


def _cardinal_between(a: tuple[int, int], b: tuple[int, int]) -> int:
    di, dj = b[0] - a[0], b[1] - a[1]
    for card, (ci, cj) in CARDINAL_DELTAS.items():
        if (di, dj) == (ci, cj):
            return card
    raise ValueError(f"cells {a} and {b} are not cardinal neighbors")
