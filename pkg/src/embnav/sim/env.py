"""The stepped simulator and the deterministic task sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..rng import stream_seed
from .diff import rearrangement_diff, scene_energy
from .generate import SimConfig, generate_scene, walkable_mask
from .oracle import (
    bfs_distances, expert_action, interaction_cells, qualifying_cells,
)
from .render import object_visible, render, render_semantic, wrap_angle
from .types import (
    CARDINAL_DELTAS, CELL_SIZE, FREE, INTERACT_RANGE, SUCCESS_RADIUS, SURFACE,
    Action, ActionSpace, AgentPose, EpisodeDoneError, Observation, SceneSpec,
    StepResult, TaskSpec, category_height, category_openable, cell_center,
    pos_to_cell, snap_heading,
    DONE, LOOK_DOWN, LOOK_UP, MOVE_AHEAD, PLACE, ROTATE_LEFT, ROTATE_RIGHT,
    OBJECTNAV, POINTNAV, REARRANGE,
)

STEP_PENALTY = -0.01
SUCCESS_REWARD = 10.0

__all__ = ["Simulator", "TaskParams", "TaskSampler", "STEP_PENALTY", "SUCCESS_REWARD"]


class Simulator:
    """One episode. Deterministic: state evolves only through step()."""

    def __init__(self, scene: SceneSpec, task: TaskSpec, start_pose: AgentPose,
                 episode_seed: int = 0, obs_mode: str = "rgb"):
        if obs_mode not in ("rgb", "semantic", "state"):
            raise ValueError(f"obs_mode {obs_mode!r}")
        start_pose.validate(scene.grid)
        self.episode_seed = episode_seed
        self.obs_mode = obs_mode
        self._walk_cache: Optional[np.ndarray] = None
        self.initial_scene = scene.copy()
        self.scene = scene.copy()
        self.task = task
        self.pose = AgentPose(start_pose.position, start_pose.heading, start_pose.horizon)
        self.action_space = ActionSpace.for_task(task.kind, scene.category_count)
        self.t = 0
        self.done = False
        self.success = False
        self.held: Optional[int] = None
        self.collisions = 0
        self.path_length = 0.0
        self.prev_action: Optional[int] = None
        self.actions_taken: list[str] = []

        if task.kind == OBJECTNAV:
            self.qualifying = qualifying_cells(scene, task.goal_category)
            mask = self._walkable()
            self._dist_field = bfs_distances(mask, sorted(self.qualifying))
        elif task.kind == POINTNAV:
            self.goal_cell = pos_to_cell(task.goal_position)
            mask = self._walkable()
            self._dist_field = bfs_distances(mask, [self.goal_cell])
        else:
            self.start_diff = rearrangement_diff(self.scene, task.goal_scene)
            self._correct_at_start = ({o.id for o in self.scene.objects}
                                      - self.start_diff.ids())
        self.start_geodesic = self.geodesic()

    # -- queries ------------------------------------------------------------

    def _walkable(self) -> np.ndarray:
        # Grid never mutates; only PickUp/Place move object cells, and both
        # drop the cache, so reuse between actions is safe.
        if self._walk_cache is None:
            self._walk_cache = walkable_mask(self.scene.grid,
                                             {o.cell() for o in self.scene.objects})
        return self._walk_cache

    def geodesic(self) -> float:
        """Metres to the goal from the current cell (nav tasks); for
        rearrangement, the current misplacement energy."""
        if self.task.kind in (OBJECTNAV, POINTNAV):
            d = self._dist_field[self.pose.cell()]
            return math.inf if d < 0 else float(d) * CELL_SIZE
        return scene_energy(self.current_diff())

    def current_diff(self):
        held = {self.held} if self.held is not None else set()
        return rearrangement_diff(self.scene, self.task.goal_scene, held)

    def objectnav_success(self) -> bool:
        ax, ay = self.pose.position
        for obj in self.scene.objects:
            if obj.category != self.task.goal_category:
                continue
            d = math.hypot(obj.position[0] - ax, obj.position[1] - ay)
            if d <= INTERACT_RANGE and object_visible(self.scene, self.pose, obj):
                return True
        return False

    def _check_success(self) -> bool:
        if self.task.kind == OBJECTNAV:
            return self.objectnav_success()
        if self.task.kind == POINTNAV:
            return self.geodesic() <= SUCCESS_RADIUS
        return self.current_diff().empty()

    def _interactable(self, category: int, want_openable: Optional[bool] = None):
        """Nearest instance of `category` within range and visible; for
        open/close, restrict to openables currently in the opposite state."""
        ax, ay = self.pose.position
        best = None
        for obj in self.scene.objects:
            if obj.category != category:
                continue
            if want_openable is not None:
                if obj.id not in self.scene.openables:
                    continue
                if self.scene.openables[obj.id] == want_openable:
                    continue
            d = math.hypot(obj.position[0] - ax, obj.position[1] - ay)
            if d > INTERACT_RANGE or not object_visible(self.scene, self.pose, obj):
                continue
            if best is None or d < best[0] or (d == best[0] and obj.id < best[1].id):
                best = (d, obj)
        return None if best is None else best[1]

    # -- observation ---------------------------------------------------------

    def observe(self) -> Observation:
        rgb, sem = self._view(self.scene)
        obs = Observation(image=rgb, prev_action=self.prev_action,
                          scene=self.scene, pose=AgentPose(self.pose.position,
                                                           self.pose.heading,
                                                           self.pose.horizon),
                          semantic=sem)
        if self.task.kind == OBJECTNAV:
            obs.goal_category = self.task.goal_category
        elif self.task.kind == POINTNAV:
            gx, gy = self.task.goal_position
            ax, ay = self.pose.position
            dist = math.hypot(gx - ax, gy - ay)
            ang = wrap_angle(math.degrees(math.atan2(gy - ay, gx - ax)) - self.pose.heading)
            obs.goal_polar = (dist, math.radians(ang))
        else:
            goal_rgb, goal_sem = self._view(self.task.goal_scene)
            obs.goal_image = goal_rgb
            obs.goal_scene = self.task.goal_scene
            obs.goal_semantic = goal_sem
        return obs

    def _view(self, scene: SceneSpec):
        """Render per obs_mode: full frame, id buffer only, or nothing."""
        if self.obs_mode == "rgb":
            return render(scene, self.pose)
        if self.obs_mode == "semantic":
            return None, render_semantic(scene, self.pose)
        return None, None

    # -- dynamics ------------------------------------------------------------

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeDoneError("step() after episode end")
        if isinstance(action, (int, np.integer)):
            action = self.action_space[int(action)]
        if action not in self.action_space.actions:
            raise ValueError(f"action {action} not in this task's action space")

        nav_task = self.task.kind in (OBJECTNAV, POINTNAV)
        prev_potential = self.geodesic()
        collision = False

        name = action.name
        if name == "MoveAhead":
            di, dj = CARDINAL_DELTAS[snap_heading(self.pose.heading)]
            i, j = self.pose.cell()
            ni, nj = i + di, j + dj
            mask = self._walkable()
            if 0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1] and mask[ni, nj]:
                self.pose.position = cell_center((ni, nj))
                self.path_length += CELL_SIZE
            else:
                collision = True
                self.collisions += 1
        elif name == "RotateLeft":
            self.pose.heading = (self.pose.heading + 30) % 360
        elif name == "RotateRight":
            self.pose.heading = (self.pose.heading - 30) % 360
        elif name == "LookUp":
            self.pose.horizon = min(30, self.pose.horizon + 30)
        elif name == "LookDown":
            self.pose.horizon = max(-30, self.pose.horizon - 30)
        elif name == "Done":
            self.success = self._check_success()
            self.done = True
        elif name == "PickUp":
            obj = None
            if self.held is None and not category_openable(action.category):
                obj = self._interactable(action.category)
            if obj is not None:
                self.held = obj.id
                self.scene.objects = [o for o in self.scene.objects if o.id != obj.id]
                self._held_obj = obj
                self._walk_cache = None
        elif name == "Place":
            if self.held is not None:
                di, dj = CARDINAL_DELTAS[snap_heading(self.pose.heading)]
                i, j = self.pose.cell()
                ni, nj = i + di, j + dj
                grid = self.scene.grid
                if (0 <= ni < grid.shape[0] and 0 <= nj < grid.shape[1]
                        and grid[ni, nj] != 1
                        and (ni, nj) not in {o.cell() for o in self.scene.objects}):
                    obj = self._held_obj
                    elev = 0.0 if grid[ni, nj] == FREE else 0.5
                    obj.position = cell_center((ni, nj))
                    obj.height = elev + category_height(obj.category)
                    self.scene.objects.append(obj)
                    self.scene.objects.sort(key=lambda o: o.id)
                    self.held = None
                    self._held_obj = None
                    self._walk_cache = None
        elif name in ("Open", "Close"):
            obj = self._interactable(action.category, want_openable=(name == "Open"))
            if obj is not None:
                self.scene.openables[obj.id] = (name == "Open")
        else:
            raise ValueError(f"unhandled action {name!r}")

        self.t += 1
        self.actions_taken.append(action.label())
        self.prev_action = self.action_space.index(action)
        if not self.done and self.t >= self.task.max_steps:
            self.done = True
            self.success = False

        reward = STEP_PENALTY
        new_potential = self.geodesic()
        if nav_task:
            if math.isfinite(prev_potential) and math.isfinite(new_potential):
                reward += prev_potential - new_potential
        else:
            reward += prev_potential - new_potential
        if self.done and self.success:
            reward += SUCCESS_REWARD

        info = {"collision": collision, "geodesic": new_potential}
        if self.done:
            info["success"] = self.success
        return StepResult(self.observe(), reward, self.done, info)

    # -- bookkeeping ----------------------------------------------------------

    def episode_summary(self) -> dict:
        """Raw quantities the metrics layer turns into scores."""
        out = {
            "seed": self.episode_seed,
            "kind": self.task.kind,
            "success": self.success,
            "path_length": self.path_length,
            "shortest_path": self.start_geodesic if self.task.kind != REARRANGE else 0.0,
            "final_geodesic": self.geodesic() if self.task.kind != REARRANGE else 0.0,
            "steps": self.t,
            "actions": list(self.actions_taken),
        }
        if self.task.kind == REARRANGE:
            end = self.current_diff()
            disturbed = len(end.ids() & self._correct_at_start)
            out.update({
                "start_misplaced": len(self.start_diff),
                "end_misplaced": len(end),
                "newly_disturbed": disturbed,
                "start_energy": scene_energy(self.start_diff),
                "end_energy": scene_energy(end),
                "fixed": len(self.start_diff.ids() - end.ids()),
            })
        return out

    def snapshot(self) -> dict:
        snap = {
            "pose": self.pose.to_dict(),
            "t": self.t, "done": self.done, "success": self.success,
            "held": self.held, "collisions": self.collisions,
            "path_length": self.path_length, "prev_action": self.prev_action,
            "actions_taken": list(self.actions_taken),
            "objects": [{"id": o.id, "position": list(o.position), "height": o.height}
                        for o in self.scene.objects],
            "openables": {str(k): v for k, v in self.scene.openables.items()},
        }
        if self.held is not None:
            o = self._held_obj
            snap["held_obj"] = {"id": o.id, "category": o.category,
                                "position": list(o.position), "height": o.height,
                                "visible_radius": o.visible_radius}
        return snap

    def restore(self, snap: dict) -> None:
        self.pose = AgentPose.from_dict(snap["pose"])
        self.t = snap["t"]
        self.done = snap["done"]
        self.success = snap["success"]
        self.held = snap["held"]
        self.collisions = snap["collisions"]
        self.path_length = snap["path_length"]
        self.prev_action = snap["prev_action"]
        self.actions_taken = list(snap["actions_taken"])
        by_id = {o.id: o for o in self.initial_scene.objects}
        objs = []
        for od in snap["objects"]:
            o = by_id[od["id"]]
            objs.append(type(o)(o.id, o.category, tuple(od["position"]),
                                od["height"], o.visible_radius))
        self.scene.objects = objs
        self.scene.openables = {int(k): v for k, v in snap["openables"].items()}
        self._walk_cache = None
        if self.held is not None:
            hd = snap["held_obj"]
            o = by_id[hd["id"]]
            self._held_obj = type(o)(o.id, o.category, tuple(hd["position"]),
                                     hd["height"], o.visible_radius)


# ---------------------------------------------------------------------------
# Task sampling

@dataclass
class TaskParams:
    kind: str = OBJECTNAV
    shuffle_count: int = 1
    open_toggle_count: int = 0
    goal_categories: Optional[list[int]] = None   # restrict ObjectNav goals
    min_start_distance: float = 0.5               # metres of geodesic at start
    start_in_view: bool = False                   # rearrange: spawn facing a misplaced object


class TaskSampler:
    """Pure function (episode_seed) -> fresh Simulator, under a SimConfig."""

    def __init__(self, config: SimConfig, params: TaskParams,
                 obs_mode: str = "rgb"):
        config.validate()
        self.config = config
        self.params = params
        self.obs_mode = obs_mode

    def build(self, episode_seed: int) -> Simulator:
        for attempt in range(64):
            scene_seed = (stream_seed(episode_seed, f"scene-{attempt}")
                          if attempt else int(episode_seed))
            scene = generate_scene(scene_seed, self.config)
            rng = np.random.default_rng(stream_seed(episode_seed, f"episode-{attempt}"))
            sim = self._try_build(scene, rng)
            if sim is not None:
                sim.episode_seed = int(episode_seed)
                return sim
        raise ValueError(f"no valid episode for seed {episode_seed} under this config")

    # -- per-kind builders -----------------------------------------------------

    def _try_build(self, scene: SceneSpec, rng: np.random.Generator):
        if self.params.kind == OBJECTNAV:
            return self._build_objectnav(scene, rng)
        if self.params.kind == POINTNAV:
            return self._build_pointnav(scene, rng)
        if self.params.kind == REARRANGE:
            return self._build_rearrange(scene, rng)
        raise ValueError(f"unknown task kind {self.params.kind!r}")

    def _random_pose(self, cells: list[tuple[int, int]], rng) -> AgentPose:
        cell = cells[int(rng.integers(0, len(cells)))]
        heading = int(rng.integers(0, 12)) * 30
        return AgentPose(cell_center(cell), heading, 0)

    def _build_objectnav(self, scene: SceneSpec, rng):
        present = sorted({o.category for o in scene.objects})
        if self.params.goal_categories is not None:
            present = [c for c in present if c in self.params.goal_categories]
        if not present:
            return None
        cats = list(rng.permutation(present))
        mask = walkable_mask(scene.grid, {o.cell() for o in scene.objects})
        for cat in cats:
            qcells = qualifying_cells(scene, int(cat))
            if not qcells:
                continue
            dist = bfs_distances(mask, sorted(qcells))
            min_cells = max(1, int(round(self.params.min_start_distance / CELL_SIZE)))
            starts = [tuple(c) for c in np.argwhere(mask)
                      if dist[tuple(c)] >= min_cells]
            if not starts:
                continue
            pose = self._random_pose(starts, rng)
            task = TaskSpec(kind=OBJECTNAV, max_steps=self.config.max_steps,
                            goal_category=int(cat))
            return Simulator(scene, task, pose, obs_mode=self.obs_mode)
        return None

    def _build_pointnav(self, scene: SceneSpec, rng):
        mask = walkable_mask(scene.grid, {o.cell() for o in scene.objects})
        cells = [tuple(c) for c in np.argwhere(mask)]
        if len(cells) < 2:
            return None
        for _ in range(32):
            start = cells[int(rng.integers(0, len(cells)))]
            dist = bfs_distances(mask, [start])
            min_cells = max(1, int(round(self.params.min_start_distance / CELL_SIZE)))
            goals = [c for c in cells if dist[c] >= min_cells]
            if not goals:
                continue
            goal = goals[int(rng.integers(0, len(goals)))]
            heading = int(rng.integers(0, 12)) * 30
            pose = AgentPose(cell_center(start), heading, 0)
            gx, gy = cell_center(goal)
            d0 = math.hypot(gx - pose.position[0], gy - pose.position[1])
            ang = wrap_angle(math.degrees(math.atan2(gy - pose.position[1],
                                                     gx - pose.position[0])) - heading)
            task = TaskSpec(kind=POINTNAV, max_steps=self.config.max_steps,
                            goal_polar=(d0, math.radians(ang)),
                            goal_position=(gx, gy))
            return Simulator(scene, task, pose, obs_mode=self.obs_mode)
        return None

    def _build_rearrange(self, scene: SceneSpec, rng):
        pickupable = [o for o in scene.objects if not category_openable(o.category)]
        openable_ids = sorted(scene.openables)
        if len(pickupable) < self.params.shuffle_count:
            return None
        if len(openable_ids) < self.params.open_toggle_count:
            return None

        current = scene.copy()
        original_cells = {o.cell() for o in scene.objects}
        order = rng.permutation(len(pickupable))
        moved = 0
        taken: set[tuple[int, int]] = set()
        for idx in order:
            if moved >= self.params.shuffle_count:
                break
            obj = current.object_by_id(pickupable[int(idx)].id)
            grid = scene.grid
            cand = [tuple(c) for c in np.argwhere(grid != 1)
                    if tuple(c) not in original_cells and tuple(c) not in taken]
            rng.shuffle(cand)
            for cell in cand:
                old_pos, old_h = obj.position, obj.height
                elev = 0.0 if grid[cell] == FREE else 0.5
                obj.position = cell_center(cell)
                obj.height = elev + category_height(obj.category)
                cells_now = [o.cell() for o in current.objects]
                from .generate import _objects_reachable
                if _objects_reachable(grid, cells_now):
                    taken.add(cell)
                    moved += 1
                    break
                obj.position, obj.height = old_pos, old_h
            else:
                return None
        if moved < self.params.shuffle_count:
            return None

        togg = list(rng.permutation(openable_ids))[: self.params.open_toggle_count]
        for oid in togg:
            current.openables[int(oid)] = not scene.openables[int(oid)]

        mask = walkable_mask(current.grid, {o.cell() for o in current.objects})
        cells = [tuple(c) for c in np.argwhere(mask)]
        if not cells:
            return None
        if self.params.start_in_view:
            # A start pose qualifies when some misplaced object is visible
            # both where it sits now and where it belongs, so the episode is
            # solvable from what the first frame (and its goal view) shows.
            pairs = [(current.object_by_id(oid), scene.object_by_id(oid))
                     for oid in rearrangement_diff(current, scene).ids()
                     if any(o.id == oid for o in current.objects)]
            poses = [pose
                     for c in cells for h in range(0, 360, 30)
                     for pose in [AgentPose(cell_center(c), h, 0)]
                     if any(object_visible(current, pose, cur_ob)
                            and object_visible(scene, pose, goal_ob)
                            for cur_ob, goal_ob in pairs)]
            if not poses:
                return None
            pose = poses[int(rng.integers(0, len(poses)))]
        else:
            pose = self._random_pose(cells, rng)
        task = TaskSpec(kind=REARRANGE, max_steps=self.config.max_steps,
                        goal_scene=scene)
        sim = Simulator(current, task, pose, obs_mode=self.obs_mode)
        if sim.start_diff.empty():
            return None
        # Construction-time guarantee: the scripted expert must solve it.
        probe = Simulator(current, task, AgentPose(pose.position, pose.heading,
                                                   pose.horizon),
                          obs_mode="state")
        try:
            for _ in range(task.max_steps):
                res = probe.step(expert_action(probe))
                if res.done:
                    break
        except RuntimeError:
            return None
        if not probe.success:
            return None
        return sim
