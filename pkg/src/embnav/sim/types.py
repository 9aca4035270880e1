"""Core simulator datatypes: scenes, poses, tasks, actions, observations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Any, Optional

import numpy as np

CELL_SIZE = 0.25          # metres per grid cell == MoveAhead distance
ROT_STEP = 30             # degrees per rotate action
HORIZONS = (-30, 0, 30)   # camera pitch lattice, positive looks up
HFOV_DEG = 90.0           # horizontal field of view
INTERACT_RANGE = 1.0      # metres: visibility/interaction distance
SUCCESS_RADIUS = 0.2      # metres: PointNav geodesic success radius
ARM_HEIGHT = 0.8          # metres: reachability height threshold
CAMERA_HEIGHT = 0.35      # metres: eye height of the desk robot
WALL_HEIGHT = 1.5         # metres
SURFACE_HEIGHT = 0.5      # metres: tabletop elevation

# Grid cell types.
FREE, WALL, SURFACE = 0, 1, 2

# A roster of everyday category names; index == category id. Configs with
# category_count <= len(ROSTER) use a prefix of this list.
CATEGORY_NAMES = [
    "mug", "laptop", "book", "alarm clock", "bowl", "garbage can",
    "spray bottle", "vase", "apple", "basketball", "house plant", "television",
    "pillow", "remote", "plate", "candle", "pot", "pan", "cup", "kettle",
    "toaster", "statue", "box", "watch", "pencil", "pen", "lamp", "fork",
    "spoon", "knife", "bottle", "dumbbell", "teddy bear", "soap", "sponge",
    "towel", "tissue box", "key chain", "wallet", "cloth", "boots", "footstool",
    "cd", "phone", "credit card", "newspaper", "stool", "ottoman", "safe",
    "drawer", "cabinet", "fridge",
]


def category_name(c: int) -> str:
    if 0 <= c < len(CATEGORY_NAMES):
        return CATEGORY_NAMES[c]
    return f"object {c}"


def category_openable(c: int) -> bool:
    """Openable categories carry an open/closed state and cannot be picked up."""
    return c % 5 == 3


def category_height(c: int) -> float:
    """Intrinsic object height in metres, deterministic per category."""
    return 0.1 + 0.9 * ((c * 7919) % 13) / 13.0


def category_albedo(c: int, count: int) -> tuple[float, float, float]:
    """Pure saturated hue, evenly spaced so every category is distinct."""
    h = (c % max(count, 1)) / max(count, 1) * 6.0
    i = int(h) % 6
    f = h - int(h)
    # HSV(h, 1, 1) -> RGB
    p, q, t = 0.0, 1.0 - f, f
    return [(1.0, t, p), (q, 1.0, p), (p, 1.0, t),
            (p, q, 1.0), (t, p, 1.0), (1.0, p, q)][i]


@dataclass
class ObjectInstance:
    """One placed object. `height` is the top elevation used for reach checks."""

    id: int
    category: int
    position: tuple[float, float]   # metres (x, y), cell centre
    height: float                   # metres, base elevation + intrinsic height
    visible_radius: float           # metres, horizontal half-extent

    def cell(self) -> tuple[int, int]:
        return pos_to_cell(self.position)

    def base_elevation(self) -> float:
        return self.height - category_height(self.category)


@dataclass
class SceneSpec:
    """Immutable description of one generated room."""

    seed: int
    grid: np.ndarray                 # int8 (rows, cols): FREE/WALL/SURFACE
    objects: list[ObjectInstance]
    openables: dict[int, bool]       # object id -> is_open
    category_count: int

    def copy(self) -> "SceneSpec":
        return SceneSpec(
            seed=self.seed,
            grid=self.grid.copy(),
            objects=[ObjectInstance(o.id, o.category, o.position, o.height, o.visible_radius)
                     for o in self.objects],
            openables=dict(self.openables),
            category_count=self.category_count,
        )

    def object_by_id(self, oid: int) -> ObjectInstance:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"no object with id {oid}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "grid": self.grid.tolist(),
            "objects": [asdict(o) for o in self.objects],
            "openables": {str(k): v for k, v in sorted(self.openables.items())},
            "category_count": self.category_count,
        }

    def to_json_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), separators=(",", ":")).encode()

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        return SceneSpec(
            seed=d["seed"],
            grid=np.asarray(d["grid"], dtype=np.int8),
            objects=[ObjectInstance(o["id"], o["category"], tuple(o["position"]),
                                    o["height"], o["visible_radius"])
                     for o in d["objects"]],
            openables={int(k): bool(v) for k, v in d["openables"].items()},
            category_count=d["category_count"],
        )


def cell_center(cell: tuple[int, int]) -> tuple[float, float]:
    i, j = cell
    return ((j + 0.5) * CELL_SIZE, (i + 0.5) * CELL_SIZE)


def pos_to_cell(pos: tuple[float, float]) -> tuple[int, int]:
    x, y = pos
    return (int(math.floor(y / CELL_SIZE)), int(math.floor(x / CELL_SIZE)))


def snap_heading(heading: int) -> int:
    """Nearest cardinal direction; 30-degree headings never tie."""
    return int(round(heading / 90.0)) * 90 % 360


# Cardinal direction -> (di, dj) in grid terms. Heading 0 points along +x
# (increasing column); heading 90 along +y (increasing row).
CARDINAL_DELTAS = {0: (0, 1), 90: (1, 0), 180: (0, -1), 270: (-1, 0)}


@dataclass
class AgentPose:
    position: tuple[float, float]   # metres, always a cell centre
    heading: int                    # degrees in {0, 30, ..., 330}
    horizon: int                    # degrees in HORIZONS

    def cell(self) -> tuple[int, int]:
        return pos_to_cell(self.position)

    def validate(self, grid: np.ndarray) -> None:
        i, j = self.cell()
        if not (0 <= i < grid.shape[0] and 0 <= j < grid.shape[1]) or grid[i, j] != FREE:
            raise ValueError(f"pose cell {(i, j)} is not free")
        if self.heading % ROT_STEP != 0 or not (0 <= self.heading < 360):
            raise ValueError(f"heading {self.heading} off the {ROT_STEP}-degree lattice")
        if self.horizon not in HORIZONS:
            raise ValueError(f"horizon {self.horizon} not in {HORIZONS}")

    def to_dict(self) -> dict:
        return {"position": list(self.position), "heading": self.heading,
                "horizon": self.horizon}

    @staticmethod
    def from_dict(d: dict) -> "AgentPose":
        return AgentPose(tuple(d["position"]), d["heading"], d["horizon"])


# ---------------------------------------------------------------------------
# Tasks

OBJECTNAV, POINTNAV, REARRANGE = "objectnav", "pointnav", "rearrange"


@dataclass
class TaskSpec:
    kind: str
    max_steps: int
    goal_category: Optional[int] = None            # ObjectNav
    goal_polar: Optional[tuple[float, float]] = None  # PointNav: (dist m, angle rad) at start
    goal_position: Optional[tuple[float, float]] = None  # PointNav absolute target
    goal_scene: Optional[SceneSpec] = None          # Rearrange "as it should be"

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "max_steps": self.max_steps}
        if self.goal_category is not None:
            d["goal_category"] = self.goal_category
        if self.goal_polar is not None:
            d["goal_polar"] = list(self.goal_polar)
        if self.goal_position is not None:
            d["goal_position"] = list(self.goal_position)
        return d


# ---------------------------------------------------------------------------
# Actions

@dataclass(frozen=True)
class Action:
    name: str
    category: Optional[int] = None   # for PickUp/Open/Close

    def label(self) -> str:
        if self.category is None:
            return self.name
        return f"{self.name}[{category_name(self.category)}]"


MOVE_AHEAD = Action("MoveAhead")
ROTATE_RIGHT = Action("RotateRight")
ROTATE_LEFT = Action("RotateLeft")
LOOK_UP = Action("LookUp")
LOOK_DOWN = Action("LookDown")
DONE = Action("Done")
PLACE = Action("Place")

NAV_ACTIONS = [MOVE_AHEAD, ROTATE_RIGHT, ROTATE_LEFT, LOOK_UP, LOOK_DOWN]


class ActionSpace:
    """Ordered action list for a task kind; index <-> Action both ways."""

    def __init__(self, actions: list[Action]):
        self.actions = list(actions)
        self._index = {a: i for i, a in enumerate(self.actions)}

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, idx: int) -> Action:
        return self.actions[idx]

    def index(self, action: Action) -> int:
        return self._index[action]

    def labels(self) -> list[str]:
        return [a.label() for a in self.actions]

    @staticmethod
    def for_task(kind: str, category_count: int = 0) -> "ActionSpace":
        if kind == OBJECTNAV:
            return ActionSpace(NAV_ACTIONS + [DONE])
        if kind == POINTNAV:
            return ActionSpace([MOVE_AHEAD, ROTATE_RIGHT, ROTATE_LEFT, DONE])
        if kind == REARRANGE:
            acts = list(NAV_ACTIONS)
            acts += [Action("PickUp", c) for c in range(category_count)
                     if not category_openable(c)]
            acts.append(PLACE)
            acts += [Action("Open", c) for c in range(category_count) if category_openable(c)]
            acts += [Action("Close", c) for c in range(category_count) if category_openable(c)]
            acts.append(DONE)
            return ActionSpace(acts)
        raise ValueError(f"unknown task kind {kind!r}")


# ---------------------------------------------------------------------------
# Observations and step results

@dataclass
class Observation:
    """What the agent sees each step.

    `scene`, `pose` and `goal_scene` are privileged handles consumed by
    oracle code and the state-linear stub backbone; they are never
    serialized with the observation.
    """

    image: np.ndarray                       # float32 (3, 64, 64) in [0, 1]
    goal_category: Optional[int] = None
    goal_polar: Optional[tuple[float, float]] = None  # relative, current pose
    goal_image: Optional[np.ndarray] = None  # rearrange: goal scene, same pose
    prev_action: Optional[int] = None        # None at episode start
    scene: Optional[SceneSpec] = None
    pose: Optional[AgentPose] = None
    goal_scene: Optional[SceneSpec] = None
    semantic: Optional[np.ndarray] = None    # per-pixel object id of `image`
    goal_semantic: Optional[np.ndarray] = None


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class EpisodeDoneError(RuntimeError):
    """Raised when step() is called on a terminated episode."""


@dataclass
class ProbeLabels:
    """Ground-truth targets for the four probe tasks, one frame."""

    presence: np.ndarray       # uint8 (C,)
    localization: np.ndarray   # uint8 (C, 3, 3) over image thirds
    free_space: int            # 0..10; 10 means >= 10 clear steps
    reachability: np.ndarray   # int8 (C,): 0 absent, 1 visible, 2 reachable


REACH_ABSENT, REACH_VISIBLE, REACH_REACHABLE = 0, 1, 2
FREE_SPACE_CLASSES = 11
