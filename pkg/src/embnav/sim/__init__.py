"""Deterministic desk-scale room simulator."""

from .diff import DiffEntry, DiffReport, rearrangement_diff, scene_energy
from .env import Simulator, TaskParams, TaskSampler, STEP_PENALTY, SUCCESS_REWARD
from .episode_io import episode_line, read_episodes, write_episodes
from .generate import SimConfig, generate_scene, walkable_mask, connected_free
from .labels import free_space_class, ground_truth_labels
from .oracle import (
    bfs_distances, expert_action, geodesic_to_cells, interaction_cells,
    qualifying_cells, shortest_path_length,
)
from .render import (
    IMG, object_visible, ray_clear, render, render_semantic, wrap_angle,
)
from .types import (
    ARM_HEIGHT, CAMERA_HEIGHT, CELL_SIZE, FREE, FREE_SPACE_CLASSES, HFOV_DEG,
    HORIZONS, INTERACT_RANGE, SUCCESS_RADIUS, SURFACE, WALL,
    Action, ActionSpace, AgentPose, EpisodeDoneError, Observation, ObjectInstance,
    ProbeLabels, SceneSpec, StepResult, TaskSpec,
    REACH_ABSENT, REACH_REACHABLE, REACH_VISIBLE,
    OBJECTNAV, POINTNAV, REARRANGE,
    category_albedo, category_height, category_name, category_openable,
    cell_center, pos_to_cell, snap_heading,
    DONE, LOOK_DOWN, LOOK_UP, MOVE_AHEAD, NAV_ACTIONS, PLACE, ROTATE_LEFT,
    ROTATE_RIGHT, CATEGORY_NAMES,
)

__all__ = [n for n in dir() if not n.startswith("_")]
