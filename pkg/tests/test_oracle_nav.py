import math

import numpy as np
import pytest

from conftest import make_scene, pose_at
from embnav.sim.env import Simulator, TaskParams, TaskSampler
from embnav.sim.generate import SimConfig, generate_scene, walkable_mask
from embnav.sim.oracle import (
    bfs_distances, expert_action, qualifying_cells, shortest_path_length,
)
from embnav.sim.types import Action, TaskSpec
from oracles import dijkstra_grid, qualifying_brute


def test_adjacent_qualifying_cell_costs_one_step():
    scene = make_scene(objects=[(0, 2, (3, 6))])
    # (3,2) is exactly 1.0 m from the object, the nearest qualifying cell
    assert shortest_path_length(scene, pose_at((3, 1)), 2) == pytest.approx(0.25)


def test_inside_success_region_costs_zero():
    scene = make_scene(objects=[(0, 2, (3, 6))])
    assert shortest_path_length(scene, pose_at((3, 5)), 2) == 0.0


def test_walled_off_goal_reports_unreachable():
    scene = make_scene(walls=[(1, 3), (3, 1), (1, 1), (1, 2), (3, 2), (3, 3),
                              (2, 1), (2, 3)],
                       objects=[(0, 2, (2, 2))])
    assert shortest_path_length(scene, pose_at((5, 5)), 2) == math.inf


def test_wall_gap_matches_dijkstra_everywhere():
    walls = [(3, j) for j in range(7) if j != 4]
    scene = make_scene(walls=walls, objects=[(0, 2, (5, 1))])
    mask = walkable_mask(scene.grid, {o.cell() for o in scene.objects})
    qcells = qualifying_cells(scene, 2)
    ref = dijkstra_grid(mask, sorted(qcells))
    for i in range(7):
        for j in range(7):
            if not mask[i, j]:
                continue
            got = shortest_path_length(scene, pose_at((i, j)), 2)
            want = ref[i, j] if ref[i, j] >= 0 else math.inf
            assert got == pytest.approx(want), (i, j)


def test_bfs_equals_dijkstra_on_generated_scenes():
    cfg = SimConfig(grid_height=9, grid_width=9, object_count=5,
                    category_count=6, wall_count=3, surface_count=1)
    for seed in range(6):
        scene = generate_scene(seed, cfg)
        mask = walkable_mask(scene.grid, {o.cell() for o in scene.objects})
        cat = scene.objects[0].category
        qcells = qualifying_cells(scene, cat)
        if not qcells:
            continue
        bfs = bfs_distances(mask, sorted(qcells)).astype(np.float64) * 0.25
        bfs[bfs < 0] = -1.0
        dij = dijkstra_grid(mask, sorted(qcells))
        assert np.allclose(np.where(bfs < 0, -1.0, bfs), dij)


def test_qualifying_cells_match_brute_rederivation():
    cfg = SimConfig(grid_height=7, grid_width=7, object_count=4,
                    category_count=5, wall_count=2, surface_count=1)
    for seed in range(8):
        scene = generate_scene(seed, cfg)
        for cat in {o.category for o in scene.objects}:
            assert qualifying_cells(scene, cat) == qualifying_brute(scene, cat)


def test_expert_emits_done_in_success_region():
    scene = make_scene(objects=[(0, 2, (3, 3))])
    sim = Simulator(scene, TaskSpec(kind="objectnav", max_steps=20,
                                    goal_category=2),
                    pose_at((3, 2), heading=0), obs_mode="state")
    assert expert_action(sim).name == "Done"


def test_target_directly_behind_rotates_right():
    scene = make_scene(objects=[(0, 2, (3, 1))])
    sim = Simulator(scene, TaskSpec(kind="objectnav", max_steps=20,
                                    goal_category=2),
                    pose_at((3, 6), heading=0), obs_mode="state")
    act = expert_action(sim)
    assert act.name == "RotateRight"


def test_misplaced_object_adjacent_gets_picked_up():
    goal = make_scene(objects=[(0, 6, (5, 5)), (1, 2, (0, 0))])
    cur = make_scene(objects=[(0, 6, (2, 3)), (1, 2, (0, 0))])
    sim = Simulator(cur, TaskSpec(kind="rearrange", max_steps=40,
                                  goal_scene=goal),
                    pose_at((2, 2), heading=0), obs_mode="state")
    act = expert_action(sim)
    assert act.name == "PickUp"
    assert act.category == 6


def test_expert_solves_each_task_kind():
    for kind, extra in (("objectnav", {}), ("pointnav", {}),
                        ("rearrange", {"shuffle_count": 1})):
        cfg = SimConfig(grid_height=7, grid_width=7, object_count=3,
                        category_count=4, wall_count=1, surface_count=1,
                        max_steps=80)
        sampler = TaskSampler(cfg, TaskParams(kind=kind, **extra),
                              obs_mode="state")
        for seed in range(40, 52):
            sim = sampler.build(seed)
            while not sim.done:
                sim.step(expert_action(sim))
            assert sim.success, (kind, seed)


def test_expert_path_length_is_geodesic():
    cfg = SimConfig(grid_height=9, grid_width=9, object_count=4,
                    category_count=4, wall_count=2, max_steps=80)
    sampler = TaskSampler(cfg, TaskParams(kind="objectnav"), obs_mode="state")
    for seed in range(60, 72):
        sim = sampler.build(seed)
        shortest = sim.start_geodesic
        moves = 0
        while not sim.done:
            act = expert_action(sim)
            res = sim.step(act)
            if act.name == "MoveAhead" and not res.info["collision"]:
                moves += 1
        assert sim.success
        assert moves * 0.25 == pytest.approx(shortest)
