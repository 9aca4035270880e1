import json

import numpy as np
import pytest

from conftest import make_scene, pose_at
from embnav.sim.env import Simulator, TaskParams, TaskSampler
from embnav.sim.generate import SimConfig, generate_scene, walkable_mask
from embnav.sim.episode_io import episode_line, read_episodes, write_episodes
from embnav.sim.types import (
    Action, ActionSpace, EpisodeDoneError, SceneSpec, TaskSpec, cell_center,
)
from oracles import dijkstra_grid

STEP_PENALTY = -0.01
SUCCESS_REWARD = 10.0


def objectnav_sim(scene, pose, goal_category, max_steps=30):
    task = TaskSpec(kind="objectnav", max_steps=max_steps,
                    goal_category=goal_category)
    return Simulator(scene, task, pose, obs_mode="state")


# ---------------------------------------------------------------------------
# Scene generation

def test_two_objects_land_on_free_cells():
    cfg = SimConfig(grid_height=5, grid_width=5, object_count=2,
                    category_count=2, wall_count=0, surface_count=0)
    scene = generate_scene(0, cfg)
    assert len(scene.objects) == 2
    for o in scene.objects:
        assert scene.grid[o.cell()] != 1    # never on a wall
    assert len({o.cell() for o in scene.objects}) == 2


def test_generation_bit_identical():
    cfg = SimConfig(grid_height=7, grid_width=7, object_count=4,
                    category_count=6)
    assert generate_scene(3, cfg).to_json_bytes() == generate_scene(3, cfg).to_json_bytes()


def test_seed7_default_world_fully_connected():
    cfg = SimConfig(grid_height=11, grid_width=11, object_count=12,
                    category_count=12)
    scene = generate_scene(7, cfg)
    mask = walkable_mask(scene.grid, {o.cell() for o in scene.objects})
    for o in scene.objects:
        i, j = o.cell()
        adjacent = [(i + di, j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                    if 0 <= i + di < 11 and 0 <= j + dj < 11 and mask[i + di, j + dj]]
        assert adjacent, f"object {o.id} is walled in"
        dist = dijkstra_grid(mask, adjacent)
        # every walkable cell reaches this object
        assert (dist[mask] >= 0.0).all()


def test_object_count_cap_rejected():
    with pytest.raises(Exception):
        SimConfig(grid_height=5, grid_width=5, object_count=20,
                  category_count=2).validate()


def test_minimum_grid_enforced():
    with pytest.raises(Exception):
        SimConfig(grid_height=4, grid_width=5, object_count=1,
                  category_count=2).validate()


# ---------------------------------------------------------------------------
# Movement and termination

def test_wall_blocks_moveahead():
    scene = make_scene(walls=[(3, 2)], objects=[(0, 1, (5, 5))])
    sim = objectnav_sim(scene, pose_at((3, 1), heading=0), 1)
    res = sim.step(Action("MoveAhead"))
    assert res.info["collision"] is True
    assert sim.pose.cell() == (3, 1)
    assert res.reward == pytest.approx(STEP_PENALTY)


def test_moveahead_advances_one_cell():
    scene = make_scene(objects=[(0, 1, (6, 6))])
    sim = objectnav_sim(scene, pose_at((3, 1), heading=0), 1)
    sim.step(Action("MoveAhead"))
    assert sim.pose.cell() == (3, 2)
    assert sim.pose.position == cell_center((3, 2))


def test_rotation_steps_and_wraps():
    scene = make_scene(objects=[(0, 1, (6, 6))])
    sim = objectnav_sim(scene, pose_at((2, 2), heading=0), 1)
    sim.step(Action("RotateLeft"))
    assert sim.pose.heading == 30
    for _ in range(12):
        sim.step(Action("RotateRight"))
    assert sim.pose.heading == 30


def test_look_clamps_horizon():
    scene = make_scene(objects=[(0, 1, (6, 6))])
    sim = objectnav_sim(scene, pose_at((2, 2), heading=0), 1)
    sim.step(Action("LookUp"))
    assert sim.pose.horizon == 30
    sim.step(Action("LookUp"))
    assert sim.pose.horizon == 30           # clamped at the top
    sim.step(Action("LookDown"))
    sim.step(Action("LookDown"))
    sim.step(Action("LookDown"))
    assert sim.pose.horizon == -30          # clamped at the bottom


def test_done_succeeds_half_meter_unoccluded():
    scene = make_scene(objects=[(0, 1, (3, 3))])
    sim = objectnav_sim(scene, pose_at((3, 1), heading=0), 1)
    res = sim.step(Action("Done"))
    assert res.done
    assert sim.success is True
    assert res.reward == pytest.approx(STEP_PENALTY + SUCCESS_REWARD)


def test_done_fails_beyond_interact_range():
    scene = make_scene(rows=7, cols=9, objects=[(0, 1, (3, 7))])
    sim = objectnav_sim(scene, pose_at((3, 0), heading=0), 1)
    res = sim.step(Action("Done"))
    assert res.done
    assert sim.success is False


def test_step_after_done_raises():
    scene = make_scene(objects=[(0, 1, (3, 3))])
    sim = objectnav_sim(scene, pose_at((3, 1), heading=0), 1)
    sim.step(Action("Done"))
    with pytest.raises(EpisodeDoneError):
        sim.step(Action("MoveAhead"))


def test_timeout_terminates_without_success():
    scene = make_scene(objects=[(0, 1, (3, 3))])
    sim = objectnav_sim(scene, pose_at((5, 5), heading=0), 1, max_steps=3)
    for _ in range(2):
        res = sim.step(Action("RotateRight"))
        assert not res.done
    res = sim.step(Action("RotateRight"))
    assert res.done
    assert sim.success is False


# ---------------------------------------------------------------------------
# Rearrangement interactions

def rearrange_pair():
    """Current scene has object 0 (category 1) at (2,3); goal wants (4,5)."""
    goal = make_scene(objects=[(0, 1, (4, 5)), (1, 3, (0, 6))])
    cur = make_scene(objects=[(0, 1, (2, 3)), (1, 3, (0, 6))])
    return cur, goal


def rearrange_sim(cur, goal, pose, max_steps=40):
    task = TaskSpec(kind="rearrange", max_steps=max_steps, goal_scene=goal)
    return Simulator(cur, task, pose, obs_mode="state")


def test_pickup_removes_object_and_holds_it():
    cur, goal = rearrange_pair()
    sim = rearrange_sim(cur, goal, pose_at((2, 2), heading=0))
    res = sim.step(Action("PickUp", 1))
    assert sim.held == 0
    assert all(o.id != 0 for o in sim.scene.objects)
    assert not res.done


def test_pickup_out_of_range_is_noop():
    cur, goal = rearrange_pair()
    sim = rearrange_sim(cur, goal, pose_at((6, 0), heading=0))
    sim.step(Action("PickUp", 1))
    assert sim.held is None
    assert any(o.id == 0 for o in sim.scene.objects)


def test_place_drops_to_faced_cell():
    cur, goal = rearrange_pair()
    sim = rearrange_sim(cur, goal, pose_at((2, 2), heading=0))
    sim.step(Action("PickUp", 1))
    sim.step(Action("Place"))
    assert sim.held is None
    obj = sim.scene.object_by_id(0)
    assert obj.cell() == (2, 3)


def test_place_onto_surface_raises_object():
    from embnav.sim.types import category_height
    goal = make_scene(surfaces=[(2, 3)], objects=[(0, 1, (4, 5))])
    cur = make_scene(surfaces=[(2, 3)], objects=[(0, 1, (2, 1))])
    sim = rearrange_sim(cur, goal, pose_at((2, 0), heading=0))
    sim.step(Action("PickUp", 1))
    assert sim.held == 0
    sim.step(Action("MoveAhead"))
    sim.step(Action("MoveAhead"))
    assert sim.pose.cell() == (2, 2)        # now facing the surface cell
    sim.step(Action("Place"))
    obj = sim.scene.object_by_id(0)
    assert obj.cell() == (2, 3)
    assert obj.height == pytest.approx(0.5 + category_height(1))


def test_open_and_close_toggle_state():
    goal = make_scene(objects=[(0, 3, (2, 3)), (1, 1, (6, 6))],
                      open_state={0: True})
    cur = make_scene(objects=[(0, 3, (2, 3)), (1, 1, (6, 6))])
    sim = rearrange_sim(cur, goal, pose_at((2, 2), heading=0))
    assert sim.scene.openables[0] is False
    sim.step(Action("Open", 3))
    assert sim.scene.openables[0] is True
    sim.step(Action("Close", 3))
    assert sim.scene.openables[0] is False


def test_rearrange_success_when_diff_cleared():
    cur, goal = rearrange_pair()
    sim = rearrange_sim(cur, goal, pose_at((2, 2), heading=0))
    sim.step(Action("PickUp", 1))
    # carry to (4,4) and face (4,5): heading 90 walks down rows, 0 walks east
    path = [Action("RotateLeft"), Action("RotateLeft"), Action("RotateLeft"),
            Action("MoveAhead"), Action("MoveAhead"),
            Action("RotateRight"), Action("RotateRight"), Action("RotateRight"),
            Action("MoveAhead"), Action("MoveAhead")]
    for a in path:
        sim.step(a)
    assert sim.pose.cell() == (4, 4)
    sim.step(Action("Place"))
    res = sim.step(Action("Done"))
    assert res.done
    assert sim.success is True


# ---------------------------------------------------------------------------
# Reward accounting

def test_reward_decomposes_into_penalty_shaping_success():
    cfg = SimConfig(grid_height=7, grid_width=7, object_count=3,
                    category_count=4, wall_count=1, surface_count=0,
                    max_steps=50)
    sampler = TaskSampler(cfg, TaskParams(kind="objectnav"), obs_mode="state")
    from embnav.sim.oracle import expert_action
    for seed in (11, 12, 13):
        sim = sampler.build(seed)
        prev_geo = sim.start_geodesic
        while not sim.done:
            res = sim.step(expert_action(sim))
            expected = STEP_PENALTY + (prev_geo - res.info["geodesic"])
            if res.done and sim.success:
                expected += SUCCESS_REWARD
            assert res.reward == pytest.approx(expected, abs=1e-12)
            prev_geo = res.info["geodesic"]


# ---------------------------------------------------------------------------
# Serialization

def test_scene_json_round_trip():
    cfg = SimConfig(grid_height=7, grid_width=7, object_count=4, category_count=6)
    scene = generate_scene(9, cfg)
    again = SceneSpec.from_dict(json.loads(scene.to_json_bytes()))
    assert again.to_json_bytes() == scene.to_json_bytes()


def test_episode_lines_round_trip(tmp_path):
    lines = [episode_line(seed=5, config={"grid": 5}, task={"kind": "objectnav"},
                          actions=[0, 1, 2], success=True, spl=0.75,
                          path_length=1.25)]
    path = tmp_path / "episodes.jsonl"
    write_episodes(str(path), lines)
    back = read_episodes(str(path))
    assert back[0]["seed"] == 5
    assert back[0]["actions"] == [0, 1, 2]
    assert back[0]["spl"] == 0.75


def test_snapshot_restore_identical_future():
    cfg = SimConfig(grid_height=7, grid_width=7, object_count=3,
                    category_count=4, max_steps=60)
    sampler = TaskSampler(cfg, TaskParams(kind="rearrange", shuffle_count=1),
                          obs_mode="state")
    from embnav.sim.oracle import expert_action
    sim = sampler.build(21)
    sim.step(expert_action(sim))
    snap = sim.snapshot()
    clone = sampler.build(21)
    clone.restore(snap)
    while not sim.done:
        a = expert_action(sim)
        r1 = sim.step(a)
        r2 = clone.step(a)
        assert r1.reward == r2.reward
        assert clone.pose == sim.pose
    assert clone.done and clone.success == sim.success