import numpy as np

from conftest import make_scene, pose_at
from embnav.sim.render import object_visible, ray_clear, render, render_semantic
from embnav.sim.types import category_albedo


def test_empty_view_has_no_object_pixels():
    scene = make_scene(objects=[(0, 2, (3, 5))])
    rgb, sem = render(scene, pose_at((3, 1), heading=180))  # object is behind
    assert (sem == -1).all()
    albedo = np.array(category_albedo(2, 12), dtype=np.float32)
    exact = np.all(rgb.transpose(1, 2, 0) == albedo, axis=-1)
    assert not exact.any()


def test_render_bitwise_deterministic():
    scene = make_scene(walls=[(2, 4)], surfaces=[(5, 2)],
                       objects=[(0, 2, (3, 5)), (1, 7, (4, 1))])
    pose = pose_at((3, 1), heading=0)
    rgb1, sem1 = render(scene, pose)
    rgb2, sem2 = render(scene, pose)
    assert rgb1.tobytes() == rgb2.tobytes()
    assert sem1.tobytes() == sem2.tobytes()


def test_object_one_meter_ahead_fills_center_third():
    scene = make_scene(objects=[(0, 2, (3, 5))])
    rgb, sem = render(scene, pose_at((3, 1), heading=0))   # 1.0 m dead ahead
    center = sem[:, 21:43]
    assert (center == 0).any()
    rows, cols = np.nonzero(sem == 0)
    albedo = np.array(category_albedo(2, 12), dtype=np.float32)
    pix = rgb.transpose(1, 2, 0)[rows[0], cols[0]]
    assert np.array_equal(pix, albedo)
    # nothing outside the center third belongs to the object
    assert cols.min() >= 21 and cols.max() <= 42


def test_semantic_only_path_matches_full_render():
    scene = make_scene(walls=[(1, 1)], objects=[(0, 2, (3, 5)), (1, 5, (5, 5))])
    pose = pose_at((3, 2), heading=0)
    _, sem = render(scene, pose)
    assert np.array_equal(sem, render_semantic(scene, pose))


def test_wall_occludes_object():
    blocked = make_scene(walls=[(3, 3)], objects=[(0, 2, (3, 5))])
    _, sem = render(blocked, pose_at((3, 1), heading=0))
    assert not (sem == 0).any()
    clear = make_scene(objects=[(0, 2, (3, 5))])
    _, sem = render(clear, pose_at((3, 1), heading=0))
    assert (sem == 0).any()


def test_open_state_changes_appearance_not_identity():
    closed = make_scene(objects=[(0, 3, (3, 3))])
    opened = make_scene(objects=[(0, 3, (3, 3))], open_state={0: True})
    pose = pose_at((3, 1), heading=0)
    rgb_c, sem_c = render(closed, pose)
    rgb_o, sem_o = render(opened, pose)
    assert np.array_equal(sem_c, sem_o)
    assert rgb_c.tobytes() != rgb_o.tobytes()


def test_object_visible_respects_fov_and_rays():
    scene = make_scene(walls=[(3, 4)], objects=[(0, 2, (3, 3)), (1, 2, (3, 5))])
    pose = pose_at((3, 1), heading=0)
    assert object_visible(scene, pose, scene.object_by_id(0))
    assert not object_visible(scene, pose, scene.object_by_id(1))   # walled off


def test_object_behind_not_visible():
    scene = make_scene(objects=[(0, 2, (3, 3))])
    assert not object_visible(scene, pose_at((3, 5), heading=0),
                              scene.object_by_id(0))


def test_ray_clear_blocked_by_bounds():
    scene = make_scene()
    assert not ray_clear(scene.grid, (0.125, 0.125), (-0.5, 0.125))
    assert ray_clear(scene.grid, (0.125, 0.125), (1.125, 0.125))
