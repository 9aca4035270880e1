import math

import pytest

from conftest import make_scene
from embnav.sim.diff import rearrangement_diff, scene_energy
from oracles import diff_brute


def test_identical_scenes_empty_diff():
    a = make_scene(objects=[(0, 1, (2, 2)), (1, 3, (4, 4))])
    b = make_scene(objects=[(0, 1, (2, 2)), (1, 3, (4, 4))])
    assert rearrangement_diff(a, b).empty()


def test_open_state_mismatch_flags_exactly_that_object():
    a = make_scene(objects=[(0, 3, (2, 2)), (1, 1, (4, 4)), (2, 8, (6, 6))])
    b = make_scene(objects=[(0, 3, (2, 2)), (1, 1, (4, 4)), (2, 8, (6, 6))],
                   open_state={0: True})
    diff = rearrangement_diff(a, b)
    assert diff.ids() == {0}
    assert diff.entries[0].kind == "openable"


def test_half_meter_move_detected_tenth_ignored():
    base = make_scene(objects=[(0, 1, (2, 2))])
    moved = base.copy()
    moved.objects[0].position = (base.objects[0].position[0] + 0.5,
                                 base.objects[0].position[1])
    assert rearrangement_diff(moved, base).ids() == {0}
    nudged = base.copy()
    nudged.objects[0].position = (base.objects[0].position[0] + 0.1,
                                  base.objects[0].position[1])
    assert rearrangement_diff(nudged, base).empty()


def test_mismatched_object_sets_rejected():
    a = make_scene(objects=[(0, 1, (2, 2))])
    b = make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 4))])
    with pytest.raises(ValueError):
        rearrangement_diff(a, b)


def test_held_object_always_misplaced_with_capped_energy():
    goal = make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 4))])
    cur = make_scene(objects=[(1, 2, (4, 4))])   # object 0 is in hand
    diff = rearrangement_diff(cur, goal, held={0})
    assert diff.ids() == {0}
    assert math.isinf(diff.entries[0].displacement)
    assert scene_energy(diff) == 2.0


def test_energy_caps_long_moves():
    base = make_scene(rows=7, cols=17, objects=[(0, 1, (3, 1))])
    far = base.copy()
    far.objects[0].position = (base.objects[0].position[0] + 3.5,
                               base.objects[0].position[1])
    diff = rearrangement_diff(far, base)
    assert scene_energy(diff) == 2.0
    near = base.copy()
    near.objects[0].position = (base.objects[0].position[0] + 0.75,
                                base.objects[0].position[1])
    assert scene_energy(rearrangement_diff(near, base)) == pytest.approx(0.75)


def test_entries_sorted_and_stable():
    a = make_scene(objects=[(2, 3, (2, 2)), (0, 1, (4, 4)), (1, 3, (6, 2))])
    b = make_scene(objects=[(2, 3, (2, 4)), (0, 1, (4, 6)), (1, 3, (6, 2))],
                   open_state={2: True, 1: True})
    diff = rearrangement_diff(a, b)
    keys = [(e.object_id, e.kind) for e in diff.entries]
    assert keys == sorted(keys)


def test_diff_agrees_with_brute_rederivation():
    a = make_scene(objects=[(0, 3, (2, 2)), (1, 1, (4, 4)), (2, 8, (0, 6)),
                            (3, 13, (6, 6))])
    b = make_scene(objects=[(0, 3, (2, 5)), (1, 1, (4, 4)), (2, 8, (5, 0)),
                            (3, 13, (6, 6))],
                   open_state={0: True, 3: True})
    diff = rearrangement_diff(a, b)
    ids, energy = diff_brute(a, b)
    assert diff.ids() == ids
    assert scene_energy(diff) == pytest.approx(energy)
