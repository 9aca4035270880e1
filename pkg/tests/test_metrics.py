import math

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_scene
from embnav.metrics import (
    EpisodeRecord, METRIC_COLUMNS, goal_distance, metric_row,
    rearrangement_metrics, soft_spl, spl, success_rate,
)
from embnav.sim.diff import rearrangement_diff
from oracles import rearrangement_brute, softspl_brute, spl_brute


def nav_record(success=True, shortest=1.0, agent=1.0, d0=1.0, dT=0.0):
    return EpisodeRecord(success=success, shortest_path=shortest,
                         agent_path=agent, initial_geodesic=d0,
                         final_geodesic=dT)


# ---------------------------------------------------------------------------
# SPL

def test_spl_optimal_success_is_one():
    assert spl([nav_record(True, 2.0, 2.0)]) == 1.0


def test_spl_failure_is_zero():
    assert spl([nav_record(False, 1.0, 5.0)]) == 0.0


def test_spl_two_episode_mean():
    recs = [nav_record(True, 1.0, 2.0), nav_record(True, 1.0, 1.0)]
    assert spl(recs) == pytest.approx(0.75)


def test_spl_zero_length_success_counts_full():
    assert spl([nav_record(True, 0.0, 0.0, d0=1.0, dT=0.0)]) == 1.0


def test_negative_path_rejected():
    with pytest.raises(ValueError):
        spl([nav_record(True, -1.0, 1.0)])


def test_empty_record_set_rejected():
    with pytest.raises(ValueError):
        spl([])


# ---------------------------------------------------------------------------
# SoftSPL

def test_softspl_full_progress_optimal_path():
    assert soft_spl([nav_record(True, 1.0, 1.0, d0=1.0, dT=0.0)]) == 1.0


def test_softspl_no_progress_is_zero():
    assert soft_spl([nav_record(False, 1.0, 0.0, d0=1.0, dT=1.0)]) == 0.0


def test_softspl_partial_progress():
    # d0=4, dT=1, agent path equals shortest: 0.75 exactly
    assert soft_spl([nav_record(False, 3.0, 3.0, d0=4.0, dT=1.0)]) == pytest.approx(0.75)


def test_softspl_requires_positive_initial():
    with pytest.raises(ValueError):
        soft_spl([nav_record(True, 1.0, 1.0, d0=0.0, dT=0.0)])


# ---------------------------------------------------------------------------
# SR / goal distance

def test_success_rate_all_none_mixed():
    assert success_rate([nav_record(True), nav_record(True)]) == 1.0
    assert success_rate([nav_record(False), nav_record(False)]) == 0.0
    assert success_rate([nav_record(True), nav_record(False)]) == 0.5


def test_goal_distance_mean():
    recs = [nav_record(dT=0.5), nav_record(dT=1.5)]
    assert goal_distance(recs) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Rearrangement

def rearrange_record(cur_cells, goal_cells, open_cur=None, open_goal=None,
                     success=None):
    objs_goal = [(i, c, cell) for i, (c, cell) in enumerate(goal_cells)]
    objs_cur = [(i, c, cell) for i, (c, cell) in enumerate(cur_cells)]
    goal = make_scene(objects=objs_goal, open_state=open_goal)
    cur = make_scene(objects=objs_cur, open_state=open_cur)
    start = rearrangement_diff(cur, goal)
    return cur, goal, start


def test_fix_everything_scores_one():
    goal = make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 4))])
    start_scene = make_scene(objects=[(0, 1, (2, 5)), (1, 2, (4, 4))])
    start = rearrangement_diff(start_scene, goal)
    end = rearrangement_diff(goal, goal)
    rec = EpisodeRecord(True, 1.0, 1.0, 1.0, 0.0, start_diff=start,
                        end_diff=end, newly_disturbed=0)
    fs, sr, e, m = rearrangement_metrics([rec])
    assert (fs, sr) == (1.0, 1.0)
    assert e == 0.0 and m == 0.0


def test_do_nothing_scores_ratio_one():
    goal = make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 4))])
    start_scene = make_scene(objects=[(0, 1, (2, 5)), (1, 2, (4, 4))])
    start = rearrangement_diff(start_scene, goal)
    rec = EpisodeRecord(False, 1.0, 0.0, 1.0, 1.0, start_diff=start,
                        end_diff=start, newly_disturbed=0)
    fs, sr, e, m = rearrangement_metrics([rec])
    assert fs == 0.0 and sr == 0.0
    assert e == 1.0 and m == 1.0


def test_disturbing_clean_object_zeroes_fs():
    goal = make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 4)), (2, 5, (6, 6))])
    # starts with 0 and 1 misplaced; agent fixes 0 but knocks 2 away
    start_scene = make_scene(objects=[(0, 1, (2, 5)), (1, 2, (4, 1)), (2, 5, (6, 6))])
    end_scene = make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 1)), (2, 5, (0, 0))])
    start = rearrangement_diff(start_scene, goal)
    end = rearrangement_diff(end_scene, goal)
    rec = EpisodeRecord(False, 1.0, 1.0, 1.0, 1.0, start_diff=start,
                        end_diff=end,
                        newly_disturbed=len(end.ids() - start.ids()))
    fs, sr, e, m = rearrangement_metrics([rec])
    assert fs == 0.0
    assert sr == 0.0


def test_rearrangement_matches_brute_formulas():
    goal = make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 4)), (2, 5, (6, 6))])
    scenes = [
        make_scene(objects=[(0, 1, (2, 5)), (1, 2, (4, 4)), (2, 5, (6, 6))]),
        make_scene(objects=[(0, 1, (2, 2)), (1, 2, (0, 4)), (2, 5, (6, 1))]),
        make_scene(objects=[(0, 1, (5, 5)), (1, 2, (4, 4)), (2, 5, (6, 6))]),
    ]
    ends = [goal, scenes[1], make_scene(objects=[(0, 1, (2, 2)), (1, 2, (4, 4)),
                                                 (2, 5, (1, 1))])]
    recs, brute_eps = [], []
    for s, e in zip(scenes, ends):
        sd, ed = rearrangement_diff(s, goal), rearrangement_diff(e, goal)
        recs.append(EpisodeRecord(ed.empty(), 1.0, 1.0, 1.0, 0.0,
                                  start_diff=sd, end_diff=ed,
                                  newly_disturbed=len(ed.ids() - sd.ids())))
        from embnav.sim.diff import scene_energy
        brute_eps.append({"start_ids": sd.ids(), "end_ids": ed.ids(),
                          "start_energy": scene_energy(sd),
                          "end_energy": scene_energy(ed)})
    assert rearrangement_metrics(recs) == pytest.approx(rearrangement_brute(brute_eps))


# ---------------------------------------------------------------------------
# Report rows

def test_metric_row_nan_fills_cross_task_columns():
    row = metric_row([nav_record()], "objectnav")
    assert list(row.keys()) == list(METRIC_COLUMNS)
    assert math.isnan(row["fs"]) and math.isnan(row["e"]) and math.isnan(row["m"])
    assert row["sr"] == 1.0


# ---------------------------------------------------------------------------
# Properties

record_strategy = st.builds(
    nav_record,
    success=st.booleans(),
    shortest=st.floats(0.0, 50.0),
    agent=st.floats(0.0, 80.0),
    d0=st.floats(0.01, 50.0),
    dT=st.floats(0.0, 60.0),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(record_strategy, min_size=1, max_size=12))
def test_spl_bounded_by_sr(recs):
    v_spl, v_sr = spl(recs), success_rate(recs)
    assert 0.0 <= v_spl <= v_sr <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(record_strategy, min_size=2, max_size=10),
       st.randoms(use_true_random=False))
def test_metrics_invariant_under_reordering(recs, rnd):
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert spl(shuffled) == pytest.approx(spl(recs))
    assert soft_spl(shuffled) == pytest.approx(soft_spl(recs))
    assert success_rate(shuffled) == success_rate(recs)


@settings(max_examples=100, deadline=None)
@given(st.lists(record_strategy, min_size=1, max_size=10))
def test_spl_softspl_match_direct_formulas(recs):
    assert spl(recs) == pytest.approx(
        spl_brute([(r.success, r.shortest_path, r.agent_path) for r in recs]))
    assert soft_spl(recs) == pytest.approx(
        softspl_brute([(r.initial_geodesic, r.final_geodesic,
                        r.shortest_path, r.agent_path) for r in recs]))
