import io
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from actraj.stats import (
    Moments,
    action_distribution,
    distribution_json,
    global_kinematics,
    per_action_kinematics,
    sorted_distribution,
    write_report_csv,
)
from actraj.vocab import ActionClass as A

from conftest import make_tracklet


def by_action(rows):
    return {r.action: r for r in rows}


def line(speed, n=20, heading=0.0):
    d = np.array([np.cos(heading), np.sin(heading)]) * speed * 0.4
    return np.arange(n)[:, None] * d


def test_distribution_single_walk(straight_tracklet):
    counts = action_distribution([straight_tracklet])
    assert counts[A.Walk] == 20
    assert sum(counts.values()) == 20


def test_distribution_empty_is_zero():
    counts = action_distribution([])
    assert set(counts) == set(A) and all(v == 0 for v in counts.values())
    assert per_action_kinematics([]) == []
    assert global_kinematics([]).n == 0


def test_distribution_total_and_order(synth_data):
    _, _, tracklets = synth_data
    counts = action_distribution(tracklets)
    assert sum(counts.values()) == 20 * len(tracklets)
    ranked = sorted_distribution(counts)
    assert [n for _, n in ranked] == sorted((n for _, n in ranked), reverse=True)
    doc = json.loads(distribution_json(counts))
    assert doc["total"] == 20 * len(tracklets)


def test_stationary_pickbox():
    tr = make_tracklet(np.zeros((20, 2)) + [3.0, -1.0], [A.PickBox] * 20)
    r = by_action(per_action_kinematics([tr]))["PickBox"]
    assert r.speed_mean == 0 and r.speed_std == 0 and r.dist_mean == 0 and r.accel_mean == 0


def test_constant_walk():
    tr = make_tracklet(line(1.0, heading=0.7))
    r = by_action(per_action_kinematics([tr]))["Walk"]
    assert r.speed_mean == pytest.approx(1.0, abs=1e-12)
    assert r.accel_mean == pytest.approx(0.0, abs=1e-9)
    assert r.dist_mean == pytest.approx(7.6, abs=1e-12)


def test_two_speed_mixture():
    a = make_tracklet(np.zeros((20, 2)))
    b = make_tracklet(line(1.0))
    r = by_action(per_action_kinematics([a, b]))["Walk"]
    assert r.speed_mean == pytest.approx(0.5)
    assert r.speed_std == pytest.approx(0.5)


def test_duplicated_input_keeps_means(synth_data):
    _, _, tracklets = synth_data
    once = by_action(per_action_kinematics(tracklets))
    twice = by_action(per_action_kinematics(tracklets + tracklets))
    for k, r in once.items():
        assert twice[k].n == 2 * r.n
        assert twice[k].speed_mean == pytest.approx(r.speed_mean, rel=1e-12, abs=1e-12)
        assert twice[k].dist_mean == pytest.approx(r.dist_mean, rel=1e-12, abs=1e-12)


def _shift(tr, dx, dy):
    move = lambda s: replace(s, x=s.x + dx, y=s.y + dy)
    return replace(tr, observed=tuple(map(move, tr.observed)), future=tuple(map(move, tr.future)))


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_translation_invariance(dx, dy):
    rng = np.random.default_rng(0)
    pos = np.cumsum(rng.normal(0, 0.3, (20, 2)), axis=0)
    tr = make_tracklet(pos, [A.Walk] * 10 + [A.DrawCard] * 10)
    a = by_action(per_action_kinematics([tr]))
    b = by_action(per_action_kinematics([_shift(tr, dx, dy)]))
    for k in a:
        assert b[k].speed_mean == a[k].speed_mean
        assert b[k].dist_mean == pytest.approx(a[k].dist_mean, abs=1e-9)


def test_distance_orderings(synth_data):
    _, _, tracklets = synth_data
    for tr in tracklets[:20]:
        pos = tr.positions()
        seg = np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()
        disp = np.linalg.norm(pos[-1] - pos[0])
        per = per_action_kinematics([tr])
        assert sum(r.dist_mean for r in per) <= seg + 1e-9
        assert seg >= disp - 1e-9


def test_distance_mode_switch():
    pos = line(1.0)
    tr = make_tracklet(pos, [A.Walk] * 15 + [A.DrawCard] * 5)
    seg = by_action(per_action_kinematics([tr], distance_mode="per_segment"))
    assert seg["Walk"].dist_mean == pytest.approx(7.6)
    assert seg["DrawCard"].n == 5 and seg["DrawCard"].dist_mean == 0
    per = by_action(per_action_kinematics([tr]))
    assert per["Walk"].dist_mean == pytest.approx(15 * 0.4)
    assert per["DrawCard"].dist_mean == pytest.approx(4 * 0.4)
    with pytest.raises(ValueError):
        per_action_kinematics([tr], distance_mode="bogus")


@given(st.lists(st.floats(-100, 100), max_size=30), st.lists(st.floats(-100, 100), max_size=30))
def test_moments_merge_matches_pooled(a, b):
    merged = Moments.of(a).merge(Moments.of(b))
    pooled = Moments.of(a + b)
    assert merged.n == pooled.n
    assert merged.mean == pytest.approx(pooled.mean, abs=1e-9)
    assert merged.std == pytest.approx(pooled.std, abs=1e-7)


def test_report_csv_columns(synth_data):
    _, _, tracklets = synth_data
    buf = io.StringIO()
    write_report_csv(per_action_kinematics(tracklets) + [global_kinematics(tracklets)], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "action,n,speed_mean,speed_std,accel_mean,accel_std,dist_mean,dist_std"
    assert lines[-1].startswith("ALL,")
