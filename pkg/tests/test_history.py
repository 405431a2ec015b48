import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairgee.events import SubjectHistory, WindowGrid
from pairgee.history import (HISTORY_NAMES, HistoryConfig, history_at, history_frame,
                             reflective_history_at)

GRID = WindowGrid(tuple(float(t) for t in range(12)), 1.0)


def subject(pairs, C=12.0, full=True):
    return SubjectHistory.from_times("a", pairs, C, has_full_history=full)


def test_fallbacks_without_events():
    h = history_at(subject([]), 3.0, HistoryConfig("full", -12.0))
    assert h.since_primary == 15 and h.last_gap == 12 and h.count == 0
    assert h.gap_mean == 15


def test_full_regime_trace():
    s = subject([(-4, -3), (5, 8)])
    h = history_at(s, 6.0, HistoryConfig("full", -12.0))
    assert h.count == 2
    assert h.since_primary == 1
    assert h.gap_mean == 8
    assert h.last_gap == 8
    # the only finished episode before the last primary is the pre-study one
    assert (h.episode_mean, h.since_episode, h.last_episode) == (1, 9, 1)


def test_budget_not_binding():
    s = subject([(-4, -3), (5, 8)])
    full = history_at(s, 6.0, HistoryConfig("full", -12.0))
    assert history_at(s, 6.0, HistoryConfig("p2", -12.0)) == full
    assert history_at(s, 6.0, HistoryConfig("p1", -12.0)) == full


def test_budget_keeps_latest_pre_study_pairs():
    s = subject([(-10, -9), (-7, -6), (-4, -3), (5, 8)])
    p2 = history_at(s, 6.0, HistoryConfig("p2", -12.0))
    assert p2.count == 2
    # gap before -4 starts at the origin once earlier pairs are hidden
    assert p2.gap_mean == ((-4 - -12) + (5 - -3)) / 2
    assert history_at(s, 6.0, HistoryConfig("p1", -12.0)).count == 3
    assert history_at(s, 6.0, HistoryConfig("full", -12.0)).count == 4


def test_p3_follows_flag():
    pre = [(-4, -3), (5, 8)]
    with_flag = history_at(subject(pre, full=True), 6.0, HistoryConfig("p3"))
    without = history_at(subject(pre, full=False), 6.0, HistoryConfig("p3"))
    assert with_flag == history_at(subject(pre), 6.0, HistoryConfig("full"))
    assert without == history_at(subject(pre), 6.0, HistoryConfig("p4"))


def test_p4_at_start_is_fallback():
    h = history_at(subject([(-4, -3), (5, 8)]), 0.0, HistoryConfig("p4", -12.0))
    assert (h.count, h.since_primary, h.last_gap) == (0, 12, 12)


def test_secondary_after_last_primary_is_hidden():
    s = subject([(1, 2), (3, 4)])
    inside = history_at(s, 3.5, HistoryConfig("p4", -12.0))
    after = history_at(s, 5.0, HistoryConfig("p4", -12.0))
    # the same summaries whether or not the last episode has ended by t
    assert (inside.episode_mean, inside.last_episode) == (after.episode_mean, after.last_episode)


def test_reflective_uses_future_when_past_is_empty():
    s = subject([(2, 3), (5, 6), (8, 9)])
    h = reflective_history_at(s, 1.0, GRID, HistoryConfig("reflective"))
    assert h.count == 3
    # nearest future primary mirrored: 2 becomes an episode ending at 2*1-2 = 0
    assert h.since_primary == pytest.approx(1.0 - (2 * 1.0 - 3))


def test_reflective_tie_uses_past():
    s = subject([(1, 1.5), (2, 2.5), (5, 5.5), (6, 6.5)])
    cfg = HistoryConfig("reflective")
    assert reflective_history_at(s, 3.0, GRID, cfg) == history_at(s, 3.0, HistoryConfig("p4"))


def test_reflective_matches_on_study_when_past_dominates():
    s = subject([(-3, -2), (1, 1.5), (2, 2.5), (3, 3.5), (8, 9)])
    cfg = HistoryConfig("reflective")
    assert reflective_history_at(s, 4.0, GRID, cfg) == history_at(s, 4.0, HistoryConfig("p4"))


def test_history_frame_columns_and_rows():
    s = [subject([(1, 2)], C=4.5), subject([], C=12.0)]
    s[1].subject_id = "b"
    f = history_frame(s, GRID, HistoryConfig("full"))
    assert list(f.columns) == ["subject_id", "t", *HISTORY_NAMES]
    assert len(f) == 5 + 12
    none = history_frame(s, GRID, HistoryConfig("none"))
    assert list(none.columns) == ["subject_id", "t"]


def test_bad_config():
    with pytest.raises(ValueError):
        HistoryConfig("p9")
    with pytest.raises(ValueError):
        HistoryConfig("full", lookback=1.0)


@st.composite
def histories(draw):
    t = draw(st.floats(-12, -6))
    pairs = []
    for _ in range(draw(st.integers(0, 8))):
        p = t + draw(st.floats(0.1, 2.0))
        s = p + draw(st.floats(0.1, 2.0))
        if p < 0 < s:
            s = -1e-6 if p < -1e-6 else None
            if s is None:
                break
        pairs.append((p, s))
        t = s
        if t > 11:
            break
    pairs = [(p, s if s < 12 else None) for p, s in pairs if p < 12]
    return subject(pairs)


@settings(max_examples=150, deadline=None)
@given(histories(), st.sampled_from(["full", "p1", "p2", "p4"]))
def test_history_is_finite_and_count_monotone(s, regime):
    cfg = HistoryConfig(regime, -12.0)
    prev = -1
    for t in GRID.starts:
        h = history_at(s, t, cfg)
        vals = h.as_dict()
        assert all(v == v and abs(v) < 1e9 for v in vals.values())
        assert all(v >= 0 for v in vals.values())
        assert h.count >= prev
        prev = h.count
