import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from activeauth.data import BehaviorEvent, ChannelId
from activeauth.profiler import BehaviorTemplate, build_template, score_session

DAY = 86400
T0 = 1704067200
SLOT = 1800  # 48 slots per day


def ev(eid, day, slot, offset=0):
    return BehaviorEvent(eid, float(T0 + day * DAY + slot * SLOT + offset))


def test_worked_example_sum_of_squares():
    # App1 seen in slot 3 on five days, App2 in slot 7 on three days
    train = [ev("App1", d, 3) for d in range(5)] + [ev("App2", d, 7) for d in range(3)]
    tpl = build_template(train)
    assert tpl.frequency("App1", 3) == 5 and tpl.frequency("App2", 7) == 3
    assert score_session(tpl, [ev("App1", 9, 3), ev("App2", 9, 7)]) == 34


def test_same_day_repeats_count_once():
    tpl = build_template([ev("a", 0, 2), ev("a", 0, 2, 60), ev("a", 1, 2)])
    assert tpl.frequency("a", 2) == 2


def test_unmatched_and_empty_score_zero():
    tpl = build_template([ev("a", 0, 2)])
    assert score_session(tpl, []) == 0
    assert score_session(tpl, [ev("a", 5, 3), ev("b", 5, 2)]) == 0


def test_test_duplicates_flag():
    tpl = build_template([ev("a", d, 2) for d in range(3)])
    test = [ev("a", 9, 2), ev("a", 9, 2, 30)]
    assert score_session(tpl, test) == 9
    assert score_session(tpl, test, count_test_duplicates=True) == 18


def test_one_slot_per_day_ignores_time():
    tpl = build_template([ev("a", 0, 2), ev("a", 1, 40)], slots_per_day=1)
    assert score_session(tpl, [ev("a", 7, 20)]) == 4


def test_invalid_slot_count():
    with pytest.raises(ValueError):
        build_template([], slots_per_day=0)


def test_template_json_roundtrip():
    tpl = build_template([ev("a", 0, 2), ev("b", 1, 5)], channel=ChannelId.WIFI)
    back = BehaviorTemplate.from_json(tpl.to_json())
    assert back.entries == tpl.entries and back.channel is ChannelId.WIFI


events = st.lists(
    st.tuples(st.sampled_from("abc"), st.integers(0, 4), st.integers(0, 7), st.integers(0, SLOT - 1)),
    max_size=10,
)


@settings(max_examples=200, deadline=None)
@given(train=events, test=events, n=st.sampled_from([1, 4, 8, 48]))
def test_matches_double_loop_oracle(train, test, n):
    tr = [ev(e, d, s, o) for e, d, s, o in train]
    te = [ev(e, 10, s, o) for e, _, s, o in test]
    assert score_session(build_template(tr, slots_per_day=n), te) == oracles.behavior_score(tr, te, n)


@settings(max_examples=100, deadline=None)
@given(train=events, test=events)
def test_score_is_monotone_in_added_training_days(train, test):
    tr = [ev(e, d, s, o) for e, d, s, o in train]
    te = [ev(e, 10, s, o) for e, _, s, o in test]
    extra = [ev(e, 6, s, o) for e, _, s, o in test]
    assert score_session(build_template(tr + extra), te) >= score_session(build_template(tr), te)
