import json

import numpy as np
import pytest

from activeauth.data import (
    ALL_CHANNELS,
    ChannelId,
    DataError,
    dataset_from_sessions,
    load_dataset,
    parse_lines,
    quantize_location,
    session_from_record,
    slot_of,
    split_by_days,
    write_jsonl,
)

DAY = 86400
T0 = 1704067200  # midnight UTC


def rec(sid, uid="u1", start=T0 + 3600, **extra):
    r = {"session_id": sid, "user_id": uid, "start_t": start, "end_t": start + 60}
    r.update(extra)
    return r


def test_channel_parse_and_aliases():
    assert ChannelId.parse("WiFi") is ChannelId.WIFI
    assert ChannelId.parse("accel") is ChannelId.ACCELEROMETER
    assert ChannelId.parse(" AppUsage ") is ChannelId.APPS
    with pytest.raises(ValueError, match="unknown channel"):
        ChannelId.parse("voice")
    assert len(ALL_CHANNELS) == 7
    assert [c.is_behavior for c in ALL_CHANNELS] == [False] * 4 + [True] * 3


@pytest.mark.parametrize(
    "lat,lon,expected",
    [
        (38.98765, -76.93712, "38.99,-76.94"),
        (38.985, -76.935, "38.99,-76.94"),  # half away from zero, on decimal value
        (-0.001, 0.004, "0.00,0.00"),
        (12.0, 0.0, "12.00,0.00"),
    ],
)
def test_quantize_location(lat, lon, expected):
    assert quantize_location(lat, lon) == expected


@pytest.mark.parametrize(
    "ts,n,expected",
    [(T0, 48, 0), (T0 + 1799, 48, 0), (T0 + 1800, 48, 1), (T0 + DAY - 1, 48, 47), (T0 + 13 * 3600, 24, 13)],
)
def test_slot_boundaries(ts, n, expected):
    assert slot_of(ts, n) == expected


def test_slot_respects_timezone():
    # 13:00 UTC is 08:00 in New York in January
    assert slot_of(T0 + 13 * 3600, 24, "America/New_York") == 8


def test_session_from_record_parses_all_channels():
    r = rec(
        "s1",
        touch=[[{"x": 1, "y": 2, "pressure": 0.5, "t": 0.0}, {"x": 3, "y": 4, "t": 0.1}]],
        keys=[
            {"key_id": "b", "press_t": T0 + 5.0, "release_t": T0 + 5.1},
            {"key_id": "a", "press_t": T0 + 4.0, "release_t": T0 + 4.1},
        ],
        accel=[[{"x": 0, "y": 0, "z": 9.8, "t": 0}]],
        wifi=[{"event_id": "net1", "timestamp": T0 + 3610}],
        gps=[{"lat": 38.98765, "lon": -76.93712, "timestamp": T0 + 3620}],
    )
    s = session_from_record(r)
    assert s.touch[0].shape == (2, 4) and s.touch[0][1, 2] == 0.0  # missing pressure -> 0
    assert s.key_ids == ("a", "b")  # sorted by press time
    assert s.gps[0].event_id == "38.99,-76.94"
    assert s.has_channel(ChannelId.KEYSTROKE) and not s.has_channel(ChannelId.APPS)
    assert not s.is_empty


@pytest.mark.parametrize(
    "bad,msg",
    [
        ({"user_id": "u", "start_t": 0, "end_t": 1}, "session_id"),
        ({"session_id": "s", "user_id": "u", "start_t": 5, "end_t": 1}, "end_t < start_t"),
        ({"session_id": "s", "user_id": "u", "start_t": 0, "end_t": 1, "keys": [{"press_t": 1, "release_t": 2}]}, "key_id"),
        (
            {"session_id": "s", "user_id": "u", "start_t": 0, "end_t": 1,
             "keys": [{"key_id": "a", "press_t": 2, "release_t": 1}]},
            "released before",
        ),
    ],
)
def test_session_from_record_rejects(bad, msg):
    with pytest.raises(DataError, match=msg):
        session_from_record(bad)


def test_duplicate_session_and_equal_start_rejected():
    a = session_from_record(rec("s1"))
    with pytest.raises(DataError, match="duplicate"):
        dataset_from_sessions([a, session_from_record(rec("s1", start=T0 + 99))])
    with pytest.raises(DataError, match="share start_t"):
        dataset_from_sessions([a, session_from_record(rec("s2"))])


def test_invalid_json_line_reports_line_number():
    with pytest.raises(DataError, match="line 2"):
        parse_lines([json.dumps(rec("s1")), "{oops"])


def test_day_index_and_split():
    recs = [rec(f"s{d}{k}", start=T0 + d * DAY + 3600 * (k + 1)) for d in range(5) for k in range(2)]
    ds = parse_lines(json.dumps(r) for r in recs)
    assert [s.day_index for s in ds.users["u1"]] == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
    train, test = split_by_days(ds, 0.6)
    assert {s.day_index for s in train.users["u1"]} == {0, 1, 2}
    assert {s.day_index for s in test.users["u1"]} == {3, 4}


def test_split_keeps_one_test_day_and_skips_single_day_users():
    recs = [rec(f"a{d}", "ua", T0 + d * DAY + 10) for d in range(2)] + [rec("b0", "ub", T0 + 10)]
    ds = parse_lines(json.dumps(r) for r in recs)
    train, test = split_by_days(ds, 0.99)
    assert len(train.users["ua"]) == 1 and len(test.users["ua"]) == 1
    assert "ub" in train.skipped and "ub" not in test.users
    with pytest.raises(ValueError):
        split_by_days(ds, 1.0)


def test_jsonl_roundtrip(tmp_path):
    recs = [rec("s1", keys=[{"key_id": "a", "press_t": 1.5, "release_t": 1.6}]), rec("s2", "u2")]
    path = tmp_path / "d.jsonl"
    write_jsonl(recs, path)
    ds = load_dataset(path)
    assert sorted(ds.users) == ["u1", "u2"]
    assert np.array_equal(ds.users["u1"][0].key_times, [[1.5, 1.6]])
    with pytest.raises(ValueError):
        load_dataset(path, format="csv")
