"""Sessions, per-channel payloads, JSONL ingestion and the day-based split."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone as _utc_tz
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple
from zoneinfo import ZoneInfo

import numpy as np

SECONDS_PER_DAY = 86400


class ChannelId(str, Enum):
    TOUCH = "touch"
    KEYSTROKE = "keystroke"
    ACCELEROMETER = "accelerometer"
    GYROSCOPE = "gyroscope"
    WIFI = "wifi"
    GPS = "gps"
    APPS = "apps"

    @classmethod
    def parse(cls, name: str) -> "ChannelId":
        key = name.strip().lower()
        if key in _ALIASES:
            return _ALIASES[key]
        raise ValueError(f"unknown channel {name!r}; expected one of {[c.value for c in cls]}")

    @property
    def is_behavior(self) -> bool:
        return self in BEHAVIOR_CHANNELS

    def __str__(self) -> str:
        return self.value


_ALIASES = {c.value: c for c in ChannelId}
_ALIASES.update(
    {
        "accel": ChannelId.ACCELEROMETER,
        "gyro": ChannelId.GYROSCOPE,
        "keys": ChannelId.KEYSTROKE,
        "app": ChannelId.APPS,
        "appusage": ChannelId.APPS,
        "app_usage": ChannelId.APPS,
        "touchgesture": ChannelId.TOUCH,
    }
)

BIOMETRIC_CHANNELS = (
    ChannelId.TOUCH,
    ChannelId.KEYSTROKE,
    ChannelId.ACCELEROMETER,
    ChannelId.GYROSCOPE,
)
BEHAVIOR_CHANNELS = (ChannelId.WIFI, ChannelId.GPS, ChannelId.APPS)
ALL_CHANNELS = BIOMETRIC_CHANNELS + BEHAVIOR_CHANNELS

# JSONL record key for each channel
RECORD_KEYS = {
    ChannelId.TOUCH: "touch",
    ChannelId.KEYSTROKE: "keys",
    ChannelId.ACCELEROMETER: "accel",
    ChannelId.GYROSCOPE: "gyro",
    ChannelId.WIFI: "wifi",
    ChannelId.GPS: "gps",
    ChannelId.APPS: "apps",
}


class BehaviorEvent(NamedTuple):
    event_id: str
    timestamp: float


class TouchSample(NamedTuple):
    x: float
    y: float
    pressure: float
    t: float


class KeyEvent(NamedTuple):
    key_id: str
    press_t: float
    release_t: float


class InertialSample(NamedTuple):
    x: float
    y: float
    z: float
    t: float


class DataError(ValueError):
    """Raised for malformed interchange records."""


def quantize_location(lat: float, lon: float) -> str:
    """GPS event id: both coordinates rounded half away from zero to 2 decimals."""

    def q(v: float) -> str:
        d = Decimal(repr(float(v))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
        if d == 0:
            d = Decimal("0.00")
        return f"{d:.2f}"

    return f"{q(lat)},{q(lon)}"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Session:
    """One unlock-to-lock window.

    Biometric payloads are stored as float arrays: gestures ``(n, 4)`` with
    columns x, y, pressure, t; key timings ``(n, 2)`` press/release with
    ``key_ids`` alongside; inertial windows ``(n, 4)`` x, y, z, t.
    """

    session_id: str
    user_id: str
    day_index: int
    start_t: float
    end_t: float
    touch: tuple[np.ndarray, ...] = ()
    key_ids: tuple[str, ...] = ()
    key_times: np.ndarray = field(default_factory=lambda: _frozen(np.zeros((0, 2))))
    accel: tuple[np.ndarray, ...] = ()
    gyro: tuple[np.ndarray, ...] = ()
    wifi: tuple[BehaviorEvent, ...] = ()
    gps: tuple[BehaviorEvent, ...] = ()
    apps: tuple[BehaviorEvent, ...] = ()

    def behavior_events(self, channel: ChannelId) -> tuple[BehaviorEvent, ...]:
        if channel is ChannelId.WIFI:
            return self.wifi
        if channel is ChannelId.GPS:
            return self.gps
        if channel is ChannelId.APPS:
            return self.apps
        raise ValueError(f"{channel} is not a behavior channel")

    def has_channel(self, channel: ChannelId) -> bool:
        if channel is ChannelId.KEYSTROKE:
            return len(self.key_ids) > 0
        return len(getattr(self, RECORD_KEYS[channel])) > 0

    @property
    def is_empty(self) -> bool:
        return not any(self.has_channel(c) for c in ALL_CHANNELS)

    @property
    def key_events(self) -> list[KeyEvent]:
        return [KeyEvent(k, float(p), float(r)) for k, (p, r) in zip(self.key_ids, self.key_times)]


@dataclass(frozen=True)
class Dataset:
    users: Mapping[str, tuple[Session, ...]]
    timezone: str = "UTC"
    # users excluded from evaluation, with reasons
    skipped: Mapping[str, str] = field(default_factory=dict)

    @property
    def n_sessions(self) -> int:
        return sum(len(v) for v in self.users.values())

    def sessions(self) -> Iterable[Session]:
        for uid in self.users:
            yield from self.users[uid]

    def user_ids(self) -> list[str]:
        return list(self.users)


def _tzinfo(tz: str):
    if tz.upper() == "UTC":
        return _utc_tz.utc
    return ZoneInfo(tz)


def local_date(timestamp: float, tz: str = "UTC") -> date:
    return datetime.fromtimestamp(timestamp, _tzinfo(tz)).date()


def seconds_since_midnight(timestamp: float, tz: str = "UTC") -> float:
    if tz.upper() == "UTC":
        return float(timestamp) % SECONDS_PER_DAY
    dt = datetime.fromtimestamp(timestamp, _tzinfo(tz))
    midnight = dt.replace(hour=0, minute=0, second=0, microsecond=0)
    return (dt - midnight).total_seconds() % SECONDS_PER_DAY


def slot_of(timestamp: float, slots_per_day: int, tz: str = "UTC") -> int:
    """Index of the equal-width day slot containing ``timestamp``."""
    if slots_per_day < 1:
        raise ValueError("slots_per_day must be >= 1")
    slot_len = SECONDS_PER_DAY / slots_per_day
    slot = int(math.floor(seconds_since_midnight(timestamp, tz) / slot_len))
    return min(slot, slots_per_day - 1)


def _require(rec: Mapping[str, Any], key: str, lineno: int):
    if key not in rec:
        raise DataError(f"line {lineno}: missing required field {key!r}")
    return rec[key]


def _points(rows: Any, cols: tuple[str, ...], lineno: int, what: str, defaults=None) -> np.ndarray:
    defaults = defaults or {}
    try:
        arr = np.array(
            [[float(r[c]) if c in r else defaults[c] for c in cols] for r in rows], dtype=float
        ).reshape(-1, len(cols))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line {lineno}: bad {what} sample ({exc})") from None
    if arr.size and not np.all(np.isfinite(arr)):
        raise DataError(f"line {lineno}: non-finite value in {what}")
    return _frozen(arr)


def _events(rows: Any, lineno: int, what: str) -> tuple[BehaviorEvent, ...]:
    out = []
    for r in rows:
        try:
            eid = str(r["event_id"])
            ts = float(r["timestamp"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"line {lineno}: bad {what} event {r!r}") from None
        if not eid:
            raise DataError(f"line {lineno}: empty event_id in {what}")
        out.append(BehaviorEvent(eid, ts))
    return tuple(out)


def session_from_record(rec: Mapping[str, Any], lineno: int = 0) -> Session:
    """Parse one interchange record. ``day_index`` is filled in later."""
    if not isinstance(rec, Mapping):
        raise DataError(f"line {lineno}: record is not an object")
    sid = str(_require(rec, "session_id", lineno))
    uid = str(_require(rec, "user_id", lineno))
    try:
        start_t = float(_require(rec, "start_t", lineno))
        end_t = float(_require(rec, "end_t", lineno))
    except (TypeError, ValueError):
        raise DataError(f"line {lineno}: start_t/end_t must be numbers") from None
    if end_t < start_t:
        raise DataError(f"line {lineno}: end_t < start_t")

    touch = tuple(
        _points(g, ("x", "y", "pressure", "t"), lineno, "touch", {"pressure": 0.0})
        for g in rec.get("touch", []) or []
    )
    keys = rec.get("keys", []) or []
    key_ids = []
    for k in keys:
        if not isinstance(k, Mapping) or "key_id" not in k:
            raise DataError(f"line {lineno}: key event without key_id")
        key_ids.append(str(k["key_id"]))
    key_times = _points(keys, ("press_t", "release_t"), lineno, "keys")
    if key_times.size:
        if np.any(key_times[:, 1] < key_times[:, 0]):
            raise DataError(f"line {lineno}: key released before pressed")
        order = np.argsort(key_times[:, 0], kind="stable")
        key_times = _frozen(key_times[order].copy())
        key_ids = [key_ids[i] for i in order]
    accel = tuple(_points(w, ("x", "y", "z", "t"), lineno, "accel") for w in rec.get("accel", []) or [])
    gyro = tuple(_points(w, ("x", "y", "z", "t"), lineno, "gyro") for w in rec.get("gyro", []) or [])
    gps = []
    for g in rec.get("gps", []) or []:
        try:
            gps.append(BehaviorEvent(quantize_location(g["lat"], g["lon"]), float(g["timestamp"])))
        except (KeyError, TypeError, ValueError):
            raise DataError(f"line {lineno}: bad gps event {g!r}") from None
    return Session(
        session_id=sid,
        user_id=uid,
        day_index=0,
        start_t=start_t,
        end_t=end_t,
        touch=touch,
        key_ids=tuple(key_ids),
        key_times=key_times,
        accel=accel,
        gyro=gyro,
        wifi=_events(rec.get("wifi", []) or [], lineno, "wifi"),
        gps=tuple(gps),
        apps=_events(rec.get("apps", []) or [], lineno, "apps"),
    )


def dataset_from_sessions(sessions: Iterable[Session], tz: str = "UTC") -> Dataset:
    """Group by user, sort by start time and assign day indices.

    Day indices count local calendar days from the earliest session date in
    the whole dataset.
    """
    sessions = list(sessions)
    by_user: dict[str, list[Session]] = {}
    seen: set[tuple[str, str]] = set()
    for s in sessions:
        key = (s.user_id, s.session_id)
        if key in seen:
            raise DataError(f"duplicate session_id {s.session_id!r} for user {s.user_id!r}")
        seen.add(key)
        by_user.setdefault(s.user_id, []).append(s)
    if not sessions:
        return Dataset(users={}, timezone=tz)
    origin = min(local_date(s.start_t, tz) for s in sessions).toordinal()
    users: dict[str, tuple[Session, ...]] = {}
    for uid in sorted(by_user):
        ordered = sorted(by_user[uid], key=lambda s: s.start_t)
        for a, b in zip(ordered, ordered[1:]):
            if b.start_t <= a.start_t:
                raise DataError(f"user {uid!r}: sessions {a.session_id!r} and {b.session_id!r} share start_t")
        users[uid] = tuple(
            replace(s, day_index=local_date(s.start_t, tz).toordinal() - origin) for s in ordered
        )
    return Dataset(users=users, timezone=tz)


def parse_lines(lines: Iterable[str], tz: str = "UTC") -> Dataset:
    sessions = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        sessions.append(session_from_record(rec, lineno))
    try:
        return dataset_from_sessions(sessions, tz)
    except DataError:
        raise


def load_dataset(path: str | Path, format: str = "jsonl", tz: str = "UTC") -> Dataset:
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, tz)


def write_jsonl(records: Iterable[Mapping[str, Any]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


def distinct_days(sessions: Iterable[Session]) -> list[int]:
    return sorted({s.day_index for s in sessions})


def split_by_days(d: Dataset, train_fraction: float = 0.6) -> tuple[Dataset, Dataset]:
    """Chronological per-user split on distinct days.

    The first ``ceil(train_fraction * n_days)`` days train, the rest test.
    Users with fewer than two distinct days are left out of both halves and
    listed in ``skipped`` on each.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    train: dict[str, tuple[Session, ...]] = {}
    test: dict[str, tuple[Session, ...]] = {}
    skipped = dict(d.skipped)
    for uid, sessions in d.users.items():
        days = distinct_days(sessions)
        if len(days) < 2:
            skipped[uid] = f"only {len(days)} distinct day(s); need >= 2"
            continue
        # tiny epsilon keeps 0.6 * 5 == 3 from rounding up to 4
        n_train = math.ceil(train_fraction * len(days) - 1e-9)
        n_train = min(max(n_train, 1), len(days) - 1)
        cutoff = days[n_train - 1]
        train[uid] = tuple(s for s in sessions if s.day_index <= cutoff)
        test[uid] = tuple(s for s in sessions if s.day_index > cutoff)
    return (
        Dataset(users=train, timezone=d.timezone, skipped=skipped),
        Dataset(users=test, timezone=d.timezone, skipped=skipped),
    )
