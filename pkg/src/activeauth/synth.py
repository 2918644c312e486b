"""Seeded multi-user session generator with per-channel separability.

Every user shares a population model; separability ``delta`` in [0, 1]
moves a user's habits and motor parameters away from it. At ``delta = 0``
all users are draws from the same distribution, at ``delta = 1`` their
profiles are far apart relative to the within-user noise.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .data import (
    ALL_CHANNELS,
    BEHAVIOR_CHANNELS,
    ChannelId,
    Dataset,
    SECONDS_PER_DAY,
    dataset_from_sessions,
    session_from_record,
    write_jsonl,
)
from .rng import stream

log = logging.getLogger(__name__)

START_EPOCH = 1704067200  # 2024-01-01T00:00:00Z

N_APPS = 40
N_SSIDS = 30
N_PLACES = 40
BASE_LAT, BASE_LON = 38.90, -76.90


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 20
    days_per_user: int = 10
    sessions_per_day: int = 5
    separability: Mapping[str, float] | float = 0.5
    presence: Mapping[str, float] | float = 0.74
    seed: int = 0
    start_epoch: int = START_EPOCH
    timezone: str = "UTC"

    def __post_init__(self):
        for name in ("n_users", "days_per_user", "sessions_per_day"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for ch in ALL_CHANNELS:
            for what in ("separability", "presence"):
                v = self._per_channel(getattr(self, what), ch)
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{what} for {ch} must be in [0, 1], got {v}")

    @staticmethod
    def _per_channel(value, ch: ChannelId) -> float:
        if isinstance(value, Mapping):
            for k, v in value.items():
                if k != "default" and ChannelId.parse(k) is ch:
                    return float(v)
            return float(value.get("default", 0.5))
        return float(value)

    def delta(self, ch: ChannelId) -> float:
        return self._per_channel(self.separability, ch)

    def p_present(self, ch: ChannelId) -> float:
        return self._per_channel(self.presence, ch)

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("separability", "presence"):
            if isinstance(d[k], Mapping):
                d[k] = dict(d[k])
        return d

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**doc)


# population means and between-user spreads of the motor parameters;
# per-sample noise is NOISE * spread * _noise_factor(delta)
TOUCH_PARAMS = {
    "start_x": (540.0, 120.0),
    "start_y": (1300.0, 180.0),
    "angle": (math.pi / 2, 0.45),
    "log_length": (math.log(520.0), 0.30),
    "log_duration": (math.log(0.28), 0.30),
    "curvature": (0.0, 0.12),
    "pressure": (0.5, 0.12),
}
KEY_PARAMS = {
    "log_hold": (math.log(0.095), 0.50),
    "log_flight": (math.log(0.24), 0.50),
    "flight_spread": (0.35, 0.15),
}
INERTIAL_PARAMS = {
    "pitch": (0.7, 0.30),
    "roll": (0.0, 0.30),
    "log_tremor": (math.log(0.25), 0.35),
    "tremor_hz": (4.0, 1.0),
    "bias_x": (0.0, 0.08),
    "bias_y": (0.0, 0.08),
}
NOISE = 0.9


def _user_params(rng, table: Mapping[str, tuple[float, float]], delta: float) -> dict[str, float]:
    return {k: mu + delta * sd * rng.standard_normal() for k, (mu, sd) in table.items()}


def _noise_factor(delta: float) -> float:
    # close to 1 - delta/2 through the middle, tightening sharply near delta = 1
    return 1.0 - 0.8 * delta**1.7


def _sample_params(rng, user: Mapping[str, float], table, delta: float) -> dict[str, float]:
    scale = NOISE * _noise_factor(delta)
    return {k: user[k] + scale * table[k][1] * rng.standard_normal() for k in table}


def _zipf(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


@dataclass
class _UserProfile:
    anchors: np.ndarray  # seconds after midnight, one per daily session
    apps: np.ndarray
    ssids: np.ndarray
    places: np.ndarray
    touch: dict[str, float]
    keys: dict[str, float]
    accel: dict[str, float]
    gyro: dict[str, float]
    key_alphabet: list[str] = field(default_factory=list)


class _Population:
    def __init__(self, seed: int):
        rng = stream(seed, "population")
        self.app_w = _zipf(N_APPS)[rng.permutation(N_APPS)]
        self.ssid_w = _zipf(N_SSIDS)[rng.permutation(N_SSIDS)]
        self.place_w = _zipf(N_PLACES)[rng.permutation(N_PLACES)]
        hours = np.arange(24)
        w = np.exp(-0.5 * ((hours - 14.5) / 4.5) ** 2)
        self.hour_w = w / w.sum()
        side = int(math.ceil(math.sqrt(N_PLACES)))
        self.places = [(BASE_LAT + 0.01 * (i // side), BASE_LON + 0.01 * (i % side)) for i in range(N_PLACES)]

    def time_of_day(self, rng) -> float:
        return float(rng.choice(24, p=self.hour_w) * 3600 + rng.uniform(0, 3600))


def _profile(cfg: GeneratorConfig, rng, pop: _Population) -> _UserProfile:
    spd = cfg.sessions_per_day
    anchors = np.sort(rng.uniform(7.5 * 3600, 23.0 * 3600, size=spd))
    return _UserProfile(
        anchors=anchors,
        apps=rng.choice(N_APPS, size=min(4, N_APPS), replace=False),
        ssids=rng.choice(N_SSIDS, size=2, replace=False),
        places=rng.choice(N_PLACES, size=3, replace=False),
        touch=_user_params(rng, TOUCH_PARAMS, cfg.delta(ChannelId.TOUCH)),
        keys=_user_params(rng, KEY_PARAMS, cfg.delta(ChannelId.KEYSTROKE)),
        accel=_user_params(rng, INERTIAL_PARAMS, cfg.delta(ChannelId.ACCELEROMETER)),
        gyro=_user_params(rng, INERTIAL_PARAMS, cfg.delta(ChannelId.GYROSCOPE)),
        key_alphabet=[f"{int(v):08x}" for v in rng.integers(0, 2**32, size=30)],
    )


def _r(x, nd):
    return round(float(x), nd)


def _gesture(rng, prof: _UserProfile, delta: float) -> list[dict]:
    p = _sample_params(rng, prof.touch, TOUCH_PARAMS, delta)
    duration = float(np.clip(math.exp(p["log_duration"]), 0.06, 2.0))
    length = float(np.clip(math.exp(p["log_length"]), 40.0, 2000.0))
    n = max(3, int(round(duration * 60))) + 1
    tau = np.linspace(0.0, 1.0, n)
    s = tau * tau * (3 - 2 * tau)  # bell-shaped speed profile
    ux, uy = math.cos(p["angle"]), -math.sin(p["angle"])  # screen y grows downward
    bow = p["curvature"] * length * np.sin(math.pi * s)
    x = p["start_x"] + length * s * ux - bow * uy + rng.normal(0, 1.5, n)
    y = p["start_y"] + length * s * uy + bow * ux + rng.normal(0, 1.5, n)
    pressure = np.clip(p["pressure"] + 0.05 * np.sin(math.pi * s) + rng.normal(0, 0.02, n), 0.0, None)
    t = tau * duration
    return [
        {"x": _r(x[i], 2), "y": _r(y[i], 2), "pressure": _r(pressure[i], 3), "t": _r(t[i], 4)}
        for i in range(n)
    ]


def _burst(rng, prof: _UserProfile, delta: float, t0: float) -> list[dict]:
    p = _sample_params(rng, prof.keys, KEY_PARAMS, delta)
    n = int(rng.integers(6, 16))
    spread = float(np.clip(p["flight_spread"], 0.05, 1.0))
    jitter = 0.25 * _noise_factor(delta)
    holds = np.exp(p["log_hold"] + jitter * rng.standard_normal(n))
    flights = np.exp(p["log_flight"] + spread * (0.5 + 0.5 * _noise_factor(delta)) * rng.standard_normal(n - 1))
    press = t0 + np.concatenate([[0.0], np.cumsum(flights)])
    out = []
    for i in range(n):
        pr = _r(press[i], 4)
        out.append(
            {
                "key_id": prof.key_alphabet[int(rng.integers(len(prof.key_alphabet)))],
                "press_t": pr,
                "release_t": _r(max(pr, press[i] + holds[i]), 4),
            }
        )
    return out


def _inertial_window(rng, user: Mapping[str, float], delta: float, t0: float, gyro: bool) -> list[dict]:
    p = _sample_params(rng, user, INERTIAL_PARAMS, delta)
    n = int(rng.integers(40, 61))
    t = t0 + np.arange(n) / 50.0
    amp = math.exp(p["log_tremor"])
    phase = rng.uniform(0, 2 * math.pi, 3)
    w = 2 * math.pi * max(p["tremor_hz"], 0.5)
    if gyro:
        base = np.array([p["bias_x"], p["bias_y"], 0.5 * p["pitch"] - 0.35])
        scale, noise = 0.6 * amp, 0.03
    else:
        g = 9.81
        base = g * np.array(
            [math.sin(p["roll"]), math.sin(p["pitch"]), math.cos(p["pitch"]) * math.cos(p["roll"])]
        )
        scale, noise = 2.0 * amp, 0.08
    cols = [
        base[k] + scale * np.sin(w * (t - t0) + phase[k]) * (1.0 + 0.3 * k) + rng.normal(0, noise, n)
        for k in range(3)
    ]
    return [
        {"x": _r(cols[0][i], 4), "y": _r(cols[1][i], 4), "z": _r(cols[2][i], 4), "t": _r(t[i], 3)}
        for i in range(n)
    ]


def _habit_prob(delta: float) -> float:
    """Chance a behavior draw follows the personal routine rather than the population."""
    return math.sqrt(delta)


def _pick(rng, delta: float, personal: np.ndarray, preferred: int, weights: np.ndarray) -> int:
    if rng.random() < _habit_prob(delta):
        loyal = rng.random() < 0.5 + 0.5 * delta
        return int(personal[preferred % len(personal)] if loyal else rng.choice(personal))
    return int(rng.choice(len(weights), p=weights))


def generate_records(cfg: GeneratorConfig) -> list[dict[str, Any]]:
    """Session records in the JSONL interchange layout, users in order."""
    pop = _Population(cfg.seed)
    d_behavior = float(np.mean([cfg.delta(c) for c in BEHAVIOR_CHANNELS]))
    d_time, jitter = _habit_prob(d_behavior), 600.0 * (1.0 - d_behavior)
    records = []
    for u in range(cfg.n_users):
        uid = f"u{u:03d}"
        rng = stream(cfg.seed, "user", uid)
        prof = _profile(cfg, rng, pop)
        for day in range(cfg.days_per_user):
            day0 = cfg.start_epoch + day * SECONDS_PER_DAY
            tods = []
            for k in range(cfg.sessions_per_day):
                if rng.random() < d_time:
                    tod = prof.anchors[k] + rng.normal(0, jitter)
                else:
                    tod = pop.time_of_day(rng)
                tods.append(float(np.clip(tod, 0, SECONDS_PER_DAY - 1200)))
            order = np.argsort(tods, kind="stable")
            last_start = -1.0
            for rank, k in enumerate(order):
                start = max(round(day0 + tods[k]), last_start + 1)
                last_start = start
                duration = float(np.clip(rng.exponential(224.0), 20.0, 1000.0))
                rec = _session_record(rng, cfg, pop, prof, uid, f"{uid}-d{day:02d}-s{rank:02d}", start, duration, k)
                records.append(rec)
    return records


def _session_record(rng, cfg, pop, prof, uid, sid, start, duration, anchor) -> dict[str, Any]:
    end = start + duration
    present = {ch: rng.random() < cfg.p_present(ch) for ch in ALL_CHANNELS}
    rec: dict[str, Any] = {"session_id": sid, "user_id": uid, "start_t": float(start), "end_t": _r(end, 3)}

    def when():
        return _r(start + rng.uniform(0, duration), 3)

    if present[ChannelId.TOUCH]:
        rec["touch"] = [_gesture(rng, prof, cfg.delta(ChannelId.TOUCH)) for _ in range(int(rng.integers(1, 5)))]
    if present[ChannelId.KEYSTROKE]:
        keys, t0 = [], float(start) + rng.uniform(1.0, 10.0)
        for _ in range(int(rng.integers(1, 3))):
            burst = _burst(rng, prof, cfg.delta(ChannelId.KEYSTROKE), t0)
            keys.extend(burst)
            t0 = burst[-1]["release_t"] + rng.uniform(3.0, 8.0)
        rec["keys"] = keys
    for ch, key, user, gyro in (
        (ChannelId.ACCELEROMETER, "accel", prof.accel, False),
        (ChannelId.GYROSCOPE, "gyro", prof.gyro, True),
    ):
        if present[ch]:
            rec[key] = [
                _inertial_window(rng, user, cfg.delta(ch), float(start) + 2.0 * w, gyro)
                for w in range(int(rng.integers(1, 3)))
            ]
    if present[ChannelId.WIFI]:
        d = cfg.delta(ChannelId.WIFI)
        ssid = _pick(rng, d, prof.ssids, 0 if anchor < 2 else 1, pop.ssid_w)
        rec["wifi"] = [{"event_id": f"net{ssid:02d}", "timestamp": when()}]
    if present[ChannelId.GPS]:
        d = cfg.delta(ChannelId.GPS)
        place = _pick(rng, d, prof.places, anchor, pop.place_w)
        lat, lon = pop.places[place]
        rec["gps"] = [
            {
                "lat": _r(lat + rng.uniform(-0.003, 0.003), 6),
                "lon": _r(lon + rng.uniform(-0.003, 0.003), 6),
                "timestamp": when(),
            }
        ]
    if present[ChannelId.APPS]:
        d = cfg.delta(ChannelId.APPS)
        n = 1 + int(rng.poisson(1.0))
        rec["apps"] = [
            {"event_id": f"app{_pick(rng, d, prof.apps, anchor + i, pop.app_w):02d}", "timestamp": when()}
            for i in range(n)
        ]
    return rec


def generate(cfg: GeneratorConfig) -> Dataset:
    recs = generate_records(cfg)
    return dataset_from_sessions((session_from_record(r, i + 1) for i, r in enumerate(recs)), cfg.timezone)


def write_dataset(cfg: GeneratorConfig, out_dir: str | Path) -> Path:
    """Write ``sessions.jsonl`` plus a ``generator.json`` sidecar; returns the JSONL path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sessions.jsonl"
    write_jsonl(generate_records(cfg), path)
    with open(out / "generator.json", "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.to_json(), "seed": cfg.seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass(frozen=True)
class AaSequence:
    claimed_user: str
    sessions: tuple[tuple[str, str], ...]  # (owner user_id, session_id)
    change_point: int  # genuine sessions before the impostor suffix

    @property
    def genuine_only(self) -> bool:
        return self.change_point >= len(self.sessions)


def make_aa_sequences(
    dataset: Dataset,
    genuine_len: int = 15,
    impostor_len: int = 15,
    pairs_per_user: int = 10,
    seed: int = 0,
) -> dict[str, list[AaSequence]]:
    """Genuine-only and change-point sequences per user.

    Each user gets ``pairs_per_user`` genuine-only sequences of length
    ``genuine_len + impostor_len`` and, when ``impostor_len > 0``, as many
    change-point sequences whose suffix comes from one other user. Sessions
    are drawn without replacement inside a sequence; short pools yield
    shorter sequences.
    """
    users = list(dataset.users)
    out: dict[str, list[AaSequence]] = {}
    warned = False
    for uid in users:
        rng = stream(seed, "aa-sequences", uid)
        own = [(uid, s.session_id) for s in dataset.users[uid]]
        others = [o for o in users if o != uid]
        seqs = []

        def draw(pool, n):
            nonlocal warned
            if n > len(pool) and not warned:
                log.warning("only %d sessions available for a run of %d; sequences shortened", len(pool), n)
                warned = True
            idx = rng.permutation(len(pool))[: min(n, len(pool))]
            return [pool[i] for i in idx]

        for _ in range(pairs_per_user):
            g = draw(own, genuine_len + impostor_len)
            seqs.append(AaSequence(uid, tuple(g), len(g)))
        if impostor_len > 0 and others:
            order = [others[i] for i in rng.permutation(len(others))]
            for k in range(pairs_per_user):
                intruder = order[k % len(order)]
                pool = [(intruder, s.session_id) for s in dataset.users[intruder]]
                g = draw(own, genuine_len)
                imp = draw(pool, impostor_len)
                seqs.append(AaSequence(uid, tuple(g + imp), len(g)))
        out[uid] = seqs
    return out
