"""Fixed-length feature vectors for touch, keystroke and inertial samples."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .data import ChannelId, KeyEvent, Session

log = logging.getLogger(__name__)

STAT_NAMES = ("mean", "median", "max", "min", "max_minus_min", "std", "p1", "p99", "p99_minus_p1")
KEY_STAT_NAMES = ("mean", "median", "std", "p1", "p99", "p99_minus_p1")
_KEY_STAT_IDX = [STAT_NAMES.index(n) for n in KEY_STAT_NAMES]

TOUCH_FEATURES = (
    "duration",
    "n_points",
    "start_x",
    "start_y",
    "end_x",
    "end_y",
    "path_length",
    "direct_distance",
    "straightness",
    "initial_angle",
    "end_to_end_angle",
    "velocity_mean",
    "velocity_max",
    "velocity_min",
    "vx_mean",
    "vy_mean",
    "acceleration_mean",
    "acceleration_max",
    "acceleration_min",
    "pressure_mean",
    "pressure_max",
    "x_range",
    "y_range",
    "adjacent_distance_mean",
    "adjacent_distance_max",
    "path_per_duration",
    "velocity_peaks",
    "velocity_median",
)
INERTIAL_FEATURES = tuple(f"{axis}_{s}" for axis in "xyz" for s in STAT_NAMES)
KEYSTROKE_FEATURES = tuple(f"{series}_{s}" for series in ("hold", "pp", "rp") for s in KEY_STAT_NAMES)

FEATURE_NAMES = {
    ChannelId.TOUCH: TOUCH_FEATURES,
    ChannelId.KEYSTROKE: KEYSTROKE_FEATURES,
    ChannelId.ACCELEROMETER: INERTIAL_FEATURES,
    ChannelId.GYROSCOPE: INERTIAL_FEATURES,
}
DIMENSIONS = {ch: len(names) for ch, names in FEATURE_NAMES.items()}

DEFAULT_BURST_GAP = 2.0


class SkipSample(ValueError):
    """A sample too short or degenerate to yield features."""


def stat_summary(xs: Sequence[float] | np.ndarray) -> np.ndarray:
    """mean, median, max, min, range, population std, p1, p99, p99 - p1.

    Percentiles interpolate linearly at zero-based position p/100 * (n - 1).
    """
    a = np.asarray(xs, dtype=float)
    if a.size == 0:
        raise SkipSample("empty series")
    lo, hi = np.percentile(a, [1.0, 99.0], method="linear")
    mx, mn = a.max(), a.min()
    return np.array([a.mean(), np.median(a), mx, mn, mx - mn, a.std(), lo, hi, hi - lo])


def extract_inertial(window: np.ndarray | Sequence) -> np.ndarray:
    w = np.asarray(window, dtype=float)
    if w.ndim != 2 or w.shape[0] < 2:
        raise SkipSample("inertial window needs >= 2 samples")
    return np.concatenate([stat_summary(w[:, k]) for k in range(3)])


def _key_times(burst) -> np.ndarray:
    if isinstance(burst, np.ndarray):
        return burst.astype(float).reshape(-1, 2)
    rows = [(k.press_t, k.release_t) if isinstance(k, KeyEvent) else (k[-2], k[-1]) for k in burst]
    return np.array(rows, dtype=float).reshape(-1, 2)


def extract_keystroke(burst) -> np.ndarray:
    """Hold, press-press and release-press series, six statistics each.

    ``burst`` is a list of KeyEvent or an ``(n, 2)`` array of press/release
    times ordered by press time.
    """
    kt = _key_times(burst)
    if kt.shape[0] < 2:
        raise SkipSample("keystroke burst needs >= 2 keys")
    press, release = kt[:, 0], kt[:, 1]
    hold = release - press
    pp = np.diff(press)
    rp = press[1:] - release[:-1]
    return np.concatenate([stat_summary(s)[_KEY_STAT_IDX] for s in (hold, pp, rp)])


def split_bursts(key_times: np.ndarray, gap: float = DEFAULT_BURST_GAP) -> list[np.ndarray]:
    """Cut a session's key stream wherever consecutive presses are > gap s apart."""
    kt = np.asarray(key_times, dtype=float).reshape(-1, 2)
    if kt.shape[0] == 0:
        return []
    cuts = np.flatnonzero(np.diff(kt[:, 0]) > gap) + 1
    return np.split(kt, cuts)


def _dedup_times(g: np.ndarray) -> np.ndarray:
    t = g[:, 3]
    if np.any(np.diff(t) < 0):
        raise SkipSample("gesture timestamps decrease")
    # keep the last of every run of equal timestamps
    keep = np.ones(len(t), dtype=bool)
    keep[:-1] = t[1:] != t[:-1]
    return g[keep]


def extract_touch(gesture: np.ndarray | Sequence) -> np.ndarray:
    """28 global swipe features; order matches TOUCH_FEATURES."""
    g = np.asarray(gesture, dtype=float)
    if g.ndim != 2 or g.shape[0] < 2:
        raise SkipSample("gesture needs >= 2 samples")
    if g.shape[1] == 3:  # x, y, t without pressure
        g = np.column_stack([g[:, :2], np.zeros(len(g)), g[:, 2]])
    g = _dedup_times(g)
    if g.shape[0] < 2:
        raise SkipSample("gesture needs >= 2 distinct timestamps")
    x, y, p, t = g.T
    dx, dy, dt = np.diff(x), np.diff(y), np.diff(t)
    seg = np.hypot(dx, dy)
    vx, vy = dx / dt, dy / dt
    speed = np.hypot(vx, vy)
    if len(speed) >= 2:
        tc = 0.5 * (t[:-1] + t[1:])
        acc = np.hypot(np.diff(vx), np.diff(vy)) / np.diff(tc)
    else:
        acc = np.zeros(1)
    duration = t[-1] - t[0]
    path = seg.sum()
    direct = float(np.hypot(x[-1] - x[0], y[-1] - y[0]))
    peaks = int(np.sum((speed[1:-1] > speed[:-2]) & (speed[1:-1] > speed[2:]))) if len(speed) > 2 else 0
    return np.array(
        [
            duration,
            len(t),
            x[0],
            y[0],
            x[-1],
            y[-1],
            path,
            direct,
            direct / path if path > 0 else 0.0,
            np.arctan2(dy[0], dx[0]),
            np.arctan2(y[-1] - y[0], x[-1] - x[0]),
            speed.mean(),
            speed.max(),
            speed.min(),
            vx.mean(),
            vy.mean(),
            acc.mean(),
            acc.max(),
            acc.min(),
            p.mean(),
            p.max(),
            x.max() - x.min(),
            y.max() - y.min(),
            seg.mean(),
            seg.max(),
            path / duration,
            peaks,
            np.median(speed),
        ]
    )


def session_samples(session: Session, channel: ChannelId, burst_gap: float = DEFAULT_BURST_GAP) -> np.ndarray:
    """All valid feature vectors of one channel in a session, shape (m, dim)."""
    if channel is ChannelId.TOUCH:
        raw, fn = session.touch, extract_touch
    elif channel is ChannelId.KEYSTROKE:
        raw, fn = split_bursts(session.key_times, burst_gap), extract_keystroke
    elif channel is ChannelId.ACCELEROMETER:
        raw, fn = session.accel, extract_inertial
    elif channel is ChannelId.GYROSCOPE:
        raw, fn = session.gyro, extract_inertial
    else:
        raise ValueError(f"{channel} has no biometric features")
    rows = []
    for item in raw:
        try:
            v = fn(item)
        except SkipSample as exc:
            log.debug("session %s %s sample skipped: %s", session.session_id, channel, exc)
            continue
        if np.all(np.isfinite(v)):
            rows.append(v)
    return np.array(rows, dtype=float).reshape(-1, DIMENSIONS[channel])
