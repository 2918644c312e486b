"""Straight-line reference implementations used as test oracles.

These avoid numpy vector tricks on purpose so they fail differently from
the production code.
"""

from __future__ import annotations

import math
from datetime import datetime, timezone


def slot(ts: float, n_slots: int) -> int:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    sec = dt.hour * 3600 + dt.minute * 60 + dt.second + dt.microsecond / 1e6
    return min(int(sec * n_slots // 86400), n_slots - 1)


def day(ts: float) -> int:
    return datetime.fromtimestamp(ts, tz=timezone.utc).date().toordinal()


def behavior_score(train, test, n_slots: int) -> int:
    """Double loop: sum of squared day-counts over distinct matched (event, slot) pairs."""
    test_pairs = []
    for ev in test:
        p = (ev.event_id, slot(ev.timestamp, n_slots))
        if p not in test_pairs:
            test_pairs.append(p)
    total = 0
    for eid, s in test_pairs:
        days = []
        for tr in train:
            if tr.event_id == eid and slot(tr.timestamp, n_slots) == s and day(tr.timestamp) not in days:
                days.append(day(tr.timestamp))
        total += len(days) ** 2
    return total


def percentile(xs, p):
    s = sorted(xs)
    pos = p / 100.0 * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def stats9(xs):
    n = len(xs)
    mean = sum(xs) / n
    s = sorted(xs)
    median = s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])
    sd = math.sqrt(sum((v - mean) ** 2 for v in xs) / n)
    p1, p99 = percentile(xs, 1), percentile(xs, 99)
    return [mean, median, max(xs), min(xs), max(xs) - min(xs), sd, p1, p99, p99 - p1]


def inertial(window):
    out = []
    for k in range(3):
        out += stats9([row[k] for row in window])
    return out


def keystroke(keys):
    """keys: list of (press, release) ordered by press."""
    hold = [r - p for p, r in keys]
    pp = [keys[i + 1][0] - keys[i][0] for i in range(len(keys) - 1)]
    rp = [keys[i + 1][0] - keys[i][1] for i in range(len(keys) - 1)]
    pick = [0, 1, 5, 6, 7, 8]
    out = []
    for series in (hold, pp, rp):
        st = stats9(series)
        out += [st[i] for i in pick]
    return out


def touch(points):
    """points: list of (x, y, pressure, t) with strictly increasing t."""
    n = len(points)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    ps = [p[2] for p in points]
    ts = [p[3] for p in points]
    segs, vx, vy, sp, mids = [], [], [], [], []
    for i in range(n - 1):
        dx, dy, dt = xs[i + 1] - xs[i], ys[i + 1] - ys[i], ts[i + 1] - ts[i]
        segs.append(math.hypot(dx, dy))
        vx.append(dx / dt)
        vy.append(dy / dt)
        sp.append(math.hypot(dx / dt, dy / dt))
        mids.append((ts[i] + ts[i + 1]) / 2)
    acc = []
    for i in range(len(sp) - 1):
        acc.append(math.hypot(vx[i + 1] - vx[i], vy[i + 1] - vy[i]) / (mids[i + 1] - mids[i]))
    if not acc:
        acc = [0.0]
    duration = ts[-1] - ts[0]
    path = sum(segs)
    direct = math.hypot(xs[-1] - xs[0], ys[-1] - ys[0])
    peaks = sum(1 for i in range(1, len(sp) - 1) if sp[i] > sp[i - 1] and sp[i] > sp[i + 1])
    s = sorted(sp)
    m = len(s)
    med = s[m // 2] if m % 2 else 0.5 * (s[m // 2 - 1] + s[m // 2])
    return [
        duration, n, xs[0], ys[0], xs[-1], ys[-1], path, direct,
        direct / path if path > 0 else 0.0,
        math.atan2(ys[1] - ys[0], xs[1] - xs[0]),
        math.atan2(ys[-1] - ys[0], xs[-1] - xs[0]),
        sum(sp) / len(sp), max(sp), min(sp),
        sum(vx) / len(vx), sum(vy) / len(vy),
        sum(acc) / len(acc), max(acc), min(acc),
        sum(ps) / n, max(ps),
        max(xs) - min(xs), max(ys) - min(ys),
        sum(segs) / len(segs), max(segs),
        path / duration, peaks, med,
    ]  # fmt: skip


def eer(genuine, impostor):
    """Exhaustive sweep over every observed score and +-inf, then the FAR/FRR crossing.

    Accept when score >= threshold. Between the two sweep points that bracket
    the sign change of FAR - FRR, the EER is the linearly interpolated common
    value.
    """
    ths = [-math.inf] + sorted(set(genuine) | set(impostor)) + [math.inf]
    pts = []
    for t in ths:
        far = sum(1 for s in impostor if s >= t) / len(impostor)
        frr = sum(1 for s in genuine if s < t) / len(genuine)
        pts.append((far, frr))
    for i, (far, frr) in enumerate(pts):
        if far == frr:
            return 100.0 * far
        if far < frr:
            f0, r0 = pts[i - 1]
            d0, d1 = f0 - r0, far - frr
            lam = d0 / (d0 - d1)
            return 100.0 * (f0 + lam * (far - f0))
    raise AssertionError("FAR - FRR never changes sign")
