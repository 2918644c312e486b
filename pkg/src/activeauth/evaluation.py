"""EER / ROC for one-time authentication and PFD, PND, ADD curves for CUSUM."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

OTA_CONVENTION = "higher score = more genuine; accept when score >= threshold"
AA_CONVENTION = "cumulative >= h flags an intruder; ADD counts the first post-change session as 1"


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray
    far: np.ndarray  # fractions
    frr: np.ndarray
    eer: float  # percent
    n_genuine: int = 0
    n_impostor: int = 0

    @property
    def accuracy(self) -> float:
        return 100.0 - self.eer


def compute_eer(genuine: Sequence[float], impostor: Sequence[float]) -> RocCurve:
    """Threshold sweep and EER at the FAR/FRR crossing.

    FAR/FRR are evaluated at every observed score plus +-inf. The EER is the
    common value where FAR - FRR hits zero; otherwise it is interpolated
    linearly between the last point with FAR > FRR and the next one. Counts
    stay integral until the final division, so symmetric cases are exact.
    """
    g = np.sort(np.asarray(genuine, dtype=float))
    imp = np.sort(np.asarray(impostor, dtype=float))
    if g.size == 0 or imp.size == 0:
        raise ValueError("compute_eer needs at least one genuine and one impostor score")
    ng, ni = g.size, imp.size
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([g, imp])), [np.inf]])
    accepted_imp = ni - np.searchsorted(imp, thresholds, side="left")
    rejected_gen = np.searchsorted(g, thresholds, side="left")
    far = accepted_imp / ni
    frr = rejected_gen / ng

    # FAR - FRR scaled by ng * ni; non-increasing along the sweep
    x = accepted_imp.astype(object) * ng
    y = rejected_gen.astype(object) * ni
    d = x - y
    total = ng * ni
    k = next(i for i, v in enumerate(d) if v <= 0)
    if d[k] == 0:
        # ties: every zero-crossing point has the same FAR = FRR value
        eer = Fraction(int(x[k]), total)
    else:
        dp, dq = int(d[k - 1]), int(d[k])
        lam = Fraction(dp, dp - dq)
        eer = (int(x[k - 1]) + lam * (int(x[k]) - int(x[k - 1]))) / total
    return RocCurve(thresholds, far, frr, float(eer * 100), ng, ni)


@dataclass(frozen=True, eq=False)
class UserAaCurve:
    pfd: np.ndarray  # percent
    pnd: np.ndarray  # percent
    add: np.ndarray  # sessions, undetected runs censored at impostor length + 1
    add_detected: np.ndarray  # sessions, mean over detected runs only (nan if none)
    n_genuine_sequences: int
    n_change_sequences: int


@dataclass(frozen=True, eq=False)
class AaCurves:
    h: np.ndarray
    pfd: np.ndarray
    pnd: np.ndarray
    add: np.ndarray
    add_detected: np.ndarray
    per_user: Mapping[str, UserAaCurve]
    eer: float
    h_at_eer: float
    add_at_eer: float
    eer_user_mean: float  # per-user EERs averaged, for comparison
    excluded: Mapping[str, str] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return 100.0 - self.eer


def _cum_and_cp(seq) -> tuple[np.ndarray, int]:
    if hasattr(seq, "cumulative"):
        return np.asarray(seq.cumulative, dtype=float), int(seq.change_point)
    cum, cp = seq
    return np.asarray(cum, dtype=float), int(cp)


def user_aa_curve(sequences: Sequence, h_grid: np.ndarray) -> UserAaCurve:
    h = np.asarray(h_grid, dtype=float)
    gen_max, delays, delays_det = [], [], []
    for seq in sequences:
        cum, cp = _cum_and_cp(seq)
        if cp >= len(cum):
            gen_max.append(cum.max() if cum.size else -np.inf)
            continue
        post = np.maximum.accumulate(cum[cp:])
        first = np.searchsorted(post, h, side="left")  # index of first running max >= h
        detected = first < post.size
        delays.append(np.where(detected, first + 1, post.size + 1).astype(float))
        delays_det.append(np.where(detected, first + 1.0, np.nan))
    if not gen_max or not delays:
        raise ValueError("need >= 1 genuine-only and >= 1 change-point sequence")
    gen_max = np.asarray(gen_max)
    pfd = 100.0 * (gen_max[:, None] >= h[None, :]).mean(axis=0)
    D = np.vstack(delays)
    Dd = np.vstack(delays_det)
    n_post = np.array([_post_len(s) for s in sequences if _post_len(s) > 0])
    pnd = 100.0 * (D > n_post[:, None]).mean(axis=0)
    cnt = (~np.isnan(Dd)).sum(axis=0)
    add_det = np.where(cnt > 0, np.nansum(Dd, axis=0) / np.maximum(cnt, 1), np.nan)
    return UserAaCurve(pfd, pnd, D.mean(axis=0), add_det, len(gen_max), len(D))


def _post_len(seq) -> int:
    cum, cp = _cum_and_cp(seq)
    return max(len(cum) - cp, 0)


def crossing(h: np.ndarray, pfd: np.ndarray, pnd: np.ndarray, add: np.ndarray | None = None):
    """Where PFD meets PND along the grid: ``(eer, h_at, add_at)``.

    Linear interpolation between the bracketing grid points; a run of exact
    ties resolves to its midpoint.
    """
    diff = pfd - pnd
    add = np.zeros_like(h) if add is None else add
    hit = np.flatnonzero(diff <= 0)
    if hit.size == 0:
        log.warning("PFD stays above PND on the whole h grid; EER read at the last point")
        k = len(h) - 1
        return float(0.5 * (pfd[k] + pnd[k])), float(h[k]), float(add[k])
    k = int(hit[0])
    if diff[k] == 0:
        run = k
        while run + 1 < len(diff) and diff[run + 1] == 0:
            run += 1
        lo, hi = k, run
        return (
            float(0.5 * (pfd[lo] + pfd[hi])),
            float(0.5 * (h[lo] + h[hi])),
            float(0.5 * (add[lo] + add[hi])),
        )
    if k == 0:
        return float(0.5 * (pfd[0] + pnd[0])), float(h[0]), float(add[0])
    lam = diff[k - 1] / (diff[k - 1] - diff[k])

    def lerp(a):
        return float(a[k - 1] + lam * (a[k] - a[k - 1]))

    return lerp(pfd), lerp(h), lerp(add)


def default_h_grid(per_user_sequences: Mapping[str, Sequence]) -> np.ndarray:
    """Every level at which some curve can step, plus 0 and one point beyond."""
    levels = [0.0]
    for seqs in per_user_sequences.values():
        for seq in seqs:
            cum, cp = _cum_and_cp(seq)
            if cum.size == 0:
                continue
            if cp >= len(cum):
                levels.append(float(cum.max()))
            else:
                levels.extend(np.maximum.accumulate(cum[cp:]).tolist())
    levels = np.unique(np.asarray(levels))
    return np.concatenate([levels, [levels[-1] + 1.0]])


def compute_aa_curves(per_user_sequences: Mapping[str, Sequence], h_grid: Sequence[float] | None = None) -> AaCurves:
    """Per-user PFD/PND/ADD over the h grid, averaged across users.

    Sequences are objects with ``cumulative`` and ``change_point`` (or
    ``(cumulative, change_point)`` pairs); change_point equal to the length
    marks a genuine-only sequence.
    """
    h = default_h_grid(per_user_sequences) if h_grid is None else np.asarray(sorted(h_grid), dtype=float)
    per_user: dict[str, UserAaCurve] = {}
    excluded: dict[str, str] = {}
    for uid, seqs in per_user_sequences.items():
        try:
            per_user[uid] = user_aa_curve(seqs, h)
        except ValueError as exc:
            excluded[uid] = str(exc)
            log.info("user %s excluded from AA curves: %s", uid, exc)
    if not per_user:
        raise ValueError("no user has both genuine-only and change-point sequences")
    curves = list(per_user.values())
    pfd = np.mean([c.pfd for c in curves], axis=0)
    pnd = np.mean([c.pnd for c in curves], axis=0)
    add = np.mean([c.add for c in curves], axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        add_det = np.nanmean([c.add_detected for c in curves], axis=0)
    eer, h_at, add_at = crossing(h, pfd, pnd, add)
    user_eers = [crossing(h, c.pfd, c.pnd)[0] for c in curves]
    return AaCurves(h, pfd, pnd, add, add_det, per_user, eer, h_at, add_at, float(np.mean(user_eers)), excluded)
