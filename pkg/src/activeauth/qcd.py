"""Active authentication by CUSUM over per-session log-likelihood ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

DENSITY_FLOOR = 1e-6
MIN_SCORES = 10
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class InsufficientDataError(ValueError):
    pass


def silverman_bandwidth(x: np.ndarray) -> float:
    """0.9 * min(std, IQR / 1.34) * n^(-1/5), with fallbacks for flat data."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd
    if spread <= 0:
        spread = 1e-3
    return 0.9 * spread * x.size ** (-0.2)


@dataclass(frozen=True, eq=False)
class GaussianKDE:
    points: np.ndarray
    bandwidth: float

    @classmethod
    def fit(cls, x: Sequence[float]) -> "GaussianKDE":
        x = np.sort(np.asarray(x, dtype=float))
        return cls(x, silverman_bandwidth(x))

    def __call__(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty(q.shape)
        h = self.bandwidth
        for s in range(0, q.size, 2048):
            z = (q[s : s + 2048, None] - self.points[None, :]) / h
            out[s : s + 2048] = np.exp(-0.5 * z * z).sum(axis=1)
        return out / (self.points.size * h * _SQRT_2PI)


@dataclass(frozen=True, eq=False)
class ScoreDensityPair:
    """Genuine and impostor fused-score densities, floored when queried."""

    f_genuine: Callable[[np.ndarray], np.ndarray]
    f_impostor: Callable[[np.ndarray], np.ndarray]
    floor: float = DENSITY_FLOOR
    meta: dict[str, Any] = field(default_factory=dict)

    def genuine(self, x) -> np.ndarray:
        return np.maximum(self.f_genuine(np.atleast_1d(np.asarray(x, dtype=float))), self.floor)

    def impostor(self, x) -> np.ndarray:
        return np.maximum(self.f_impostor(np.atleast_1d(np.asarray(x, dtype=float))), self.floor)


def fit_densities(genuine_scores: Sequence[float], impostor_scores: Sequence[float], floor: float = DENSITY_FLOOR) -> ScoreDensityPair:
    g = np.asarray(genuine_scores, dtype=float)
    i = np.asarray(impostor_scores, dtype=float)
    for name, a in (("genuine", g), ("impostor", i)):
        if a.size < MIN_SCORES:
            raise InsufficientDataError(
                f"{a.size} {name} scores; density fitting needs >= {MIN_SCORES}, enroll more training data"
            )
        if np.any((a <= 0) | (a >= 1)):
            raise ValueError(f"{name} scores must lie in (0, 1)")
    kg, ki = GaussianKDE.fit(g), GaussianKDE.fit(i)
    meta = {
        "estimator": "gaussian_kde",
        "bandwidth_rule": "silverman",
        "bandwidth_genuine": kg.bandwidth,
        "bandwidth_impostor": ki.bandwidth,
        "n_genuine": int(g.size),
        "n_impostor": int(i.size),
        "floor": floor,
    }
    return ScoreDensityPair(kg, ki, floor, meta)


def llr(densities: ScoreDensityPair, fused_score) -> float | np.ndarray:
    """log(f_I / f_G); negative where the genuine density dominates."""
    out = np.log(densities.impostor(fused_score)) - np.log(densities.genuine(fused_score))
    return float(out[0]) if np.ndim(fused_score) == 0 else out


@dataclass(frozen=True)
class QcdState:
    threshold: float
    cumulative: float = 0.0
    j: int = 0
    detected_at: int | None = None


def qcd_step(state: QcdState, L: float) -> QcdState:
    cum = max(state.cumulative + L, 0.0)
    j = state.j + 1
    detected = state.detected_at
    if detected is None and cum >= state.threshold:
        detected = j
    return replace(state, cumulative=cum, j=j, detected_at=detected)


def cusum_path(L: Sequence[float]) -> np.ndarray:
    """Clamped cumulative sum after each step, starting from 0."""
    out = np.empty(len(L))
    c = 0.0
    for k, v in enumerate(L):
        c = max(c + v, 0.0)
        out[k] = c
    return out


@dataclass(frozen=True, eq=False)
class DetectionTrace:
    fused: np.ndarray
    L: np.ndarray
    cumulative: np.ndarray
    change_point: int  # number of genuine sessions before the first impostor one
    threshold: float

    @property
    def n(self) -> int:
        return len(self.fused)

    @property
    def detected(self) -> np.ndarray:
        return self.cumulative >= self.threshold

    @property
    def detected_at(self) -> int | None:
        hits = np.flatnonzero(self.detected)
        return int(hits[0]) + 1 if hits.size else None

    @property
    def false_detection(self) -> bool:
        return bool(np.any(self.detected[: self.change_point]))

    @property
    def delay(self) -> int | None:
        """Sessions from the change point to the first post-change crossing (1-based)."""
        hits = np.flatnonzero(self.detected[self.change_point :])
        if self.change_point >= self.n or not hits.size:
            return None
        return int(hits[0]) + 1


def run_aa(ordered_session_scores: Sequence[tuple[float, str]], densities: ScoreDensityPair, h: float) -> DetectionTrace:
    """CUSUM trace over (fused, label) pairs, labels 'genuine' then 'impostor'."""
    fused = np.array([f for f, _ in ordered_session_scores], dtype=float)
    labels = [lab for _, lab in ordered_session_scores]
    cp = len(labels)
    for k, lab in enumerate(labels):
        if lab != "genuine":
            cp = k
            break
    if any(lab == "genuine" for lab in labels[cp:]):
        raise ValueError("sequence must be a genuine prefix followed by an impostor suffix")
    L = llr(densities, fused) if fused.size else np.zeros(0)
    return DetectionTrace(fused, np.asarray(L, dtype=float), cusum_path(L), cp, float(h))
