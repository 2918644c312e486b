"""Tanh score normalization and mean-rule fusion of per-channel session scores."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .data import ChannelId

log = logging.getLogger(__name__)

TANH_SCALE = 0.01
SIGMA_FLOOR = 1e-9
IMPUTED_SCORE = 0.5


class NotFittedError(KeyError):
    pass


@dataclass(frozen=True)
class ChannelScore:
    channel: ChannelId
    raw: float
    normalized: float | None = None


@dataclass(frozen=True)
class NormalizationParams:
    # channel -> (mu_G, sigma_G) from genuine training scores
    stats: Mapping[ChannelId, tuple[float, float]]
    excluded: Mapping[ChannelId, str] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "stats": {c.value: [mu, sd] for c, (mu, sd) in self.stats.items()},
            "excluded": {c.value: why for c, why in self.excluded.items()},
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "NormalizationParams":
        return cls(
            stats={ChannelId.parse(c): (float(v[0]), float(v[1])) for c, v in doc["stats"].items()},
            excluded={ChannelId.parse(c): why for c, why in doc.get("excluded", {}).items()},
        )


def fit_normalization(genuine_train_scores: Mapping[ChannelId, Sequence[float]]) -> NormalizationParams:
    """Mean and population std of each channel's genuine training scores."""
    stats: dict[ChannelId, tuple[float, float]] = {}
    excluded: dict[ChannelId, str] = {}
    for ch, scores in genuine_train_scores.items():
        a = np.asarray(scores, dtype=float)
        if a.size < 2:
            excluded[ch] = f"{a.size} genuine training score(s); need >= 2"
            log.info("channel %s not normalizable: %s", ch, excluded[ch])
            continue
        stats[ch] = (float(a.mean()), max(float(a.std()), SIGMA_FLOOR))
    return NormalizationParams(stats, excluded)


def normalize_score(params: NormalizationParams, channel: ChannelId, raw: float) -> float:
    """0.5 * (tanh(0.01 * (raw - mu) / sigma) + 1)."""
    try:
        mu, sd = params.stats[channel]
    except KeyError:
        raise NotFittedError(f"channel {channel} has no normalization parameters") from None
    return 0.5 * (math.tanh(TANH_SCALE * (raw - mu) / sd) + 1.0)


@dataclass(frozen=True)
class SessionScore:
    session_id: str
    user_id: str  # owner of the session
    claimed_user: str  # owner of the models it was scored against
    channels: tuple[ChannelScore, ...]
    fused: float

    @property
    def contributing_channels(self) -> tuple[ChannelId, ...]:
        return tuple(c.channel for c in self.channels)

    @property
    def genuine(self) -> bool:
        return self.user_id == self.claimed_user


class FusionError(ValueError):
    pass


def fuse_session(
    normalized: Iterable[ChannelScore],
    rule: str = "mean",
    session_id: str = "",
    user_id: str = "",
    claimed_user: str = "",
    subset: Sequence[ChannelId] | None = None,
    impute_missing: bool = False,
) -> SessionScore:
    """Mean of normalized scores over the channels present.

    With ``impute_missing`` every channel of ``subset`` absent from the
    session counts as 0.5 instead of being left out.
    """
    if rule != "mean":
        raise ValueError(f"unsupported fusion rule {rule!r}")
    scores = tuple(normalized)
    if not scores:
        raise FusionError("no channel scores to fuse")
    values = []
    for cs in scores:
        if cs.normalized is None:
            raise FusionError(f"channel {cs.channel} is not normalized")
        values.append(cs.normalized)
    if impute_missing and subset is not None:
        present = {cs.channel for cs in scores}
        values.extend(IMPUTED_SCORE for ch in subset if ch not in present)
    fused = math.fsum(values) / len(values)
    return SessionScore(session_id, user_id, claimed_user, scores, fused)
