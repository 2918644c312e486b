"""Enrollment, OTA scoring and AA evaluation over a day-split dataset."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import evaluation, qcd
from .data import (
    ALL_CHANNELS,
    BEHAVIOR_CHANNELS,
    BIOMETRIC_CHANNELS,
    ChannelId,
    Dataset,
    Session,
    split_by_days,
)
from .features import DEFAULT_BURST_GAP, DIMENSIONS, session_samples
from .fusion import (
    ChannelScore,
    NormalizationParams,
    SessionScore,
    fit_normalization,
    fuse_session,
    normalize_score,
)
from .profiler import DEFAULT_SLOTS_PER_DAY, BehaviorTemplate, build_template, score_session
from .rng import stream, sub_seed
from .svm import DegenerateDataError, HyperGrid, TrainedVerifier, train_verifier
from .synth import AaSequence, make_aa_sequences

log = logging.getLogger(__name__)

SessionKey = tuple[str, str]  # (owner user_id, session_id)
RawScores = dict[SessionKey, dict[ChannelId, float]]


@dataclass(frozen=True)
class PipelineConfig:
    channels: tuple[ChannelId, ...] = ALL_CHANNELS
    slots_per_day: int = DEFAULT_SLOTS_PER_DAY
    train_fraction: float = 0.6
    grid: HyperGrid = field(default_factory=HyperGrid)
    impostor_ratio: float = 3.0
    burst_gap: float = DEFAULT_BURST_GAP
    count_test_duplicates: bool = False
    impute_missing: bool = False
    seed: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "channels": [c.value for c in self.channels],
            "slots_per_day": self.slots_per_day,
            "train_fraction": self.train_fraction,
            "grid": self.grid.to_json(),
            "impostor_ratio": self.impostor_ratio,
            "burst_gap": self.burst_gap,
            "count_test_duplicates": self.count_test_duplicates,
            "impute_missing": self.impute_missing,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "PipelineConfig":
        doc = dict(doc)
        if "channels" in doc:
            doc["channels"] = tuple(ChannelId.parse(c) for c in doc["channels"])
        if "grid" in doc and not isinstance(doc["grid"], HyperGrid):
            doc["grid"] = HyperGrid.from_json(doc["grid"])
        return cls(**doc)


class FeatureCache:
    """Lazily extracted per-session feature matrices."""

    def __init__(self, burst_gap: float = DEFAULT_BURST_GAP):
        self.burst_gap = burst_gap
        self._cache: dict[tuple[str, str, ChannelId], np.ndarray] = {}

    def get(self, s: Session, ch: ChannelId) -> np.ndarray:
        key = (s.user_id, s.session_id, ch)
        if key not in self._cache:
            self._cache[key] = session_samples(s, ch, self.burst_gap)
        return self._cache[key]


@dataclass
class UserModel:
    user_id: str
    templates: dict[ChannelId, BehaviorTemplate]
    verifiers: dict[ChannelId, TrainedVerifier]
    normalization: NormalizationParams
    # held-out raw scores of every user's last training day against this user
    calibration: RawScores
    skipped: dict[ChannelId, str] = field(default_factory=dict)
    validation_day: int = -1

    @property
    def channels(self) -> tuple[ChannelId, ...]:
        return tuple(c for c in ALL_CHANNELS if c in self.normalization.stats)

    def to_json(self) -> dict[str, Any]:
        return {
            "format_version": 1,
            "user_id": self.user_id,
            "validation_day": self.validation_day,
            "templates": {ch.value: t.to_json() for ch, t in self.templates.items()},
            "verifiers": {ch.value: v.to_json() for ch, v in self.verifiers.items()},
            "normalization": self.normalization.to_json(),
            "calibration": [
                [owner, sid, {ch.value: v for ch, v in raw.items()}]
                for (owner, sid), raw in self.calibration.items()
            ],
            "skipped": {ch.value: why for ch, why in self.skipped.items()},
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "UserModel":
        if doc.get("format_version") != 1:
            raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
        return cls(
            user_id=doc["user_id"],
            templates={ChannelId.parse(k): BehaviorTemplate.from_json(v) for k, v in doc["templates"].items()},
            verifiers={ChannelId.parse(k): TrainedVerifier.from_json(v) for k, v in doc["verifiers"].items()},
            normalization=NormalizationParams.from_json(doc["normalization"]),
            calibration={
                (owner, sid): {ChannelId.parse(k): float(v) for k, v in raw.items()}
                for owner, sid, raw in doc["calibration"]
            },
            skipped={ChannelId.parse(k): why for k, why in doc["skipped"].items()},
            validation_day=int(doc["validation_day"]),
        )


def _behavior_events(sessions: Iterable[Session], ch: ChannelId):
    return [ev for s in sessions for ev in s.behavior_events(ch)]


def _validation_day(sessions: Sequence[Session]) -> int:
    return max(s.day_index for s in sessions)


def enroll_user(
    uid: str,
    train: Dataset,
    features: FeatureCache,
    cfg: PipelineConfig,
) -> UserModel:
    """Templates, verifiers and normalization for one user.

    Genuine calibration scores are held out: leave-one-day-out templates for
    behavior channels, out-of-fold decision values for biometric channels.
    Other users' last training day never enters this user's impostor set, so
    their sessions on that day can be scored honestly for density fitting.
    """
    own = train.users[uid]
    tz = train.timezone
    vday = {u: _validation_day(ss) for u, ss in train.users.items()}
    skipped: dict[ChannelId, str] = {}
    templates: dict[ChannelId, BehaviorTemplate] = {}
    verifiers: dict[ChannelId, TrainedVerifier] = {}
    genuine_cal: dict[ChannelId, dict[str, float]] = {}
    days = sorted({s.day_index for s in own})

    for ch in cfg.channels:
        if ch in BEHAVIOR_CHANNELS:
            templates[ch] = build_template(_behavior_events(own, ch), cfg.slots_per_day, tz, ch)
            per_session = {}
            for d in days:
                held = [s for s in own if s.day_index == d]
                rest = [s for s in own if s.day_index != d]
                tpl = build_template(_behavior_events(rest, ch), cfg.slots_per_day, tz, ch)
                for s in held:
                    if s.has_channel(ch):
                        per_session[s.session_id] = float(
                            score_session(tpl, s.behavior_events(ch), cfg.count_test_duplicates)
                        )
            genuine_cal[ch] = per_session
            continue

        gen_rows, gen_sid = [], []
        for s in own:
            X = features.get(s, ch)
            gen_rows.append(X)
            gen_sid.extend([s.session_id] * len(X))
        G = np.vstack(gen_rows) if gen_rows else np.zeros((0, DIMENSIONS[ch]))
        pool = [
            features.get(s, ch)
            for other, ss in train.users.items()
            if other != uid
            for s in ss
            if s.day_index != vday[other]
        ]
        I = np.vstack(pool) if pool else np.zeros((0, DIMENSIONS[ch]))
        if len(G) < 2 or len(I) < 2:
            skipped[ch] = f"{len(G)} genuine / {len(I)} impostor training vectors"
            continue
        cap = int(np.ceil(cfg.impostor_ratio * len(G)))
        if len(I) > cap:
            pick = np.sort(stream(cfg.seed, "impostors", uid, ch.value).choice(len(I), cap, replace=False))
            I = I[pick]
        try:
            model = train_verifier(G, I, cfg.grid, sub_seed(cfg.seed, "svm", uid, ch.value), ch, uid)
        except DegenerateDataError as exc:
            skipped[ch] = str(exc)
            continue
        verifiers[ch] = model
        oof = model.oof_scores[: len(G)]
        sums: dict[str, list[float]] = {}
        for sid, v in zip(gen_sid, oof):
            sums.setdefault(sid, []).append(float(v))
        genuine_cal[ch] = {sid: float(np.mean(v)) for sid, v in sums.items()}

    norm = fit_normalization({ch: list(v.values()) for ch, v in genuine_cal.items()})
    for ch, why in norm.excluded.items():
        skipped.setdefault(ch, why)

    # validation-day calibration: own sessions use held-out scores, others the full models
    calibration: RawScores = {}
    for other, ss in train.users.items():
        for s in ss:
            if s.day_index != vday[other]:
                continue
            if other == uid:
                raw = {ch: genuine_cal[ch][s.session_id] for ch in genuine_cal if s.session_id in genuine_cal[ch]}
            else:
                raw = _raw_scores(s, templates, verifiers, features, cfg)
            calibration[(other, s.session_id)] = raw
    for ch, why in skipped.items():
        log.info("user %s channel %s skipped: %s", uid, ch, why)
    return UserModel(uid, templates, verifiers, norm, calibration, skipped, vday[uid])


def _raw_scores(
    s: Session,
    templates: Mapping[ChannelId, BehaviorTemplate],
    verifiers: Mapping[ChannelId, TrainedVerifier],
    features: FeatureCache,
    cfg: PipelineConfig,
) -> dict[ChannelId, float]:
    out: dict[ChannelId, float] = {}
    for ch, tpl in templates.items():
        if s.has_channel(ch):
            out[ch] = float(score_session(tpl, s.behavior_events(ch), cfg.count_test_duplicates))
    for ch, model in verifiers.items():
        X = features.get(s, ch)
        if len(X):
            out[ch] = float(np.mean(model.decision(X)))
    return out


def score_sessions(
    model: UserModel, sessions: Iterable[Session], features: FeatureCache, cfg: PipelineConfig
) -> RawScores:
    """Raw per-channel scores of sessions claimed as ``model.user_id``."""
    out: RawScores = {}
    by_channel: dict[ChannelId, list[tuple[SessionKey, np.ndarray]]] = {}
    for s in sessions:
        key = (s.user_id, s.session_id)
        raw = out.setdefault(key, {})
        for ch, tpl in model.templates.items():
            if s.has_channel(ch):
                raw[ch] = float(score_session(tpl, s.behavior_events(ch), cfg.count_test_duplicates))
        for ch in model.verifiers:
            X = features.get(s, ch)
            if len(X):
                by_channel.setdefault(ch, []).append((key, X))
    # one kernel evaluation per channel
    for ch, items in by_channel.items():
        values = model.verifiers[ch].decision(np.vstack([X for _, X in items]))
        pos = 0
        for key, X in items:
            out[key][ch] = float(np.mean(values[pos : pos + len(X)]))
            pos += len(X)
    return out


def fuse_raw(
    raw: Mapping[ChannelId, float],
    norm: NormalizationParams,
    subset: Sequence[ChannelId],
    key: SessionKey,
    claimed: str,
    impute_missing: bool = False,
) -> SessionScore | None:
    usable = [ch for ch in subset if ch in raw and ch in norm.stats]
    if not usable:
        return None
    scores = [ChannelScore(ch, raw[ch], normalize_score(norm, ch, raw[ch])) for ch in usable]
    fitted = [ch for ch in subset if ch in norm.stats]
    return fuse_session(scores, "mean", key[1], key[0], claimed, fitted, impute_missing)


class OtaError(RuntimeError):
    pass


@dataclass
class Experiment:
    """Enrolled models plus raw test scores for every (claimed user, session)."""

    cfg: PipelineConfig
    train: Dataset
    test: Dataset
    models: dict[str, UserModel]
    test_scores: dict[str, RawScores]  # claimed user -> scores

    def run_ota(self, subset: Sequence[ChannelId]) -> dict[str, list[SessionScore]]:
        """Fused scores per claimed user: its own test sessions and everyone else's."""
        subset = tuple(subset)
        if not subset:
            raise ValueError("empty channel subset")
        out: dict[str, list[SessionScore]] = {}
        for uid, model in self.models.items():
            rows = []
            for key, raw in self.test_scores[uid].items():
                sc = fuse_raw(raw, model.normalization, subset, key, uid, self.cfg.impute_missing)
                if sc is None:
                    log.debug("session %s has no usable channel in %s", key, [c.value for c in subset])
                    continue
                rows.append(sc)
            if not any(r.genuine for r in rows):
                raise OtaError(f"user {uid} has no usable genuine test session for {[c.value for c in subset]}")
            out[uid] = rows
        return out

    def ota_eer(self, subset: Sequence[ChannelId]) -> tuple[float, dict[str, evaluation.RocCurve]]:
        """Mean per-user EER (percent) and the per-user curves."""
        per_user = {}
        for uid, rows in self.run_ota(subset).items():
            g = [r.fused for r in rows if r.genuine]
            i = [r.fused for r in rows if not r.genuine]
            if not i:
                continue
            per_user[uid] = evaluation.compute_eer(g, i)
        return float(np.mean([c.eer for c in per_user.values()])), per_user

    def calibration_scores(self, subset: Sequence[ChannelId]) -> tuple[list[float], list[float]]:
        gen, imp = [], []
        for uid, model in self.models.items():
            for key, raw in model.calibration.items():
                sc = fuse_raw(raw, model.normalization, subset, key, uid, self.cfg.impute_missing)
                if sc is None:
                    continue
                (gen if sc.genuine else imp).append(sc.fused)
        return gen, imp

    def densities(self, subset: Sequence[ChannelId]) -> qcd.ScoreDensityPair:
        gen, imp = self.calibration_scores(subset)
        return qcd.fit_densities(gen, imp)

    def aa_traces(
        self,
        subset: Sequence[ChannelId],
        sequences: Mapping[str, list[AaSequence]],
        densities: qcd.ScoreDensityPair,
        h: float = float("inf"),
    ) -> dict[str, list[qcd.DetectionTrace]]:
        """CUSUM traces; sessions without a fused score for the subset are skipped."""
        out = {}
        for uid, seqs in sequences.items():
            if uid not in self.models:
                continue
            model = self.models[uid]
            traces = []
            for seq in seqs:
                pairs = []
                for pos, key in enumerate(seq.sessions):
                    raw = self.test_scores[uid][key]
                    sc = fuse_raw(raw, model.normalization, subset, key, uid, self.cfg.impute_missing)
                    if sc is not None:
                        pairs.append((sc.fused, "genuine" if pos < seq.change_point else "impostor"))
                traces.append(qcd.run_aa(pairs, densities, h))
            out[uid] = traces
        return out

    def evaluate_aa(
        self,
        subset: Sequence[ChannelId],
        genuine_len: int = 15,
        impostor_len: int = 15,
        pairs_per_user: int = 10,
        h_grid: Sequence[float] | None = None,
    ) -> tuple[evaluation.AaCurves, dict[str, list[qcd.DetectionTrace]], qcd.ScoreDensityPair]:
        dens = self.densities(subset)
        seqs = make_aa_sequences(
            self.test, genuine_len, impostor_len, pairs_per_user, sub_seed(self.cfg.seed, "aa")
        )
        traces = self.aa_traces(subset, seqs, dens)
        curves = evaluation.compute_aa_curves(traces, h_grid)
        # report detections at the operating point
        traces = {
            u: [qcd.DetectionTrace(t.fused, t.L, t.cumulative, t.change_point, curves.h_at_eer) for t in ts]
            for u, ts in traces.items()
        }
        return curves, traces, dens


_WORKER: dict[str, Any] = {}


def _worker_init(train: Dataset, cfg: PipelineConfig) -> None:
    _WORKER.update(train=train, cfg=cfg, features=FeatureCache(cfg.burst_gap))


def _worker_enroll(uid: str) -> UserModel:
    return enroll_user(uid, _WORKER["train"], _WORKER["features"], _WORKER["cfg"])


def enroll_all(
    dataset: Dataset, cfg: PipelineConfig, features: FeatureCache | None = None, jobs: int = 1
) -> tuple[Dataset, Dataset, dict[str, UserModel], FeatureCache]:
    """Split by days and enroll every user; ``jobs > 1`` trains users in worker processes."""
    features = features or FeatureCache(cfg.burst_gap)
    train, test = split_by_days(dataset, cfg.train_fraction)
    uids = list(train.users)
    if jobs > 1 and len(uids) > 1:
        with ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=(train, cfg)) as ex:
            models = dict(zip(uids, ex.map(_worker_enroll, uids)))
    else:
        models = {uid: enroll_user(uid, train, features, cfg) for uid in uids}
    return train, test, models, features


def experiment_from_models(
    dataset: Dataset, cfg: PipelineConfig, models: Mapping[str, UserModel], features: FeatureCache | None = None
) -> Experiment:
    """Score the test days of ``dataset`` against already enrolled models."""
    features = features or FeatureCache(cfg.burst_gap)
    train, test = split_by_days(dataset, cfg.train_fraction)
    missing = sorted(set(test.users) - set(models))
    if missing:
        raise OtaError(f"no enrolled model for users {missing}")
    models = {u: models[u] for u in test.users}
    test_sessions = list(test.sessions())
    scores = {uid: score_sessions(m, test_sessions, features, cfg) for uid, m in models.items()}
    return Experiment(cfg, train, test, dict(models), scores)


def build_experiment(dataset: Dataset, cfg: PipelineConfig, jobs: int = 1) -> Experiment:
    _, _, models, features = enroll_all(dataset, cfg, jobs=jobs)
    return experiment_from_models(dataset, cfg, models, features)


TABLE_COLUMNS = ("Acc.", "+WiFi", "+GPS", "+AppUsage", "All")
_COLUMN_EXTRA = {
    "Acc.": (),
    "+WiFi": (ChannelId.WIFI,),
    "+GPS": (ChannelId.GPS,),
    "+AppUsage": (ChannelId.APPS,),
    "All": BEHAVIOR_CHANNELS,
}


def table_rows(channels: Sequence[ChannelId]) -> dict[str, tuple[ChannelId, ...]]:
    """Biometric systems on the enrolled channels, plus their combination."""
    bio = [c for c in BIOMETRIC_CHANNELS if c in channels]
    rows = {c.value: (c,) for c in bio}
    if len(bio) > 1:
        rows["combined"] = tuple(bio)
    return rows


def table_subset(row: Sequence[ChannelId], column: str, channels: Sequence[ChannelId]) -> tuple[ChannelId, ...] | None:
    extra = _COLUMN_EXTRA[column]
    if any(c not in channels for c in extra):
        return None
    return tuple(row) + tuple(extra)
