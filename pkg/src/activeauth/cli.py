"""Command-line entry point: ``activeauth <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import evaluation, reports
from .data import ALL_CHANNELS, BEHAVIOR_CHANNELS, BIOMETRIC_CHANNELS, ChannelId, DataError, load_dataset
from .features import FEATURE_NAMES, SkipSample, session_samples
from .pipeline import (
    TABLE_COLUMNS,
    Experiment,
    PipelineConfig,
    UserModel,
    enroll_all,
    experiment_from_models,
    fuse_raw,
    table_rows,
    table_subset,
)
from .synth import GeneratorConfig, write_dataset

log = logging.getLogger("activeauth")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _read_json(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        with open(p, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"{p}: expected a JSON object")
    return doc


def _overrides(args: argparse.Namespace, mapping: Mapping[str, str]) -> dict[str, Any]:
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr, None) is not None}


def parse_channels(text: str) -> tuple[ChannelId, ...]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if not names:
        raise UsageError("empty channel subset")
    groups = {"all": ALL_CHANNELS, "biometric": BIOMETRIC_CHANNELS, "behavior": BEHAVIOR_CHANNELS}
    chans: list[ChannelId] = []
    for n in names:
        if n.lower() in groups:
            chans.extend(groups[n.lower()])
            continue
        try:
            chans.append(ChannelId.parse(n))
        except ValueError as exc:
            raise UsageError(f"{exc} (or all, biometric, behavior)") from exc
    # canonical order, no repeats
    return tuple(c for c in ALL_CHANNELS if c in chans)


def _subset_name(subset: Sequence[ChannelId]) -> str:
    return "+".join(c.value for c in subset)


def _dataset_path(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "sessions.jsonl"
    if not p.is_file():
        raise UsageError(f"dataset not found: {path}")
    return p


def _load(path: Path, tz: str):
    return load_dataset(path, tz=tz)


def _parse_h_grid(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --h-grid: {text}") from exc
    if not values:
        raise UsageError("empty --h-grid")
    return values


class _Models:
    """Artifacts written by ``enroll``."""

    def __init__(self, root: str):
        self.root = Path(root)
        index = self.root / "enroll.json"
        if not index.is_file():
            raise UsageError(f"no enrolled models in {root} (missing enroll.json)")
        with open(index, encoding="utf-8") as fh:
            self.index = json.load(fh)
        self.cfg = PipelineConfig.from_json(self.index["pipeline"])
        self.timezone = self.index.get("timezone", "UTC")

    def files(self) -> list[Path]:
        return [self.root / "enroll.json"] + [self.user_file(u) for u in self.index["users"]]

    def user_file(self, uid: str) -> Path:
        return self.root / "users" / f"{uid}.json"

    def load(self) -> dict[str, UserModel]:
        out = {}
        for uid in self.index["users"]:
            with open(self.user_file(uid), encoding="utf-8") as fh:
                out[uid] = UserModel.from_json(json.load(fh))
        return out


def _experiment(args) -> tuple[Experiment, _Models, Path]:
    models = _Models(args.models)
    data = _dataset_path(args.dataset)
    digest = reports.sha256(data)
    if models.index.get("dataset_sha256") not in (None, digest):
        log.warning("dataset digest differs from the one used at enrollment")
    ds = _load(data, models.timezone)
    return experiment_from_models(ds, models.cfg, models.load()), models, data


def _subsets(args, enrolled: Sequence[ChannelId]) -> list[tuple[ChannelId, ...]]:
    if not args.subset:
        return [tuple(enrolled)]
    out = []
    for text in args.subset:
        sub = parse_channels(text)
        missing = [c.value for c in sub if c not in enrolled]
        if missing:
            raise UsageError(f"channels {missing} were not enrolled")
        out.append(sub)
    return out


def _enrolled_channels(exp: Experiment) -> tuple[ChannelId, ...]:
    present = {c for m in exp.models.values() for c in m.channels}
    return tuple(c for c in exp.cfg.channels if c in present)


SCORE_COLUMNS = ("user_id", "session_id", "claimed_user", "label", "channel", "raw", "normalized", "fused")


def _score_rows(exp: Experiment, subset: Sequence[ChannelId]):
    for uid, model in exp.models.items():
        for key, raw in exp.test_scores[uid].items():
            sc = fuse_raw(raw, model.normalization, subset, key, uid, exp.cfg.impute_missing)
            if sc is None:
                continue
            label = "genuine" if sc.genuine else "impostor"
            for c in sc.channels:
                yield (key[0], key[1], uid, label, c.channel.value, c.raw, c.normalized, None)
            yield (key[0], key[1], uid, label, "fused", None, None, sc.fused)


def _common_meta(exp: Experiment, extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    meta = {"users": len(exp.models), "seed": exp.cfg.seed}
    meta.update(extra or {})
    return meta


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> tuple[dict, list[Path], list[Path]]:
    doc = _read_json(args.config)
    doc.update(
        _overrides(
            args,
            {
                "seed": "seed",
                "n_users": "n_users",
                "days": "days_per_user",
                "sessions_per_day": "sessions_per_day",
                "separability": "separability",
                "presence": "presence",
            },
        )
    )
    try:
        cfg = GeneratorConfig.from_json(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad generator config: {exc}") from exc
    path = write_dataset(cfg, args.out_dir)
    return cfg.to_json(), [Path(args.config)], [path, Path(args.out_dir) / "generator.json"]


def cmd_enroll(args):
    doc = _read_json(args.config) if args.config else {}
    doc.update(
        _overrides(
            args,
            {
                "seed": "seed",
                "slots_per_day": "slots_per_day",
                "train_fraction": "train_fraction",
                "impostor_ratio": "impostor_ratio",
                "burst_gap": "burst_gap",
            },
        )
    )
    if args.channels is not None:
        doc["channels"] = [c.value for c in parse_channels(args.channels)]
    try:
        cfg = PipelineConfig.from_json(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad pipeline config: {exc}") from exc
    if not cfg.channels:
        raise UsageError("empty channel list")
    data = _dataset_path(args.dataset)
    ds = _load(data, args.timezone)
    train, _, models, _ = enroll_all(ds, cfg, jobs=args.jobs)
    if not models:
        raise RuntimeError("no user has enough training days to enroll")

    out = Path(args.out_dir)
    written = []
    for uid, m in models.items():
        written.append(reports.write_json(out / "users" / f"{uid}.json", m.to_json()))
        for ch, why in m.skipped.items():
            print(f"user {uid}: channel {ch.value} skipped ({why})", file=sys.stderr)
    for uid, why in train.skipped.items():
        print(f"user {uid} skipped ({why})", file=sys.stderr)
    index = {
        "pipeline": cfg.to_json(),
        "timezone": args.timezone,
        "dataset_sha256": reports.sha256(data),
        "users": list(models),
        "skipped_users": dict(train.skipped),
        "skipped_channels": {u: {c.value: w for c, w in m.skipped.items()} for u, m in models.items() if m.skipped},
    }
    written.insert(0, reports.write_json(out / "enroll.json", index))
    return cfg.to_json(), [data], written


def cmd_score(args):
    exp, models, data = _experiment(args)
    subset = _subsets(args, _enrolled_channels(exp))[0]
    path = reports.write_csv(
        Path(args.out_dir) / "scores.csv",
        SCORE_COLUMNS,
        _score_rows(exp, subset),
        _common_meta(exp, {"convention": evaluation.OTA_CONVENTION, "subset": _subset_name(subset)}),
    )
    return {"pipeline": exp.cfg.to_json(), "subset": _subset_name(subset)}, [data, *models.files()], [path]


def cmd_evaluate_ota(args):
    exp, models, data = _experiment(args)
    enrolled = _enrolled_channels(exp)
    subsets = _subsets(args, enrolled)
    out = Path(args.out_dir)
    meta = _common_meta(exp, {"convention": evaluation.OTA_CONVENTION})

    written = [
        reports.write_csv(out / "scores.csv", SCORE_COLUMNS, _score_rows(exp, subsets[0]),
                          {**meta, "subset": _subset_name(subsets[0])})
    ]

    # ROC curves for each single channel plus the requested fusions
    systems = [(c,) for c in enrolled] + [s for s in subsets if len(s) > 1]
    roc_rows, summary_rows = [], []
    for sub in systems:
        eer, curves = exp.ota_eer(sub)
        name = _subset_name(sub)
        summary_rows.append((name, len(sub), eer, 100.0 - eer, len(curves)))
        for uid, roc in curves.items():
            for t, fa, fr in zip(roc.thresholds, roc.far, roc.frr):
                roc_rows.append((name, uid, t, fa, fr))
    written.append(reports.write_csv(out / "roc.csv", ("system", "claimed_user", "threshold", "far", "frr"), roc_rows, meta))
    written.append(
        reports.write_csv(out / "summary.csv", ("system", "n_channels", "eer_mean", "accuracy", "n_users"), summary_rows, meta)
    )

    # accuracy table: biometric rows crossed with behavior additions
    table = []
    for rname, row in table_rows(enrolled).items():
        cells = []
        for col in TABLE_COLUMNS:
            sub = table_subset(row, col, enrolled)
            cells.append(None if sub is None else 100.0 - exp.ota_eer(sub)[0])
        table.append((rname, *cells))
    written.append(reports.write_csv(out / "table.csv", ("system", *TABLE_COLUMNS), table, meta))
    print(",".join(("system", *TABLE_COLUMNS)))
    for r in table:
        print(",".join(reports.fmt(v if not isinstance(v, float) else round(v, 1)) for v in r))
    return {"pipeline": exp.cfg.to_json(), "subsets": [_subset_name(s) for s in subsets]}, [data, *models.files()], written


def cmd_evaluate_aa(args):
    if args.impostor_len < 1:
        raise UsageError("--impostor-len must be at least 1; without impostor sessions there is nothing to detect")
    if args.genuine_len < 0 or args.pairs_per_user < 1:
        raise UsageError("--genuine-len must be >= 0 and --pairs-per-user >= 1")
    h_grid = _parse_h_grid(args.h_grid)
    exp, models, data = _experiment(args)
    enrolled = _enrolled_channels(exp)
    subsets = _subsets(args, enrolled)
    out = Path(args.out_dir)
    meta = _common_meta(
        exp,
        {
            "convention": evaluation.AA_CONVENTION,
            "h_grid": "default" if h_grid is None else ",".join(map(reports.fmt, h_grid)),
            "sequences": f"{args.genuine_len}+{args.impostor_len} x {args.pairs_per_user} per user",
        },
    )
    curve_rows, summary_rows, trace_rows = [], [], []
    for k, sub in enumerate(subsets):
        name = _subset_name(sub)
        ota = exp.ota_eer(sub)[0]
        curves, traces, _ = exp.evaluate_aa(sub, args.genuine_len, args.impostor_len, args.pairs_per_user, h_grid)
        for i in range(len(curves.h)):
            curve_rows.append((name, curves.h[i], curves.pfd[i], curves.pnd[i], curves.add[i], curves.add_detected[i]))
        summary_rows.append(
            (name, 100.0 - ota, 100.0 - curves.eer, curves.eer, curves.h_at_eer, curves.add_at_eer,
             100.0 - curves.eer_user_mean, len(curves.per_user))
        )
        print(f"{name}: OTA {100 - ota:.1f}  AA {100 - curves.eer:.1f} ({curves.add_at_eer:.1f})")
        if k == 0:
            for uid, ts in traces.items():
                for sid, t in enumerate(ts):
                    det = t.detected_at
                    for j in range(len(t.fused)):
                        trace_rows.append(
                            (uid, sid, t.change_point, j + 1, t.fused[j], t.L[j], t.cumulative[j],
                             det is not None and j + 1 >= det)
                        )
    written = [
        reports.write_csv(out / "aa_curves.csv", ("system", "h", "pfd", "pnd", "add", "add_detected"), curve_rows, meta),
        reports.write_csv(
            out / "aa_summary.csv",
            ("system", "ota_accuracy", "aa_accuracy", "aa_eer", "h_at_eer", "add_at_eer", "aa_accuracy_user_mean", "n_users"),
            summary_rows,
            meta,
        ),
        reports.write_csv(
            out / "traces.csv",
            ("user_id", "sequence_id", "change_point", "j", "fused", "L", "cumulative", "detected"),
            trace_rows,
            {**meta, "subset": _subset_name(subsets[0])},
        ),
    ]
    cfg = {
        "pipeline": exp.cfg.to_json(),
        "subsets": [_subset_name(s) for s in subsets],
        "genuine_len": args.genuine_len,
        "impostor_len": args.impostor_len,
        "pairs_per_user": args.pairs_per_user,
        "h_grid": h_grid,
    }
    return cfg, [data, *models.files()], written


def cmd_features_dump(args):
    try:
        ch = ChannelId.parse(args.channel)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if ch not in FEATURE_NAMES:
        raise UsageError(f"{ch.value} is a behavior channel; it has no feature vectors")
    data = _dataset_path(args.dataset)
    ds = _load(data, args.timezone)
    rows = []
    for s in ds.sessions():
        try:
            X = session_samples(s, ch, args.burst_gap)
        except SkipSample:
            continue
        for i, v in enumerate(X):
            rows.append((s.user_id, s.session_id, i, *v))
    path = reports.write_csv(
        Path(args.out_dir) / f"features_{ch.value}.csv",
        ("user_id", "session_id", "sample", *FEATURE_NAMES[ch]),
        rows,
        {"channel": ch.value, "dim": len(FEATURE_NAMES[ch]), "burst_gap": args.burst_gap},
    )
    return {"channel": ch.value, "burst_gap": args.burst_gap, "timezone": args.timezone}, [data], [path]


def _input_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input not found: {path}")
    return p


def cmd_curves_roc(args):
    src = _input_file(args.scores)
    meta, rows = reports.read_csv(src)
    gen: dict[str, list[float]] = {}
    imp: dict[str, list[float]] = {}
    for r in rows:
        if r["channel"] != "fused":
            continue
        (gen if r["label"] == "genuine" else imp).setdefault(r["claimed_user"], []).append(float(r["fused"]))
    out_rows, eers = [], []
    for uid in sorted(set(gen) & set(imp)):
        roc = evaluation.compute_eer(gen[uid], imp[uid])
        eers.append(roc.eer)
        for t, fa, fr in zip(roc.thresholds, roc.far, roc.frr):
            out_rows.append((uid, t, fa, fr, roc.eer))
    if not eers:
        raise RuntimeError("no user has both genuine and impostor fused scores")
    path = reports.write_csv(
        Path(args.out_dir) / "roc.csv",
        ("claimed_user", "threshold", "far", "frr", "eer"),
        out_rows,
        {"convention": evaluation.OTA_CONVENTION, "users": len(eers), "eer_mean": reports.fmt(float(np.mean(eers)))},
    )
    return {"source_meta": meta}, [src], [path]


def cmd_curves_aa(args):
    src = _input_file(args.traces)
    h_grid = _parse_h_grid(args.h_grid)
    meta, rows = reports.read_csv(src)
    seqs: dict[str, dict[str, tuple[list[float], int]]] = {}
    for r in rows:
        per = seqs.setdefault(r["user_id"], {})
        cum, _ = per.setdefault(r["sequence_id"], ([], int(r["change_point"])))
        cum.append(float(r["cumulative"]))
    per_user = {u: [(np.asarray(c), cp) for c, cp in d.values()] for u, d in seqs.items()}
    curves = evaluation.compute_aa_curves(per_user, h_grid)
    path = reports.write_csv(
        Path(args.out_dir) / "aa_curves.csv",
        ("h", "pfd", "pnd", "add", "add_detected"),
        zip(curves.h, curves.pfd, curves.pnd, curves.add, curves.add_detected),
        {
            "convention": evaluation.AA_CONVENTION,
            "users": len(curves.per_user),
            "aa_eer": reports.fmt(curves.eer),
            "add_at_eer": reports.fmt(curves.add_at_eer),
        },
    )
    return {"source_meta": meta, "h_grid": h_grid}, [src], [path]


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activeauth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config", required=True, help="generator config (JSON)")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-users", type=int)
    g.add_argument("--days", type=int)
    g.add_argument("--sessions-per-day", type=int)
    g.add_argument("--separability", type=float)
    g.add_argument("--presence", type=float)
    g.set_defaults(func=cmd_generate)

    def dataset_args(sp, models=True):
        sp.add_argument("--dataset", required=True, help="sessions.jsonl or the directory holding it")
        if models:
            sp.add_argument("--models", required=True, help="directory written by enroll")
        sp.add_argument("--out-dir", required=True)

    e = sub.add_parser("enroll", help="train per-user templates and verifiers")
    dataset_args(e, models=False)
    e.add_argument("--channels", help="comma-separated channel names (default: all seven)")
    e.add_argument("--config", help="pipeline config (JSON)")
    e.add_argument("--seed", type=int)
    e.add_argument("--slots-per-day", type=int)
    e.add_argument("--train-fraction", type=float)
    e.add_argument("--impostor-ratio", type=float)
    e.add_argument("--burst-gap", type=float)
    e.add_argument("--timezone", default="UTC")
    e.add_argument("--jobs", type=int, default=1, help="worker processes for per-user training")
    e.set_defaults(func=cmd_enroll)

    for name, func, helptext in (
        ("score", cmd_score, "score test sessions against every enrolled user"),
        ("evaluate-ota", cmd_evaluate_ota, "one-time authentication ROC, EER and accuracy table"),
        ("evaluate-aa", cmd_evaluate_aa, "active authentication curves over the h grid"),
    ):
        sp = sub.add_parser(name, help=helptext)
        dataset_args(sp)
        sp.add_argument("--subset", action="append", help="comma-separated channels to fuse (repeatable)")
        if name == "evaluate-aa":
            sp.add_argument("--h-grid", help="comma-separated thresholds (default: every step point)")
            sp.add_argument("--genuine-len", type=int, default=15)
            sp.add_argument("--impostor-len", type=int, default=15)
            sp.add_argument("--pairs-per-user", type=int, default=10)
        sp.set_defaults(func=func)

    f = sub.add_parser("features", help="feature utilities")
    fsub = f.add_subparsers(dest="action", required=True)
    fd = fsub.add_parser("dump", help="write per-sample feature vectors of one channel")
    dataset_args(fd, models=False)
    fd.add_argument("--channel", required=True)
    fd.add_argument("--burst-gap", type=float, default=2.0)
    fd.add_argument("--timezone", default="UTC")
    fd.set_defaults(func=cmd_features_dump)

    c = sub.add_parser("curves", help="recompute curves from earlier CSV outputs")
    csub = c.add_subparsers(dest="kind", required=True)
    cr = csub.add_parser("roc", help="per-user ROC from a scores CSV")
    cr.add_argument("--scores", required=True)
    cr.add_argument("--out-dir", required=True)
    cr.set_defaults(func=cmd_curves_roc)
    ca = csub.add_parser("aa", help="PFD/PND/ADD curves from a traces CSV")
    ca.add_argument("--traces", required=True)
    ca.add_argument("--out-dir", required=True)
    ca.add_argument("--h-grid")
    ca.set_defaults(func=cmd_curves_aa)
    return p


def _command_name(args) -> str:
    parts = [args.command]
    for attr in ("action", "kind"):
        if getattr(args, attr, None):
            parts.append(getattr(args, attr))
    return " ".join(parts)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config, inputs, outputs = args.func(args)
        seed = config.get("seed", config.get("pipeline", {}).get("seed"))
        reports.write_manifest(Path(args.out_dir) / "manifest.json", _command_name(args), config, seed, inputs, outputs)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"activeauth: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, RuntimeError, OSError) as exc:
        print(f"activeauth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
