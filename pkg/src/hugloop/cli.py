"""Command-line surface: corpus handling, training, evaluation, policy
tables, height calculation, session simulation, and report emission.

Exit codes: 0 success, 1 user error (bad arguments, malformed inputs),
2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import behave, detect, featurize, forest, height, report, sim
from .core import (
    ConfigError,
    EngineParams,
    GestureClass,
    GestureInterval,
    HugRecording,
    SensorSample,
    load_params,
    validate_recording,
)
from .hugfsm import SessionEvent, events_to_jsonl

SWEEP_WINDOWS = (50, 75, 100)
SWEEP_OVERLAPS = (37, 25, 12)
SWEEP_THRESHOLDS = (0.75, 0.5, 0.25)


class UsageError(Exception):
    pass


# -- corpus on disk ----------------------------------------------------------
#
# One recording is three files sharing a stem:
#   <stem>.csv        header t,pressure,mic
#   <stem>.labels.csv header label,t_start,t_end
#   <stem>.meta.json  participant, hug_id, hug_start, hug_end


def write_recording(directory: Path, stem: str, rec: HugRecording, hug_id: str = "") -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / f"{stem}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "pressure", "mic"])
        for s in rec.samples:
            writer.writerow([repr(s.t), repr(s.pressure), repr(s.mic)])
    with (directory / f"{stem}.labels.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "t_start", "t_end"])
        for iv in rec.annotations:
            writer.writerow([iv.label.label, repr(iv.t_start), repr(iv.t_end)])
    meta = {
        "participant": rec.participant_id,
        "hug_id": hug_id or stem,
        "hug_start": rec.hug_start,
        "hug_end": rec.hug_end,
    }
    (directory / f"{stem}.meta.json").write_text(json.dumps(meta, sort_keys=True))


def read_recording(directory: Path, stem: str) -> HugRecording:
    csv_path = directory / f"{stem}.csv"
    samples = []
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["t", "pressure", "mic"]:
            raise UsageError(f"{csv_path}: expected header t,pressure,mic")
        for row in reader:
            try:
                samples.append(
                    SensorSample(t=float(row[0]), pressure=float(row[1]), mic=float(row[2]))
                )
            except (ValueError, IndexError):
                raise UsageError(f"{csv_path}: bad sample row {row!r}") from None
    annotations = []
    labels_path = directory / f"{stem}.labels.csv"
    if labels_path.exists():
        with labels_path.open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                try:
                    annotations.append(
                        GestureInterval(
                            label=GestureClass.from_label(row[0]),
                            t_start=float(row[1]),
                            t_end=float(row[2]),
                        )
                    )
                except (ValueError, IndexError):
                    raise UsageError(f"{labels_path}: bad label row {row!r}") from None
    meta_path = directory / f"{stem}.meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    else:
        meta = {}
    if not samples:
        raise UsageError(f"{csv_path}: no samples")
    rec = HugRecording(
        samples=tuple(samples),
        annotations=tuple(annotations),
        hug_start=float(meta.get("hug_start", samples[0].t)),
        hug_end=float(meta.get("hug_end", samples[-1].t)),
        participant_id=str(meta.get("participant", stem)),
    )
    problems = validate_recording(rec)
    if problems:
        raise UsageError(f"{stem}: invalid recording: {problems[0]}")
    return rec


def read_corpus(directory: str | Path) -> list[HugRecording]:
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"corpus directory not found: {directory}")
    stems = sorted(
        p.stem for p in directory.glob("*.csv") if not p.name.endswith(".labels.csv")
    )
    if not stems:
        raise UsageError(f"no recordings in {directory}")
    return [read_recording(directory, stem) for stem in stems]


def write_corpus(directory: str | Path, recordings) -> int:
    directory = Path(directory)
    counter: dict[str, int] = {}
    for rec in recordings:
        k = counter.get(rec.participant_id, 0)
        counter[rec.participant_id] = k + 1
        write_recording(directory, f"{rec.participant_id}_h{k:02d}", rec, hug_id=f"h{k:02d}")
    return len(counter)


# -- dataset assembly --------------------------------------------------------


def windows_dataset(recordings, params: EngineParams) -> forest.Dataset:
    xs = []
    ys = []
    for rec in recordings:
        for window in featurize.segment(rec, params):
            xs.append(featurize.extract_values(window.pressure, window.mic))
            ys.append(int(window.label))
    if not xs:
        raise UsageError("corpus produced no windows")
    return forest.Dataset(
        x=np.stack(xs), y=np.array(ys, dtype=np.int64), schema_id=featurize.SCHEMA_ID
    )


def dataset_subset(data: forest.Dataset, idx: np.ndarray) -> forest.Dataset:
    return forest.Dataset(x=data.x[idx], y=data.y[idx], schema_id=data.schema_id)


def _forest_params(args, seed: int) -> forest.ForestParams:
    return forest.ForestParams(
        n_trees=args.trees,
        max_depth=args.max_depth,
        min_leaf=args.min_leaf,
        features_per_split=args.features_per_split,
        bootstrap=not args.no_bootstrap,
        seed=seed,
    )


def compose_retrain_dataset(
    recordings,
    extra,
    n_users: int,
    fraction: float,
    seed: int,
):
    """Per-user subset plus freshly collected trials, for sensor migrations.

    Picks n_users participants at random, keeps `fraction` of each of their
    recordings for training (the rest becomes the validation pool), and adds
    every extra recording to the training side.
    """
    rng = np.random.default_rng(seed)
    users = sorted({rec.participant_id for rec in recordings})
    if len(users) < n_users:
        raise UsageError(f"corpus has {len(users)} users, need {n_users} for the protocol")
    chosen = sorted(rng.choice(len(users), size=n_users, replace=False).tolist())
    chosen_ids = {users[i] for i in chosen}
    train_recs = []
    holdout_recs = []
    for user in sorted(chosen_ids):
        mine = [rec for rec in recordings if rec.participant_id == user]
        k = int(round(fraction * len(mine)))
        order = rng.permutation(len(mine))
        train_recs.extend(mine[i] for i in order[:k])
        holdout_recs.extend(mine[i] for i in order[k:])
    train_recs.extend(extra)
    return train_recs, holdout_recs, sorted(chosen_ids)


# -- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    params = load_params(args.params) if args.params else EngineParams()
    recordings = read_corpus(args.corpus)
    if len(recordings) < 4:
        raise UsageError(f"need at least 4 recordings, got {len(recordings)}")

    if args.retrain_protocol:
        if not args.extra:
            raise UsageError("--retrain-protocol requires --extra NEW_TRIALS_DIR")
        extra = read_corpus(args.extra)
        train_recs, holdout_recs, users = compose_retrain_dataset(
            recordings, extra, args.retrain_users, args.retrain_frac, args.seed
        )
        print(f"retrain protocol: {len(users)} users, "
              f"{len(train_recs) - len(extra)} base + {len(extra)} new trials")
        train_data = windows_dataset(train_recs, params)
        model = forest.train(train_data, _forest_params(args, args.seed))
        forest.save(model, args.out)
        print(f"model written to {args.out} ({len(train_data)} windows)")
        if holdout_recs:
            holdout = windows_dataset(holdout_recs, params)
            result = forest.evaluate(model, holdout)
            print(f"held-out accuracy on remaining user data: {result.accuracy:.4f}")
        return 0

    data = windows_dataset(recordings, params)
    tr, va, te = forest.split_indices(len(data), (0.7, 0.2, 0.1), args.seed)
    model = forest.train(dataset_subset(data, tr), _forest_params(args, args.seed))
    val_acc = forest.evaluate(model, dataset_subset(data, va)).accuracy
    test_acc = forest.evaluate(model, dataset_subset(data, te)).accuracy
    forest.save(model, args.out)
    print(f"windows: {len(data)} (train {len(tr)} / val {len(va)} / test {len(te)})")
    print(f"validation accuracy: {val_acc:.4f}")
    print(f"test accuracy: {test_acc:.4f}")
    print(f"model written to {args.out}")

    if args.split_report:
        rows = [["split", "n_windows", "accuracy"],
                ["train", len(tr), ""],
                ["validation", len(va), f"{val_acc:.6f}"],
                ["test", len(te), f"{test_acc:.6f}"]]
        with open(args.split_report, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)

    if args.sweep:
        print("sweep: window/overlap/threshold grid on the validation split")
        rows = []
        for w in SWEEP_WINDOWS:
            for o in SWEEP_OVERLAPS:
                for t in SWEEP_THRESHOLDS:
                    p = replace(params, window_w=w, overlap_o=o, label_threshold_t=t)
                    d = windows_dataset(recordings, p)
                    tr_i, va_i, _ = forest.split_indices(len(d), (0.7, 0.2, 0.1), args.seed)
                    m = forest.train(dataset_subset(d, tr_i), _forest_params(args, args.seed))
                    acc = forest.evaluate(m, dataset_subset(d, va_i)).accuracy
                    rows.append((w, o, t, acc))
                    print(f"  W={w:3d} O={o:2d} T={t:.2f} -> {acc:.4f}")
        if args.sweep_report:
            with open(args.sweep_report, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["window_w", "overlap_o", "label_threshold_t", "val_accuracy"])
                writer.writerows([[w, o, t, f"{acc:.6f}"] for w, o, t, acc in rows])
    return 0


def cmd_eval(args) -> int:
    params = load_params(args.params) if args.params else EngineParams()
    model = forest.load(args.model, expect_schema=featurize.SCHEMA_ID)
    recordings = read_corpus(args.corpus)
    confusion = np.zeros((4, 4), dtype=np.int64)
    per_user: dict[str, list[int]] = {}
    for rec in recordings:
        detections = detect.replay_recording(rec, model, params)
        truths = detect.realtime_truth_labels(rec, params)
        stats = per_user.setdefault(rec.participant_id, [0, 0])
        for d, truth in zip(detections, truths):
            confusion[int(truth), int(d.label)] += 1
            stats[0] += 1
            stats[1] += int(d.label == truth)
    total = int(confusion.sum())
    if total == 0:
        raise UsageError("no detections produced; are the recordings long enough?")
    overall = float(np.trace(confusion)) / total
    participants = [
        report.ParticipantAccuracy(
            participant=user,
            n_detections=n,
            n_correct=c,
            flagged=(c / n if n else 0.0) < args.flag_below,
        )
        for user, (n, c) in sorted(per_user.items())
    ]
    written = report.write_eval_report(args.out_dir, confusion, participants, overall)
    print(f"streaming accuracy: {overall:.4f} over {total} detections")
    for p in participants:
        marker = "  FLAGGED" if p.flagged else ""
        print(f"  {p.participant}: {p.accuracy:.4f} ({p.n_detections} detections){marker}")
    print(f"report files: {', '.join(str(p) for p in written)}")
    return 0


def _read_ratings(path: str) -> behave.RatingMatrix:
    rows: dict[GestureClass, tuple[float, ...]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != \
                ["action", "hold", "rub", "pat", "squeeze"]:
            raise UsageError(f"{path}: expected header action,hold,rub,pat,squeeze")
        for row in reader:
            try:
                rows[GestureClass.from_label(row[0])] = tuple(float(v) for v in row[1:5])
            except (ValueError, IndexError):
                raise UsageError(f"{path}: bad ratings row {row!r}") from None
    if set(rows) != set(GestureClass):
        raise UsageError(f"{path}: need one row per user action")
    return behave.RatingMatrix(rows=tuple(rows[c] for c in GestureClass))


def cmd_decide(args) -> int:
    params = load_params(args.params) if args.params else EngineParams()
    eta = params.eta if args.eta is None else args.eta
    m = params.m_exponent if args.m is None else args.m
    if args.default:
        policy = behave.default_policy()
        digits = 2
    else:
        if not args.ratings:
            raise UsageError("provide a ratings file or --default")
        ratings = _read_ratings(args.ratings)
        policy = behave.policy_from_ratings(ratings, eta=eta, m=m)
        digits = 3
    print("response probabilities (rows: detected action, columns: robot response)")
    print("action   " + "".join(f"{c.label:>9}" for c in GestureClass))
    for action in GestureClass:
        row = policy.row(action)
        cells = "".join(f"{v:>9.{digits}f}" for v in row)
        note = ""
        if policy.degenerate[int(action)]:
            fallback = policy.fallback.label if policy.fallback else "none"
            note = f"   (degenerate: all ratings at or below eta; falls back to {fallback})"
        print(f"{action.label:<9}{cells}{note}")
    return 0


def cmd_simulate(args) -> int:
    params = load_params(args.params) if args.params else EngineParams()
    script = sim.parse_script(Path(args.script).read_text())
    model = forest.load(args.model, expect_schema=featurize.SCHEMA_ID)
    if args.ratings:
        policy = behave.policy_from_ratings(
            _read_ratings(args.ratings), eta=params.eta, m=params.m_exponent
        )
    else:
        policy = behave.default_policy()
    events, recording = sim.run_session(
        script, model, policy, params=params, policy_seed=args.seed
    )
    Path(args.out_log).write_text(events_to_jsonl(events))
    summary = report.summarize_events(events)
    print(f"session log written to {args.out_log}")
    print(f"duration: {summary['duration']:.2f} s, events: {summary['n_events']}")
    print(f"detections: {summary['detections']}")
    print(f"responses: {summary['responses']}")
    print(f"proactive fires: {summary['proactive_fires']}")
    print(f"release cause: {summary['release_cause']}")
    if args.out_recording:
        write_recording(Path(args.out_recording).parent, Path(args.out_recording).stem, recording)
        print(f"recording written next to {args.out_recording}")
    return 0


def cmd_height(args) -> int:
    calib = height.load_calib(args.calib) if args.calib else height.HeightCalib()
    if args.distance <= 0:
        raise UsageError(f"distance must be positive, got {args.distance}")
    obs = height.HeightObservation(distance_d=args.distance, bbox_height_b=args.bbox)
    est = height.estimate_height(obs, calib)
    theta_left, theta_right = height.shoulder_angles(est, calib)
    print(f"height: {est:.4f} m")
    if est < calib.h_min:
        print(f"note: below the short model user ({calib.h_min:.2f} m); angles clamped")
    elif est > calib.h_max:
        print(f"note: above the tall model user ({calib.h_max:.2f} m); angles clamped")
    print(f"left shoulder lift: {theta_left:.2f} deg")
    print(f"right shoulder lift: {theta_right:.2f} deg")
    return 0


def cmd_corpus(args) -> int:
    recordings = sim.generate_corpus(args.users, args.hugs, seed=args.seed)
    n_users = write_corpus(args.out, recordings)
    print(f"wrote {len(recordings)} recordings for {n_users} users to {args.out}")
    return 0


def cmd_features_schema(args) -> int:
    print("index,name")
    for i, name in enumerate(featurize.feature_names()):
        print(f"{i},{name}")
    return 0


def cmd_report(args) -> int:
    events = []
    with open(args.session_log) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                events.append(
                    SessionEvent(t=float(doc["t"]), kind=str(doc["kind"]),
                                 payload=dict(doc["payload"]))
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise UsageError(f"{args.session_log}:{lineno}: bad event line") from None
    if not events:
        raise UsageError(f"{args.session_log}: empty session log")
    written = report.write_session_report(args.out_dir, events)
    summary = report.summarize_events(events)
    print(f"events: {summary['n_events']}, proactive fires: {summary['proactive_fires']}, "
          f"release cause: {summary['release_cause']}")
    print(f"report files: {', '.join(str(p) for p in written)}")
    return 0


class _PrintSchemaAction(argparse.Action):
    """`hugloop --schema` prints the feature registry and exits."""

    def __call__(self, parser, namespace, values, option_string=None):
        print(f"schema_id,{featurize.SCHEMA_ID}")
        print("index,name")
        for i, name in enumerate(featurize.feature_names()):
            print(f"{i},{name}")
        parser.exit(0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hugloop",
        description="Gesture perception and response engine with a desk-scale simulator.",
    )
    parser.add_argument(
        "--schema", nargs=0, action=_PrintSchemaAction,
        help="print the feature registry (id plus all 80 names in order) and exit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a gesture classifier from a corpus directory")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--params", help="engine params config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--features-per-split", type=int, default=None)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--split-report", help="CSV path for the split report")
    p.add_argument("--sweep", action="store_true",
                   help="grid of window/overlap/threshold validation accuracies")
    p.add_argument("--sweep-report", help="CSV path for the sweep grid")
    p.add_argument("--retrain-protocol", action="store_true",
                   help="train on a per-user subset plus --extra trials")
    p.add_argument("--extra", help="directory of newly collected trials")
    p.add_argument("--retrain-users", type=int, default=10)
    p.add_argument("--retrain-frac", type=float, default=0.8)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="streaming evaluation of a model over a corpus")
    p.add_argument("model")
    p.add_argument("corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--params")
    p.add_argument("--flag-below", type=float, default=0.5,
                   help="flag participants below this accuracy")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decide", help="print the response probability table")
    p.add_argument("--ratings", help="CSV: action,hold,rub,pat,squeeze")
    p.add_argument("--default", action="store_true", help="print the shipped table")
    p.add_argument("--params")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--m", type=float, default=None)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("simulate", help="run a scripted session against a model")
    p.add_argument("script")
    p.add_argument("--model", required=True)
    p.add_argument("--ratings", help="derive the policy from this ratings CSV")
    p.add_argument("--seed", type=int, default=0, help="policy sampling seed")
    p.add_argument("--params")
    p.add_argument("--out-log", required=True, help="JSONL session log path")
    p.add_argument("--out-recording", help="also write the synthesized recording CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("height", help="height estimate and arm angles from one observation")
    p.add_argument("distance", type=float, help="meters from camera to user")
    p.add_argument("bbox", type=float, help="bounding-box height in pixels")
    p.add_argument("--calib", help="config file with calib_* keys")
    p.set_defaults(func=cmd_height)

    p = sub.add_parser("corpus", help="generate a synthetic labeled corpus")
    p.add_argument("out")
    p.add_argument("--users", type=int, default=32)
    p.add_argument("--hugs", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("features-schema", help="print the feature registry")
    p.set_defaults(func=cmd_features_schema)

    p = sub.add_parser("report", help="render a session log to CSV tables and figures")
    p.add_argument("session_log")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (UsageError, ConfigError, forest.ModelFormatError, forest.SchemaMismatchError,
            FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
