"""Report emission: delimited tables plus rendered figures.

Every report is written as machine-readable CSV first; alongside each table
the same content is rendered to a PNG so a run can be eyeballed without
loading the CSVs into an external plotter.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import GestureClass, N_CLASSES
from .hugfsm import SessionEvent

REPORT_SCHEMA = "hugloop-report-v1"

CLASS_LABELS = [c.label for c in GestureClass]


@dataclass(frozen=True)
class ParticipantAccuracy:
    participant: str
    n_detections: int
    n_correct: int
    flagged: bool   # accuracy at or below chance-like levels

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_detections if self.n_detections else 0.0


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_confusion_csv(path: Path, confusion: np.ndarray) -> None:
    header = ["true\\pred", *CLASS_LABELS]
    rows = [[CLASS_LABELS[i], *confusion[i].tolist()] for i in range(N_CLASSES)]
    _write_csv(path, header, rows)


def render_confusion_png(path: Path, confusion: np.ndarray, title: str) -> None:
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    row_sums = confusion.sum(axis=1, keepdims=True)
    shades = np.divide(confusion, row_sums, out=np.zeros(confusion.shape), where=row_sums > 0)
    ax.imshow(shades, cmap="Blues", vmin=0.0, vmax=1.0)
    for i in range(N_CLASSES):
        for j in range(N_CLASSES):
            color = "white" if shades[i, j] > 0.5 else "black"
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center", color=color)
    ax.set_xticks(range(N_CLASSES), CLASS_LABELS)
    ax.set_yticks(range(N_CLASSES), CLASS_LABELS)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_report(
    out_dir: str | Path,
    confusion: np.ndarray,
    participants: Sequence[ParticipantAccuracy],
    overall_accuracy: float,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "confusion.csv"
    write_confusion_csv(path, confusion)
    written.append(path)

    path = out / "per_participant.csv"
    _write_csv(
        path,
        ["participant", "n_detections", "n_correct", "accuracy", "flagged"],
        [
            [p.participant, p.n_detections, p.n_correct, f"{p.accuracy:.6f}", int(p.flagged)]
            for p in participants
        ],
    )
    written.append(path)

    path = out / "summary.csv"
    _write_csv(
        path,
        ["schema", "overall_accuracy", "n_participants", "n_flagged"],
        [[REPORT_SCHEMA, f"{overall_accuracy:.6f}", len(participants),
          sum(p.flagged for p in participants)]],
    )
    written.append(path)

    path = out / "confusion_matrix.png"
    render_confusion_png(path, confusion, f"streaming accuracy {overall_accuracy:.3f}")
    written.append(path)

    path = out / "per_participant_accuracy.png"
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(participants) + 1.5), 3.2))
    names = [p.participant for p in participants]
    accs = [p.accuracy for p in participants]
    colors = ["tab:red" if p.flagged else "tab:blue" for p in participants]
    ax.bar(range(len(names)), accs, color=colors)
    ax.set_xticks(range(len(names)), names, rotation=90, fontsize=7)
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("accuracy")
    ax.axhline(overall_accuracy, color="gray", linestyle="--", linewidth=1)
    ax.set_title("per-participant streaming accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def summarize_events(events: Sequence[SessionEvent]) -> dict:
    """Counts that characterize one session log."""
    detections = {c.label: 0 for c in GestureClass}
    responses = {c.label: 0 for c in GestureClass}
    proactive = 0
    release_cause = None
    states = []
    for e in events:
        if e.kind == "detection" and "label" in e.payload:
            detections[e.payload["label"]] += 1
        elif e.kind == "response_chosen":
            responses[e.payload["response"]] += 1
        elif e.kind == "proactive_fired" and "response" in e.payload:
            proactive += 1
        elif e.kind == "release_trigger" and not e.payload.get("deferred", False) \
                and not e.payload.get("ignored", False):
            release_cause = e.payload.get("cause")
        elif e.kind == "state_change":
            states.append((e.t, e.payload.get("to")))
    return {
        "n_events": len(events),
        "detections": detections,
        "responses": responses,
        "proactive_fires": proactive,
        "release_cause": release_cause,
        "n_state_changes": len(states),
        "duration": events[-1].t if events else 0.0,
    }


def write_session_report(out_dir: str | Path, events: Sequence[SessionEvent]) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "events.csv"
    _write_csv(
        path,
        ["t", "kind", "payload"],
        [[f"{e.t:.6f}", e.kind, json.dumps(e.payload, sort_keys=True)] for e in events],
    )
    written.append(path)

    summary = summarize_events(events)
    path = out / "summary.csv"
    _write_csv(
        path,
        ["schema", "key", "value"],
        [[REPORT_SCHEMA, key, json.dumps(value, sort_keys=True)] for key, value in summary.items()],
    )
    written.append(path)

    path = out / "session_timeline.png"
    fig, ax = plt.subplots(figsize=(8.0, 3.0))
    kinds = ["state_change", "detection", "response_chosen", "proactive_fired", "release_trigger"]
    for row, kind in enumerate(kinds):
        ts = [e.t for e in events if e.kind == kind]
        ax.scatter(ts, [row] * len(ts), s=12, label=kind)
    ax.set_yticks(range(len(kinds)), kinds, fontsize=8)
    ax.set_xlabel("time [s]")
    ax.set_title("session events")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
