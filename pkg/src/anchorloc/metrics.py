"""Localization metrics and export of trajectories / point clouds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptyIntersection(Exception):
    pass


@dataclass
class EvaluationReport:
    method: str
    registered: int
    total: int
    mae: float
    median: float
    per_frame_errors: dict = field(default_factory=dict)

    @property
    def fraction(self):
        return self.registered / self.total if self.total else 0.0


@dataclass
class TrajectoryEntry:
    frame_id: int
    timestamp: float
    status: str
    pose: object = None  # Pose | None
    error: float | None = None


def compute_metrics(entries, gt, method="method", total=None) -> EvaluationReport:
    """Positional error statistics for a set of localized frames.

    entries: iterable of TrajectoryEntry (pose None for failures).
    gt: frame id -> ground-truth camera center. Error statistics cover
    registered frames with ground truth; the registered fraction uses
    the full frame count (total, default len(entries)).
    """
    entries = list(entries)
    if total is None:
        total = len(entries)
    if not any(e.frame_id in gt for e in entries):
        raise EmptyIntersection("no frame overlaps the ground truth")

    errors = {}
    registered = 0
    for e in entries:
        if e.status in ("registered", "anchor") and e.pose is not None:
            registered += 1
            if e.frame_id in gt:
                errors[e.frame_id] = float(np.linalg.norm(e.pose.center() - np.asarray(gt[e.frame_id])))

    vals = np.array(sorted(errors.values()))
    if len(vals):
        mae = float(vals.mean())
        # even count: mean of the two central order statistics
        median = float(np.median(vals))
    else:
        mae = float("nan")
        median = float("nan")
    return EvaluationReport(method, registered, total, mae, median, errors)


def compare_methods(reports) -> str:
    """Aligned text table, one row per report."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    header = ("Method", "#Cameras", "MAE", "Median error")
    rows = [header]
    for r in reports:
        rows.append(
            (
                r.method,
                f"{r.registered} ({100.0 * r.fraction:.1f}%)",
                f"{r.mae:.4g}",
                f"{r.median:.4g}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 6))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# file exports

TRAJ_HEADER = "ANCHORLOC_TRAJ 1"


def _fmt(x):
    return repr(float(x))


def export_trajectory(entries, path):
    """One line per frame: id ts qw qx qy qz tx ty tz status error.

    Pose fields are '-' for unregistered frames, error is '-' when no
    ground truth is known.
    """
    lines = [TRAJ_HEADER]
    for e in sorted(entries, key=lambda e: (e.timestamp, e.frame_id)):
        if e.pose is not None:
            pose_part = " ".join(_fmt(v) for v in list(e.pose.q) + list(e.pose.t))
        else:
            pose_part = "- - - - - - -"
        err_part = _fmt(e.error) if e.error is not None else "-"
        lines.append(f"{e.frame_id} {_fmt(e.timestamp)} {pose_part} {e.status} {err_part}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectory(path):
    from .geom import Pose

    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0] != TRAJ_HEADER:
        raise ValueError(f"{path}: not a trajectory file")
    entries = []
    for ln, line in enumerate(raw[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 11:
            raise ValueError(f"{path}:{ln}: expected 11 fields, got {len(tok)}")
        pose = None
        if tok[2] != "-":
            vals = [float(v) for v in tok[2:9]]
            pose = Pose(np.array(vals[:4]), np.array(vals[4:]))
        err = None if tok[10] == "-" else float(tok[10])
        entries.append(TrajectoryEntry(int(tok[0]), float(tok[1]), tok[9], pose, err))
    return entries


def export_pointcloud(model, path):
    """Landmark positions as ASCII PLY."""
    lms = [model.landmarks[k] for k in sorted(model.landmarks)]
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(lms)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    for lm in lms:
        lines.append(" ".join(_fmt(v) for v in lm.position))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def entries_from_pipeline_result(result, model=None):
    """TrajectoryEntries from a pipeline LocalizationResult."""
    model = model if model is not None else result.model
    out = []
    for ev in result.frame_events:
        fr = model.frames.get(ev.frame_id)
        pose = fr.pose if fr is not None else None
        out.append(TrajectoryEntry(ev.frame_id, ev.timestamp, ev.status, pose, ev.error))
    return out


def entries_from_baseline_report(report):
    return [
        TrajectoryEntry(r.frame_id, r.timestamp, r.status, r.pose, r.error)
        for r in report.frames
    ]
