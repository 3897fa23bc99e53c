"""SfM model store: frames, landmarks, tracks, spatial queries, persistence.

The same store backs the frozen reference model, the augmented model the
pipeline grows, and the baselines' query-only reconstructions. Reference
entities are distinguished by frame status / landmark origin and are never
mutated after load; solvers enforce this through freeze masks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .geom import CameraIntrinsics, Pose
from .matching import FeatureSet
from .solvers.bundle import FreezeMask
from .solvers.pnp import Correspondence2D3D

FRAME_STATUSES = ("reference", "anchor", "registered", "failed", "pending")

FORMAT_HEADER = "ANCHORLOC_MODEL"
FORMAT_VERSION = 1


class ModelFormatError(Exception):
    pass


@dataclass
class Frame:
    id: int
    timestamp: float
    intrinsics: CameraIntrinsics
    features: FeatureSet
    pose: Pose | None = None
    status: str = "pending"

    def __post_init__(self):
        if self.status not in FRAME_STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status in ("reference", "anchor", "registered") and self.pose is None:
            raise ValueError(f"status {self.status} requires a pose")


@dataclass
class Landmark:
    id: int
    position: np.ndarray
    origin: str  # "reference" | "augmented"
    track: list = field(default_factory=list)  # [(frame id, feature index)]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.origin not in ("reference", "augmented"):
            raise ValueError(f"unknown origin {self.origin!r}")


@dataclass
class NewLandmarkCandidate:
    position: np.ndarray
    track: list


class SfMModel:
    def __init__(self):
        self.frames: dict[int, Frame] = {}
        self.landmarks: dict[int, Landmark] = {}
        self.obs_to_landmark: dict[tuple, int] = {}
        self._next_landmark_id = 0

    def add_frame(self, frame: Frame):
        if frame.id in self.frames:
            raise ValueError(f"duplicate frame id {frame.id}")
        self.frames[frame.id] = frame

    def add_landmark(self, lm: Landmark):
        if lm.id in self.landmarks:
            raise ValueError(f"duplicate landmark id {lm.id}")
        for key in lm.track:
            if key in self.obs_to_landmark:
                raise ValueError(f"feature {key} already bound")
        self.landmarks[lm.id] = lm
        for key in lm.track:
            self.obs_to_landmark[tuple(key)] = lm.id
        self._next_landmark_id = max(self._next_landmark_id, lm.id + 1)

    def new_landmark_id(self):
        lid = self._next_landmark_id
        self._next_landmark_id += 1
        return lid

    def reference_frames(self):
        return [f for f in self.frames.values() if f.status == "reference"]


# ---------------------------------------------------------------------------
# queries and mutations


def freeze_mask_for_reference(model: SfMModel) -> FreezeMask:
    """Everything loaded with the reference model stays fixed in BA."""
    return FreezeMask(
        frozen_frame_ids={f.id for f in model.frames.values() if f.status == "reference"},
        frozen_landmark_ids={l.id for l in model.landmarks.values() if l.origin == "reference"},
    )


def frozen_state_digest(model: SfMModel, mask: FreezeMask) -> str:
    """Hash of all frozen poses/positions, for bit-identity auditing."""
    h = hashlib.sha256()
    for fid in sorted(mask.frozen_frame_ids):
        fr = model.frames[fid]
        h.update(fr.pose.q.tobytes())
        h.update(fr.pose.t.tobytes())
    for lid in sorted(mask.frozen_landmark_ids):
        h.update(model.landmarks[lid].position.tobytes())
    return h.hexdigest()


def spatial_neighbors(model: SfMModel, pose: Pose, k: int, max_view_angle_deg: float = 60.0):
    """k reference frames nearest to pose's center, gated on view angle."""
    refs = model.reference_frames()
    if not refs:
        return []
    center = pose.center()
    vdir = pose.view_direction()
    scored = []
    for f in refs:
        ang = np.degrees(
            np.arccos(np.clip(float(f.pose.view_direction() @ vdir), -1.0, 1.0))
        )
        if ang > max_view_angle_deg:
            continue
        scored.append((float(np.linalg.norm(f.pose.center() - center)), f.id))
    scored.sort()
    return [fid for _, fid in scored[:k]]


def lift_matches_to_3d(model: SfMModel, query_features: FeatureSet, matches):
    """2D-3D correspondences from 2D matches into tracked target features.

    matches: iterable of (query feature index, target frame id, target
    feature index, descriptor distance). Matches landing on the same
    landmark collapse to the one with the smallest descriptor distance.
    """
    best = {}
    for qidx, tfid, tfidx, dist in matches:
        lid = model.obs_to_landmark.get((tfid, tfidx))
        if lid is None:
            continue
        cur = best.get(lid)
        if cur is None or dist < cur[1]:
            best[lid] = (qidx, dist)
    corrs = []
    for lid in sorted(best):
        qidx, dist = best[lid]
        corrs.append(
            Correspondence2D3D(
                pixel=query_features.pixels[qidx].copy(),
                point_id=lid,
                world=model.landmarks[lid].position.copy(),
                feature_index=qidx,
                distance=dist,
            )
        )
    return corrs


def add_observation(model: SfMModel, lid: int, fid: int, fidx: int) -> bool:
    """Extend a landmark track; existing bindings win. Returns True if added."""
    key = (fid, fidx)
    if key in model.obs_to_landmark:
        return False
    model.obs_to_landmark[key] = lid
    model.landmarks[lid].track.append(key)
    return True


def merge_new_landmarks(model: SfMModel, frame_id: int, candidates) -> int:
    """Insert accepted triangulations as augmented landmarks.

    A candidate touching any already-bound feature is dropped whole.
    Returns the number of landmarks added.
    """
    added = 0
    for cand in candidates:
        if any(tuple(key) in model.obs_to_landmark for key in cand.track):
            continue
        if len(cand.track) < 2:
            continue
        lm = Landmark(model.new_landmark_id(), np.asarray(cand.position, dtype=float), "augmented", [tuple(k) for k in cand.track])
        model.landmarks[lm.id] = lm
        for key in lm.track:
            model.obs_to_landmark[key] = lm.id
        added += 1
    return added


# ---------------------------------------------------------------------------
# persistence: versioned line-oriented text, exact round trips


def _fmt(x: float) -> str:
    return repr(float(x))


def save_model(model: SfMModel, path):
    lines = [f"{FORMAT_HEADER} {FORMAT_VERSION}"]
    for fid in sorted(model.frames):
        f = model.frames[fid]
        i = f.intrinsics
        parts = [
            "FRAME",
            str(fid),
            _fmt(f.timestamp),
            f.status,
            _fmt(i.fx),
            _fmt(i.fy),
            _fmt(i.cx),
            _fmt(i.cy),
            str(i.width),
            str(i.height),
        ]
        if f.pose is not None:
            parts.append("1")
            parts.extend(_fmt(v) for v in f.pose.q)
            parts.extend(_fmt(v) for v in f.pose.t)
        else:
            parts.append("0")
        lines.append(" ".join(parts))
        dim = f.features.descriptors.shape[1] if len(f.features) else 0
        lines.append(f"FEATURES {fid} {len(f.features)} {dim}")
        for uv, d in zip(f.features.pixels, f.features.descriptors):
            lines.append(
                "F " + _fmt(uv[0]) + " " + _fmt(uv[1]) + " " + " ".join(_fmt(v) for v in d)
            )
    for lid in sorted(model.landmarks):
        l = model.landmarks[lid]
        parts = ["LANDMARK", str(lid), l.origin]
        parts.extend(_fmt(v) for v in l.position)
        parts.append(str(len(l.track)))
        for fid, fidx in l.track:
            parts.append(str(fid))
            parts.append(str(fidx))
        lines.append(" ".join(parts))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> SfMModel:
    model = SfMModel()
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ModelFormatError("line 1: empty file")
    head = raw[0].split()
    if len(head) != 2 or head[0] != FORMAT_HEADER:
        raise ModelFormatError("line 1: bad header")
    if int(head[1]) != FORMAT_VERSION:
        raise ModelFormatError(f"line 1: version {head[1]} unsupported")

    pending_frame = None  # (frame args) awaiting its FEATURES block
    feat_rows = None
    feat_left = 0
    feat_dim = 0

    def finish_frame():
        nonlocal pending_frame, feat_rows
        if pending_frame is None:
            return
        args, nfeat, dim = pending_frame
        pix = np.array([r[:2] for r in feat_rows], dtype=float).reshape(-1, 2)
        if feat_rows:
            desc = np.array([r[2:] for r in feat_rows], dtype=float)
        else:
            desc = np.zeros((0, dim))
        fs = FeatureSet(pix, desc)
        model.add_frame(Frame(features=fs, **args))
        pending_frame = None
        feat_rows = None

    for ln, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        tok = line.split()
        try:
            if tok[0] == "FRAME":
                if feat_left:
                    raise ModelFormatError(f"line {ln}: FEATURES block truncated")
                finish_frame()
                fid = int(tok[1])
                intr = CameraIntrinsics(
                    float(tok[4]), float(tok[5]), float(tok[6]), float(tok[7]), int(tok[8]), int(tok[9])
                )
                has_pose = tok[10] == "1"
                pose = None
                if has_pose:
                    vals = [float(v) for v in tok[11:18]]
                    pose = Pose(np.array(vals[:4]), np.array(vals[4:]))
                pending_frame = (
                    dict(id=fid, timestamp=float(tok[2]), intrinsics=intr, pose=pose, status=tok[3]),
                    0,
                    0,
                )
                feat_rows = []
            elif tok[0] == "FEATURES":
                if pending_frame is None or int(tok[1]) != pending_frame[0]["id"]:
                    raise ModelFormatError(f"line {ln}: FEATURES without matching FRAME")
                feat_left = int(tok[2])
                feat_dim = int(tok[3])
                pending_frame = (pending_frame[0], feat_left, feat_dim)
            elif tok[0] == "F":
                if feat_left <= 0:
                    raise ModelFormatError(f"line {ln}: unexpected feature row")
                vals = [float(v) for v in tok[1:]]
                if len(vals) != 2 + feat_dim:
                    raise ModelFormatError(f"line {ln}: feature row has {len(vals)} values")
                feat_rows.append(vals)
                feat_left -= 1
            elif tok[0] == "LANDMARK":
                if feat_left:
                    raise ModelFormatError(f"line {ln}: FEATURES block truncated")
                finish_frame()
                lid = int(tok[1])
                pos = np.array([float(v) for v in tok[3:6]])
                n = int(tok[6])
                track = []
                for i in range(n):
                    track.append((int(tok[7 + 2 * i]), int(tok[8 + 2 * i])))
                model.add_landmark(Landmark(lid, pos, tok[2], track))
            else:
                raise ModelFormatError(f"line {ln}: unknown record {tok[0]!r}")
        except ModelFormatError:
            raise
        except (ValueError, IndexError) as e:
            raise ModelFormatError(f"line {ln}: {e}") from e
    if feat_left:
        raise ModelFormatError(f"line {len(raw)}: FEATURES block truncated")
    finish_frame()
    return model


def models_equal(a: SfMModel, b: SfMModel) -> bool:
    if set(a.frames) != set(b.frames) or set(a.landmarks) != set(b.landmarks):
        return False
    for fid, fa in a.frames.items():
        fb = b.frames[fid]
        if fa.timestamp != fb.timestamp or fa.status != fb.status:
            return False
        ia, ib = fa.intrinsics, fb.intrinsics
        if (ia.fx, ia.fy, ia.cx, ia.cy, ia.width, ia.height) != (ib.fx, ib.fy, ib.cx, ib.cy, ib.width, ib.height):
            return False
        if (fa.pose is None) != (fb.pose is None):
            return False
        if fa.pose is not None:
            if not np.array_equal(fa.pose.q, fb.pose.q) or not np.array_equal(fa.pose.t, fb.pose.t):
                return False
        if not np.array_equal(fa.features.pixels, fb.features.pixels):
            return False
        if not np.array_equal(fa.features.descriptors, fb.features.descriptors):
            return False
    for lid, la in a.landmarks.items():
        lb = b.landmarks[lid]
        if la.origin != lb.origin or not np.array_equal(la.position, lb.position):
            return False
        if list(la.track) != list(lb.track):
            return False
    return a.obs_to_landmark == b.obs_to_landmark
