"""Anchor-seeded sequential localization against a frozen reference model.

Flow: detect anchor frames, register them to the reference model, then
walk the sequence in time order from the earliest anchor, registering
each frame via spatially-, retrieval-, and temporally-guided matching,
PnP, and triangulation, with a frozen-reference bundle adjustment after
every batch of newly registered frames. Frames before the earliest
anchor are covered by a mirrored backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .matching import (
    EmptyFeatureSet,
    global_descriptor,
    match_features,
    temporal_candidates,
)
from .model import (
    NewLandmarkCandidate,
    SfMModel,
    add_observation,
    freeze_mask_for_reference,
    frozen_state_digest,
    lift_matches_to_3d,
    merge_new_landmarks,
    spatial_neighbors,
)
from .solvers import (
    BundleConfig,
    RansacConfig,
    SolverError,
    TriangulationConfig,
    bundle_adjust,
    ransac_pnp,
    triangulate,
)


class NoAnchorsFound(Exception):
    def __init__(self, max_score):
        super().__init__(f"no frame scored above the anchor threshold (max {max_score:.3f})")
        self.max_score = max_score


class AllAnchorsFailed(Exception):
    pass


@dataclass
class PipelineConfig:
    n_temporal: int = 25
    k_retrieval: int = 20
    k_spatial: int = 10
    ba_period: int = 10
    min_2d3d: int = 15
    anchor_threshold: float = 0.5
    match_ratio: float = 0.8
    mutual_match: bool = True
    max_view_angle_deg: float = 60.0
    backward_pass: bool = True
    ransac: RansacConfig = field(default_factory=RansacConfig)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    triangulation: TriangulationConfig = field(default_factory=TriangulationConfig)

    def __post_init__(self):
        for name in ("n_temporal", "k_retrieval", "k_spatial", "ba_period", "min_2d3d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class FrameEvent:
    frame_id: int
    timestamp: float
    status: str
    n_candidates: int
    n_corrs: int
    n_inliers: int
    error: float | None = None


@dataclass
class BAEvent:
    label: str
    cost_before: float
    cost_after: float
    iterations: int
    frozen_digest_before: str
    frozen_digest_after: str


@dataclass
class LocalizationResult:
    frame_events: list
    ba_events: list
    model: SfMModel


def oracle_anchor_detector(dataset):
    """Detector scoring each frame by visible unique-object fraction.

    Stands in for a trained anchor classifier; only valid for frames of
    the given synthetic dataset.
    """
    from .synth import anchor_scores

    scores = anchor_scores(dataset, which="query")
    scores.update(anchor_scores(dataset, which="database"))

    def detector(frame):
        return scores.get(frame.id, 0.0)

    return detector


def detector_from_scores(scores: dict):
    """AnchorDetector backed by a precomputed frame id -> score table."""

    def detector(frame):
        return scores.get(frame.id, 0.0)

    return detector


def detect_anchors(sequence, detector, threshold):
    """Frame ids scoring >= threshold, in timestamp order."""
    scored = [(f.timestamp, f.id, detector(f)) for f in sequence]
    anchors = [fid for ts, fid, s in sorted(scored) if s >= threshold]
    if not anchors:
        raise NoAnchorsFound(max((s for _, _, s in scored), default=0.0))
    return anchors


def _frame_seed(cfg: PipelineConfig, frame_id: int) -> int:
    return (cfg.ransac.rng_seed * 1000003 + frame_id) % (2**63)


def _attempt_registration(model: SfMModel, frame, candidate_ids, cfg: PipelineConfig, status):
    """Match, lift, solve PnP, and grow the model for one frame.

    Returns (registered flag, n_corrs, n_inliers).
    """
    all_matches = []
    for cid in candidate_ids:
        cand = model.frames.get(cid)
        if cand is None or len(cand.features) == 0:
            continue
        for m in match_features(frame.features, cand.features, cfg.match_ratio, cfg.mutual_match):
            all_matches.append((m.query_index, cid, m.target_index, m.distance))

    corrs = lift_matches_to_3d(model, frame.features, all_matches)
    if len(corrs) < cfg.min_2d3d:
        return False, len(corrs), 0

    rcfg = replace(cfg.ransac, rng_seed=_frame_seed(cfg, frame.id))
    try:
        pose, inliers = ransac_pnp(corrs, frame.intrinsics, rcfg)
    except SolverError:
        return False, len(corrs), 0

    frame.pose = pose
    frame.status = status
    model.add_frame(frame)

    bound_q = set()
    for i in inliers:
        c = corrs[i]
        if c.feature_index in bound_q:
            continue
        if add_observation(model, c.point_id, frame.id, c.feature_index):
            bound_q.add(c.feature_index)

    # triangulate new points from still-unbound mutual matches
    best_partner = {}
    for qidx, cid, cfidx, dist in all_matches:
        if (frame.id, qidx) in model.obs_to_landmark:
            continue
        if (cid, cfidx) in model.obs_to_landmark:
            continue
        partner = model.frames[cid]
        if partner.pose is None:
            continue
        cur = best_partner.get(qidx)
        if cur is None or dist < cur[2]:
            best_partner[qidx] = (cid, cfidx, dist)

    candidates = []
    for qidx in sorted(best_partner):
        cid, cfidx, _ = best_partner[qidx]
        partner = model.frames[cid]
        try:
            X = triangulate(
                [frame.pose, partner.pose],
                [frame.features.pixels[qidx], partner.features.pixels[cfidx]],
                frame.intrinsics,
                cfg.triangulation,
            )
        except SolverError:
            continue
        candidates.append(NewLandmarkCandidate(X, [(frame.id, qidx), (cid, cfidx)]))
    merge_new_landmarks(model, frame.id, candidates)

    return True, len(corrs), len(inliers)


def _run_bundle(model, cfg: PipelineConfig, label, ba_events):
    mask = freeze_mask_for_reference(model)
    before = frozen_state_digest(model, mask)
    res = bundle_adjust(model, mask, cfg.bundle)
    after = frozen_state_digest(model, mask)
    ba_events.append(BAEvent(label, res.cost_before, res.cost_after, res.iterations, before, after))
    return res


def _db_retrieval_index(model: SfMModel):
    out = []
    for f in sorted(model.reference_frames(), key=lambda f: f.id):
        if len(f.features) == 0:
            continue
        out.append((f.id, global_descriptor(f.features)))
    return out


def register_anchors(model: SfMModel, sequence, anchor_ids, cfg: PipelineConfig):
    """Register anchors to the reference model; one frozen BA at the end.

    Returns (list of registered anchor ids, list of BAEvents).
    """
    if not anchor_ids:
        raise AllAnchorsFailed("no anchors supplied")
    db_index = _db_retrieval_index(model)
    frames = {f.id: f for f in sequence}
    registered = []
    ba_events = []
    for aid in anchor_ids:
        frame = frames[aid]
        if len(frame.features) == 0:
            frame.status = "failed"
            continue
        cands = retrieve_candidates(db_index, frame, cfg.k_retrieval)
        ok, _, _ = _attempt_registration(model, frame, cands, cfg, "anchor")
        if ok:
            registered.append(aid)
        else:
            frame.status = "failed"
    if not registered:
        raise AllAnchorsFailed("no anchor could be registered to the reference model")
    _run_bundle(model, cfg, "anchors", ba_events)
    return registered, ba_events


def retrieve_candidates(db_index, frame, k):
    try:
        g = global_descriptor(frame.features)
    except EmptyFeatureSet:
        return []
    from .matching import retrieve_top_k

    return retrieve_top_k(g, db_index, k)


def _nearest_anchor_pose(model, registered_anchors, timestamp):
    best = None
    for aid in registered_anchors:
        fr = model.frames.get(aid)
        if fr is None or fr.pose is None:
            continue
        d = abs(fr.timestamp - timestamp)
        if best is None or d < best[0]:
            best = (d, fr.pose)
    return None if best is None else best[1]


def recursive_localize(model: SfMModel, sequence, anchor_ids, cfg: PipelineConfig, gt=None):
    """Time-ordered frame-by-frame registration with periodic frozen BA.

    sequence: Frame objects (anchors already registered into the model).
    gt: optional frame id -> ground-truth camera center, only used to
    annotate events. Returns a LocalizationResult.
    """
    db_index = _db_retrieval_index(model)
    seq = sorted(sequence, key=lambda f: f.timestamp)
    registered_anchors = [fid for fid in anchor_ids if fid in model.frames and model.frames[fid].pose is not None]
    if not registered_anchors:
        raise AllAnchorsFailed("recursive localization needs a registered anchor")
    t0 = min(model.frames[a].timestamp for a in registered_anchors)
    start_pose = model.frames[
        min(registered_anchors, key=lambda a: model.frames[a].timestamp)
    ].pose

    frame_events = []
    ba_events = []
    new_since_ba = 0

    passes = [("forward", [f for f in seq if f.status == "pending" and f.timestamp > t0])]
    backward = [f for f in seq if f.status == "pending" and f.timestamp < t0]
    backward.reverse()
    if cfg.backward_pass:
        passes.append(("backward", backward))

    for pass_name, frames in passes:
        prior_pose = start_pose
        consecutive_failures = 0
        reverse = pass_name == "backward"
        for frame in frames:
            cands = []
            cands.extend(spatial_neighbors(model, prior_pose, cfg.k_spatial, cfg.max_view_angle_deg))
            cands.extend(retrieve_candidates(db_index, frame, cfg.k_retrieval))
            cands.extend(temporal_candidates(frame.timestamp, seq, cfg.n_temporal, reverse=reverse))
            seen = set()
            cand_ids = [c for c in cands if not (c in seen or seen.add(c))]

            ok, n_corrs, n_inliers = (False, 0, 0)
            if len(frame.features) > 0 and cand_ids:
                ok, n_corrs, n_inliers = _attempt_registration(model, frame, cand_ids, cfg, "registered")
            if ok:
                prior_pose = frame.pose
                consecutive_failures = 0
                new_since_ba += 1
                if new_since_ba >= cfg.ba_period:
                    _run_bundle(model, cfg, f"after-{frame.id}", ba_events)
                    new_since_ba = 0
            else:
                frame.status = "failed"
                consecutive_failures += 1
                if consecutive_failures >= cfg.ba_period:
                    anchor_pose = _nearest_anchor_pose(model, registered_anchors, frame.timestamp)
                    if anchor_pose is not None:
                        prior_pose = anchor_pose
            frame_events.append(
                FrameEvent(frame.id, frame.timestamp, frame.status, len(cand_ids), n_corrs, n_inliers)
            )

    if new_since_ba > 0:
        _run_bundle(model, cfg, "final", ba_events)

    # annotate errors against the final (post-BA) poses
    if gt is not None:
        for ev in frame_events:
            fr = model.frames.get(ev.frame_id)
            if fr is not None and fr.pose is not None and ev.frame_id in gt:
                ev.error = float(np.linalg.norm(fr.pose.center() - gt[ev.frame_id]))

    return LocalizationResult(frame_events, ba_events, model)


def run_pipeline(model: SfMModel, sequence, detector, cfg: PipelineConfig, gt=None):
    """detect_anchors + register_anchors + recursive_localize."""
    anchors = detect_anchors(sequence, detector, cfg.anchor_threshold)
    registered, anchor_ba = register_anchors(model, sequence, anchors, cfg)
    result = recursive_localize(model, sequence, registered, cfg, gt=gt)
    result.ba_events = anchor_ba + result.ba_events
    # anchors were registered outside the per-frame loop; report them too
    anchor_events = []
    for aid in anchors:
        fr = model.frames.get(aid)
        if fr is not None and fr.pose is not None:
            err = None
            if gt is not None and aid in gt:
                err = float(np.linalg.norm(fr.pose.center() - gt[aid]))
            anchor_events.append(FrameEvent(aid, fr.timestamp, fr.status, 0, 0, 0, err))
        else:
            ts = next((f.timestamp for f in sequence if f.id == aid), 0.0)
            anchor_events.append(FrameEvent(aid, ts, "failed", 0, 0, 0))
    result.frame_events = anchor_events + result.frame_events
    result.frame_events.sort(key=lambda e: (e.timestamp, e.frame_id))
    return result
