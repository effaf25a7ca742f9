"""Online tracker: staged track-perspective association and track-aware initialization.

Per frame:

1. threshold + NMS splits detections into high / low / suppressed
2. Kalman predict for every live track
3. stage 1: all tracks vs high; stage 2: leftovers vs low (stricter gate);
   stage 3: leftover *active* tracks vs NMS-suppressed (strictest gate)
4. NSA Kalman update of matched tracks, lifecycle bookkeeping
5. unmatched high detections spawn tracks only if they do not overlap a live
   track or a higher-scored candidate
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .assignment import CostMatrix, hungarian_assign
from .geometry import (DEFAULT_C_B, DEFAULT_LAMBDA, BBox, EmptyBatchError, batch_norm_factor,
                       boxes_to_array, pairwise_iou, pairwise_nwd)
from .head import NMS_IOU, TAU_HIGH, TAU_LOW, Detection, Source, partition_detections
from .kalman import KalmanFilter, KalmanState


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    LOST = "lost"


@dataclass
class Track:
    id: int
    kstate: KalmanState
    conf: float
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    time_since_update: int = 0
    start_frame: int = 0

    @property
    def box(self) -> BBox:
        return self.kstate.box()


@dataclass(frozen=True)
class TrackOutput:
    track_id: int
    box: BBox
    conf: float


@dataclass
class TrackerConfig:
    tau_high: float = TAU_HIGH
    tau_low: float = TAU_LOW
    nms_iou: float = NMS_IOU
    # minimum similarity per stage: high, low, suppressed
    gates: tuple[float, float, float] = (0.3, 0.4, 0.5)
    cost: str = "iou"
    nwd_lambda: float = DEFAULT_LAMBDA
    confirm_hits: int = 2
    max_lost: int = 30
    tai_overlap: float = 0.5
    use_tai: bool = True
    use_suppressed: bool = True


def similarity_matrix(a: np.ndarray, b: np.ndarray, metric: str = "iou",
                      c_b: Optional[float] = None) -> np.ndarray:
    if metric == "iou":
        return pairwise_iou(a, b)
    if metric == "nwd":
        return pairwise_nwd(a, b, DEFAULT_C_B if c_b is None else c_b)
    raise ValueError(f"unknown cost metric {metric!r}")


def cost_matrix(tracks: Sequence[Track], dets: Sequence[Detection], metric: str = "iou",
                gate: float = 0.3, c_b: Optional[float] = None) -> CostMatrix:
    """``1 - similarity`` between predicted track boxes and detections; below-gate pairs infeasible."""
    if not 0 < gate <= 1:
        raise ValueError("gate must lie in (0, 1]")
    tb = boxes_to_array([t.box for t in tracks])
    db = boxes_to_array([d.box for d in dets])
    sim = similarity_matrix(tb, db, metric, c_b).reshape(len(tracks), len(dets))
    return CostMatrix(1.0 - sim, sim >= gate)


@dataclass
class AssociationResult:
    # (track index, detection, stage number 1..3)
    matches: list[tuple[int, Detection, int]]
    unmatched_tracks: list[int]
    # unmatched high-confidence detections, the only ones eligible to spawn tracks
    unmatched_dets: list[Detection]


def track_perspective_association(tracks: Sequence[Track], dets_high: Sequence[Detection],
                                  dets_low: Sequence[Detection], dets_suppressed: Sequence[Detection],
                                  gates: tuple[float, float, float] = (0.3, 0.4, 0.5),
                                  metric: str = "iou", c_b: Optional[float] = None,
                                  use_suppressed: bool = True) -> AssociationResult:
    matches: list[tuple[int, Detection, int]] = []
    remaining = list(range(len(tracks)))
    unmatched_high: list[Detection] = list(dets_high)

    stages = [(1, list(dets_high), gates[0], lambda t: True),
              (2, list(dets_low), gates[1], lambda t: True)]
    if use_suppressed:
        stages.append((3, list(dets_suppressed), gates[2],
                       lambda t: t.status is TrackStatus.ACTIVE))
    for stage, dets, gate, eligible in stages:
        rows = [i for i in remaining if eligible(tracks[i])]
        if not rows or not dets:
            continue
        a = hungarian_assign(cost_matrix([tracks[i] for i in rows], dets, metric, gate, c_b))
        taken = set()
        for r, j in a.matches:
            matches.append((rows[r], dets[j], stage))
            taken.add(rows[r])
        remaining = [i for i in remaining if i not in taken]
        if stage == 1:
            unmatched_high = [dets[j] for j in a.unmatched_cols]
    return AssociationResult(matches, remaining, unmatched_high)


def track_aware_initialization(unmatched_high_dets: Sequence[Detection],
                               tracks_after_assoc: Sequence[Track], overlap_thresh: float,
                               kf: KalmanFilter, id_source: Iterable[int],
                               frame: int = 0, activate: bool = False) -> list[Track]:
    """Spawn tracks from candidates that overlap neither a live track nor a stronger candidate."""
    if not 0 < overlap_thresh < 1:
        raise ValueError("overlap_thresh must lie in (0, 1)")
    ids = iter(id_source)
    cands = sorted(unmatched_high_dets, key=lambda d: -d.score)
    live = [t for t in tracks_after_assoc if t.status is not TrackStatus.LOST]
    cb = boxes_to_array([d.box for d in cands])
    tb = boxes_to_array([t.box for t in live])
    iou_tracks = pairwise_iou(cb, tb) if len(live) else np.zeros((len(cands), 0))
    iou_cands = pairwise_iou(cb, cb)
    born = []
    for i, d in enumerate(cands):
        if iou_tracks.shape[1] and iou_tracks[i].max() >= overlap_thresh:
            continue
        if i and iou_cands[i, :i].max() >= overlap_thresh:
            continue
        born.append(_spawn(d, kf, next(ids), frame, activate))
    return born


def _spawn(d: Detection, kf: KalmanFilter, tid: int, frame: int, activate: bool) -> Track:
    status = TrackStatus.ACTIVE if activate else TrackStatus.TENTATIVE
    return Track(tid, kf.initiate(d.box), d.score, status, hits=1, time_since_update=0, start_frame=frame)


def track_lifecycle(tracks: Sequence[Track], matched: set[int], frame_clock: int,
                    confirm_hits: int = 2, max_lost: int = 30) -> list[Track]:
    """Advance status of every track; returns the survivors.

    ``matched`` holds the ids of tracks that received a detection this frame.
    """
    if confirm_hits < 1 or max_lost < 0:
        raise ValueError("confirm_hits must be >= 1 and max_lost >= 0")
    alive = []
    for t in tracks:
        if t.id in matched:
            t.hits += 1
            t.time_since_update = 0
            if t.status is TrackStatus.LOST:
                t.status = TrackStatus.ACTIVE
            elif t.status is TrackStatus.TENTATIVE and t.hits >= confirm_hits:
                t.status = TrackStatus.ACTIVE
            alive.append(t)
            continue
        t.hits = 0
        t.time_since_update += 1
        if t.status is TrackStatus.TENTATIVE:
            continue
        if t.status is TrackStatus.ACTIVE:
            t.status = TrackStatus.LOST
        if t.time_since_update > max_lost:
            continue
        alive.append(t)
    return alive


class Tracker:
    """Sequential per-sequence tracker; call :meth:`step` once per frame in order."""

    def __init__(self, config: Optional[TrackerConfig] = None, kf: Optional[KalmanFilter] = None):
        self.config = config or TrackerConfig()
        self.kf = kf or KalmanFilter()
        self.tracks: list[Track] = []
        self.frame = 0
        self._ids = itertools.count(1)
        self.last_association: Optional[AssociationResult] = None

    def _norm_factor(self, dets: Sequence[Detection]) -> Optional[float]:
        if self.config.cost != "nwd":
            return None
        try:
            return batch_norm_factor([d.box for d in dets], self.config.nwd_lambda).c_b
        except EmptyBatchError:
            return DEFAULT_C_B

    def step(self, detections: Sequence[Detection]) -> list[TrackOutput]:
        cfg = self.config
        high, low, suppressed = partition_detections(detections, cfg.tau_high, cfg.tau_low, cfg.nms_iou)
        return self.step_partitioned(high, low, suppressed)

    def step_partitioned(self, high: Sequence[Detection], low: Sequence[Detection],
                         suppressed: Sequence[Detection]) -> list[TrackOutput]:
        cfg = self.config
        self.frame += 1
        for t in self.tracks:
            t.kstate = self.kf.predict(t.kstate)
        c_b = self._norm_factor(list(high) + list(low) + list(suppressed))
        res = track_perspective_association(self.tracks, high, low, suppressed, cfg.gates,
                                            cfg.cost, c_b, cfg.use_suppressed)
        self.last_association = res
        matched = set()
        for ti, det, _ in res.matches:
            t = self.tracks[ti]
            t.kstate = self.kf.update(t.kstate, det.box, min(max(det.score, 0.0), 1.0))
            t.conf = det.score
            matched.add(t.id)
        self.tracks = track_lifecycle(self.tracks, matched, self.frame, cfg.confirm_hits, cfg.max_lost)
        first = self.frame == 1
        if cfg.use_tai:
            born = track_aware_initialization(res.unmatched_dets, self.tracks, cfg.tai_overlap,
                                              self.kf, self._ids, self.frame, activate=first)
        else:
            born = [_spawn(d, self.kf, next(self._ids), self.frame, first) for d in res.unmatched_dets]
        self.tracks.extend(born)
        return [TrackOutput(t.id, t.box, t.conf) for t in self.tracks
                if t.status is TrackStatus.ACTIVE and t.time_since_update == 0]


def run_tracker(frames: dict[int, list[Detection]], config: Optional[TrackerConfig] = None,
                n_frames: Optional[int] = None) -> dict[int, list[TrackOutput]]:
    """Track a whole sequence given detections keyed by 1-based frame number."""
    tr = Tracker(config)
    last = n_frames or (max(frames) if frames else 0)
    return {f: tr.step(frames.get(f, [])) for f in range(1, last + 1)}
