"""Seeded synthetic tracking scenes with exact ground truth and a simulated detector."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import BBox, pairwise_iou
from .mot_io import Frames, SequenceRecord

MOTIONS = ("linear", "sinusoidal", "stop_go")


class SceneValidationError(ValueError):
    pass


@dataclass
class ObjectScript:
    cx: float
    cy: float
    w: float
    h: float
    motion: str = "linear"
    vx: float = 0.0
    vy: float = 0.0
    # sinusoidal: offset = amp * sin(2 pi t / period + phase)
    amp_x: float = 0.0
    amp_y: float = 0.0
    period: float = 40.0
    phase: float = 0.0
    # stop_go: move for `go` frames, rest for `stop` frames, repeat
    go: int = 10
    stop: int = 5

    def center(self, t: int) -> tuple[float, float]:
        """Center at 0-based frame index ``t``."""
        if self.motion == "linear":
            return self.cx + self.vx * t, self.cy + self.vy * t
        if self.motion == "sinusoidal":
            s = np.sin(2 * np.pi * t / self.period + self.phase) - np.sin(self.phase)
            return self.cx + self.vx * t + self.amp_x * s, self.cy + self.vy * t + self.amp_y * s
        if self.motion == "stop_go":
            cycle = self.go + self.stop
            moving = (t // cycle) * self.go + min(t % cycle, self.go)
            return self.cx + self.vx * moving, self.cy + self.vy * moving
        raise SceneValidationError(f"unknown motion {self.motion!r}")

    def box(self, t: int) -> BBox:
        cx, cy = self.center(t)
        return BBox(float(cx), float(cy), self.w, self.h)


@dataclass
class OcclusionEvent:
    occluder: int
    occluded: int
    start: int  # 1-based, inclusive
    end: int
    # "suppress": occluded detection survives with a reduced score (NMS may then
    # suppress it); "drop": no detection at all
    mode: str = "suppress"


@dataclass
class DetectorNoise:
    jitter: float = 0.0          # std of center / log-size noise, as a fraction of box size
    drop_rate: float = 0.0
    fp_rate: float = 0.0         # probability per object and frame of a duplicate box
    score_range: tuple[float, float] = (1.0, 1.0)
    fp_score_range: tuple[float, float] = (0.6, 0.8)
    fp_shift_range: tuple[float, float] = (0.22, 0.30)  # duplicate offset, fraction of size
    occluded_score_factor: float = 0.5


@dataclass
class SyntheticScene:
    width: int = 320
    height: int = 256
    n_frames: int = 50
    n_objects: int = 5
    motions: tuple[str, ...] = MOTIONS
    min_size: float = 16.0
    max_size: float = 48.0
    aspect_range: tuple[float, float] = (0.5, 2.0)
    max_speed: float = 3.0
    # largest IoU any two objects may reach over the sequence (1.0 = unconstrained)
    max_pair_iou: float = 1.0
    occlusions: list[OcclusionEvent] = field(default_factory=list)
    noise: DetectorNoise = field(default_factory=DetectorNoise)
    seed: int = 0
    objects: Optional[list[ObjectScript]] = None


@dataclass
class SyntheticOutput:
    gt: Frames
    det: Frames
    objects: list[ObjectScript]
    frames: Optional[np.ndarray] = None  # (n_frames, H, W, 3) uint8


def _trajectory(obj: ObjectScript, n: int) -> np.ndarray:
    return np.array([obj.box(t).as_array() for t in range(n)])


def _inside(traj: np.ndarray, W: float, H: float) -> bool:
    x1 = traj[:, 0] - traj[:, 2] / 2
    y1 = traj[:, 1] - traj[:, 3] / 2
    x2 = traj[:, 0] + traj[:, 2] / 2
    y2 = traj[:, 1] + traj[:, 3] / 2
    return bool((x1 >= 0).all() and (y1 >= 0).all() and (x2 <= W).all() and (y2 <= H).all())


def _max_iou(a: np.ndarray, b: np.ndarray) -> float:
    return max(float(pairwise_iou(a[t], b[t])[0, 0]) for t in range(len(a)))


def _random_object(rng: np.random.Generator, scene: SyntheticScene) -> ObjectScript:
    size = np.exp(rng.uniform(np.log(scene.min_size), np.log(scene.max_size)))
    aspect = np.exp(rng.uniform(*np.log(scene.aspect_range)))
    w, h = size * np.sqrt(aspect), size / np.sqrt(aspect)
    motion = scene.motions[rng.integers(len(scene.motions))]
    speed = rng.uniform(0.3, scene.max_speed)
    ang = rng.uniform(0, 2 * np.pi)
    obj = ObjectScript(cx=rng.uniform(w / 2, scene.width - w / 2), cy=rng.uniform(h / 2, scene.height - h / 2),
                       w=float(w), h=float(h), motion=motion,
                       vx=float(speed * np.cos(ang)), vy=float(speed * np.sin(ang)))
    if motion == "sinusoidal":
        obj.vx, obj.vy = obj.vx * 0.3, obj.vy * 0.3
        obj.amp_x, obj.amp_y = rng.uniform(5, 25, size=2)
        obj.period = float(rng.uniform(30, 80))
        obj.phase = float(rng.uniform(0, 2 * np.pi))
    elif motion == "stop_go":
        obj.go, obj.stop = int(rng.integers(5, 15)), int(rng.integers(3, 10))
    return obj


def build_objects(scene: SyntheticScene, max_tries: int = 2000) -> list[ObjectScript]:
    """Explicit scripts if given (validated), otherwise rejection-sampled random ones."""
    n = scene.n_frames
    if scene.objects is not None:
        for i, obj in enumerate(scene.objects):
            if not _inside(_trajectory(obj, n), scene.width, scene.height):
                raise SceneValidationError(f"object {i} leaves the canvas")
        return list(scene.objects)
    rng = np.random.default_rng(scene.seed)
    objs, trajs = [], []
    for i in range(scene.n_objects):
        for _ in range(max_tries):
            obj = _random_object(rng, scene)
            tr = _trajectory(obj, n)
            if not _inside(tr, scene.width, scene.height):
                continue
            if scene.max_pair_iou < 1.0 and any(_max_iou(tr, o) > scene.max_pair_iou for o in trajs):
                continue
            objs.append(obj)
            trajs.append(tr)
            break
        else:
            raise SceneValidationError(f"could not place object {i} inside the canvas")
    return objs


def _validate(scene: SyntheticScene) -> None:
    if scene.width <= 0 or scene.height <= 0 or scene.n_frames <= 0:
        raise SceneValidationError("image size and frame count must be positive")
    if not 0 < scene.min_size <= scene.max_size:
        raise SceneValidationError("need 0 < min_size <= max_size")
    nz = scene.noise
    for name in ("drop_rate", "fp_rate"):
        if not 0 <= getattr(nz, name) <= 1:
            raise SceneValidationError(f"{name} must lie in [0, 1]")
    for ev in scene.occlusions:
        if ev.mode not in ("suppress", "drop") or ev.start > ev.end:
            raise SceneValidationError(f"bad occlusion event {ev}")


def _clip_inside(b: np.ndarray, W: float, H: float) -> np.ndarray:
    x1 = np.clip(b[0] - b[2] / 2, 0, W)
    y1 = np.clip(b[1] - b[3] / 2, 0, H)
    x2 = np.clip(b[0] + b[2] / 2, 0, W)
    y2 = np.clip(b[1] + b[3] / 2, 0, H)
    return np.array([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1])


def gen_synthetic(scene: SyntheticScene, render: bool = False) -> SyntheticOutput:
    """Ground truth plus simulated detections (ids -1) for every frame, deterministic per seed."""
    _validate(scene)
    objs = build_objects(scene)
    nz = scene.noise
    # separate stream so detector noise does not perturb object placement
    rng = np.random.default_rng([scene.seed, 1])
    gt: Frames = {}
    det: Frames = {}
    W, H = scene.width, scene.height
    for t in range(scene.n_frames):
        f = t + 1
        boxes = [o.box(t) for o in objs]
        gt[f] = [SequenceRecord(f, i + 1, *b.tlwh(), 1.0) for i, b in enumerate(boxes)]
        rows = []
        for i, b in enumerate(boxes):
            events = [e for e in scene.occlusions if e.occluded == i and e.start <= f <= e.end]
            if any(e.mode == "drop" for e in events):
                continue
            if nz.drop_rate and rng.random() < nz.drop_rate:
                continue
            arr = b.as_array()
            if nz.jitter:
                e = rng.normal(0.0, nz.jitter, size=4)
                arr = np.array([arr[0] + e[0] * arr[2], arr[1] + e[1] * arr[3],
                                arr[2] * np.exp(e[2]), arr[3] * np.exp(e[3])])
                arr = _clip_inside(arr, W, H)
            lo, hi = nz.score_range
            score = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
            if events:
                score *= nz.occluded_score_factor
            rows.append(SequenceRecord(f, -1, *BBox.from_array(arr).tlwh(), score))
            if nz.fp_rate and rng.random() < nz.fp_rate:
                s = rng.uniform(*nz.fp_shift_range) * rng.choice([-1.0, 1.0])
                axis = int(rng.integers(2))
                dup = b.as_array().copy()
                dup[axis] += s * dup[2 + axis]
                dup = _clip_inside(dup, W, H)
                if dup[2] > 0 and dup[3] > 0:
                    rows.append(SequenceRecord(f, -1, *BBox.from_array(dup).tlwh(),
                                               float(rng.uniform(*nz.fp_score_range))))
        det[f] = rows
    frames = render_frames(scene, objs) if render else None
    return SyntheticOutput(gt, det, objs, frames)


def render_frames(scene: SyntheticScene, objs: Sequence[ObjectScript]) -> np.ndarray:
    """Elliptical blobs, one tint per object, on a dark background."""
    W, H = scene.width, scene.height
    rng = np.random.default_rng([scene.seed, 2])
    tints = rng.uniform(0.5, 1.0, size=(len(objs), 3))
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    out = np.zeros((scene.n_frames, H, W, 3), dtype=np.uint8)
    for t in range(scene.n_frames):
        img = np.full((H, W, 3), 16.0)
        for obj, tint in zip(objs, tints):
            b = obj.box(t)
            inside = ((xx - b.cx) / (b.w / 2)) ** 2 + ((yy - b.cy) / (b.h / 2)) ** 2 <= 1.0
            img[inside] = 220.0 * tint
        out[t] = img.astype(np.uint8)
    return out


def crossing_scene(seed: int = 0, n_frames: int = 80) -> SyntheticScene:
    """Two same-size objects passing each other; the one behind is down-weighted while they overlap.

    While their IoU exceeds the NMS threshold the occluded object's only
    detection is one that NMS suppresses.
    """
    a = ObjectScript(cx=120.0, cy=128.0, w=40.0, h=80.0, vx=1.0)
    b = ObjectScript(cx=200.0, cy=132.0, w=40.0, h=80.0, vx=-1.0)
    ta, tb = _trajectory(a, n_frames), _trajectory(b, n_frames)
    overlap = [t + 1 for t in range(n_frames) if pairwise_iou(ta[t], tb[t])[0, 0] > 0.3]
    events = [OcclusionEvent(0, 1, overlap[0], overlap[-1])] if overlap else []
    return SyntheticScene(width=320, height=256, n_frames=n_frames, n_objects=2, objects=[a, b],
                          occlusions=events, noise=DetectorNoise(score_range=(0.9, 0.9)), seed=seed)


def scene_to_detections(det_frames: Frames):
    """Convert detection records to :class:`~spiketrack.head.Detection` lists per frame."""
    from .head import Detection

    return {f: [Detection(r.box, float(r.conf)) for r in recs] for f, recs in det_frames.items()}
