"""Desk-scale ablations: outer timestep count T and the loss normalization lambda.

The spiking regressor stands in for the detector's box-regression stage: it
re-emits every simulated detection box through its spiking layers, and the
result is tracked and scored against ground truth. Only the *shape* of the
sweeps is meaningful at this scale.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import BBox, DEFAULT_LAMBDA
from .head import Detection
from .metrics import MetricReport, evaluate
from .mot_io import Frames, SequenceRecord
from .synthetic import DetectorNoise, SyntheticOutput, SyntheticScene, gen_synthetic
from .tracker import TrackerConfig, run_tracker
from .train import (RegressorConfig, SpikingRegressor, fixed_normalizer, grouped_loss,
                    random_boxes, train_regressor)

T_VALUES = (1, 2, 4, 8)
LAMBDA_VALUES = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class AblationDataset:
    name: str
    train_groups: list[np.ndarray]
    heldout_groups: list[np.ndarray]
    sequences: list[SyntheticOutput]

    @property
    def train_boxes(self) -> np.ndarray:
        return np.concatenate(self.train_groups)


def toy_dataset(kind: str = "small", seed: int = 0, n_sequences: int = 2, n_frames: int = 40,
                groups: int = 10, per_group: int = 50) -> AblationDataset:
    """``small``: swarm-like 6-20 px objects; ``mixed``: alternating small (4-16 px) and
    large (48-128 px) groups, so per-batch and dataset-wide sizes disagree."""
    rng = np.random.default_rng([seed, 11])
    canvas = (320.0, 256.0)

    def group(k):
        if kind == "small":
            return random_boxes(rng, per_group, 6, 20, canvas)
        if kind == "mixed":
            return random_boxes(rng, per_group, 4, 16, canvas) if k % 2 == 0 else \
                random_boxes(rng, per_group, 48, 128, canvas)
        raise ValueError(f"unknown dataset kind {kind!r}")

    train = [group(k) for k in range(groups)]
    held = [group(k) for k in range(groups)]
    noise = DetectorNoise(jitter=0.02, drop_rate=0.02, fp_rate=0.05, score_range=(0.7, 1.0))
    sizes = (6.0, 20.0) if kind == "small" else (8.0, 96.0)
    seqs = []
    for s in range(n_sequences):
        scene = SyntheticScene(width=320, height=256, n_frames=n_frames, n_objects=8,
                               min_size=sizes[0], max_size=sizes[1], max_speed=2.0,
                               max_pair_iou=0.1, noise=noise, seed=seed * 100 + s)
        seqs.append(gen_synthetic(scene))
    return AblationDataset(f"toy-{kind}", train, held, seqs)


def _group_batches(groups: Sequence[np.ndarray], batch_size: int):
    starts = np.cumsum([0] + [len(g) for g in groups])

    def draw(rng):
        k = int(rng.integers(len(groups)))
        n = len(groups[k])
        return starts[k] + rng.choice(n, min(batch_size, n), replace=False)

    return draw


def train_on(ds: AblationDataset, cfg: RegressorConfig):
    return train_regressor(ds.train_boxes, cfg, batches=_group_batches(ds.train_groups, 32))


def refine_detections(model: SpikingRegressor, det: Frames) -> dict[int, list[Detection]]:
    out = {}
    for f, recs in det.items():
        if not recs:
            out[f] = []
            continue
        boxes = np.array([r.box.as_array() for r in recs])
        pred = model.predict(boxes)
        out[f] = [Detection(BBox.from_array(b), float(r.conf)) for b, r in zip(pred, recs)
                  if b[2] > 0 and b[3] > 0]
    return out


def pipeline_report(model: SpikingRegressor, sequences: Sequence[SyntheticOutput],
                    tracker_config: Optional[TrackerConfig] = None) -> MetricReport:
    """Refine -> track -> evaluate each sequence; metrics are averaged over sequences."""
    reports = []
    for seq in sequences:
        dets = refine_detections(model, seq.det)
        res = run_tracker(dets, tracker_config, len(seq.gt))
        pred = {f: [SequenceRecord(f, o.track_id, *o.box.tlwh(), o.conf) for o in outs]
                for f, outs in res.items()}
        reports.append(evaluate(seq.gt, pred))
    return MetricReport(
        **{k: float(np.mean([getattr(r, k) for r in reports]))
           for k in ("hota", "mota", "idf1", "deta", "assa", "assr")},
        ids=int(sum(r.ids for r in reports)), frag=int(sum(r.frag for r in reports)))


@dataclass
class TimestepRow:
    dataset: str
    T: int
    report: MetricReport
    loss: float


@dataclass
class LambdaRow:
    label: str
    report: MetricReport
    loss: float
    c: Optional[float] = None


def ablation_timestep(dataset: AblationDataset, T_values: Sequence[int] = T_VALUES,
                      base: Optional[RegressorConfig] = None,
                      tracker_config: Optional[TrackerConfig] = None) -> list[TimestepRow]:
    base = base or RegressorConfig()
    rows = []
    for T in T_values:
        res = train_on(dataset, replace(base, timesteps=int(T)))
        rows.append(TimestepRow(dataset.name, int(T), pipeline_report(res.model, dataset.sequences, tracker_config),
                                grouped_loss(res.model, dataset.heldout_groups)))
    by_T = {r.T: r for r in rows}
    if 1 in by_T and 2 in by_T and by_T[2].report.hota < by_T[1].report.hota:
        warnings.warn("HOTA degraded from T=1 to T=2 on this toy run", RuntimeWarning)
    return rows


def ablation_lambda(dataset: AblationDataset, lambda_values: Sequence[float] = LAMBDA_VALUES,
                    include_fixed: bool = True, base: Optional[RegressorConfig] = None,
                    tracker_config: Optional[TrackerConfig] = None) -> list[LambdaRow]:
    """One run per lambda plus a fixed-C run with C = dataset-wide mean sqrt(w*h).

    Every run is scored by the same yardstick: held-out adaptive loss at the
    shipped lambda, one factor per held-out group.
    """
    base = base or RegressorConfig()
    rows = []
    for lam in lambda_values:
        res = train_on(dataset, replace(base, lam=float(lam), fixed_c=None))
        rows.append(LambdaRow(f"{lam:.1f}", pipeline_report(res.model, dataset.sequences, tracker_config),
                              grouped_loss(res.model, dataset.heldout_groups, DEFAULT_LAMBDA)))
    if include_fixed:
        c = fixed_normalizer(dataset.train_boxes)
        res = train_on(dataset, replace(base, fixed_c=c))
        rows.append(LambdaRow("Fixed C", pipeline_report(res.model, dataset.sequences, tracker_config),
                              grouped_loss(res.model, dataset.heldout_groups, DEFAULT_LAMBDA), c))
    return rows


def format_timestep_table(rows: Sequence[TimestepRow]) -> str:
    lines = [f"{'Dataset':<12}{'T':>3}{'HOTA':>8}{'IDF1':>8}{'MOTA':>8}{'DetA':>8}{'Loss':>9}"]
    for r in rows:
        m = r.report
        lines.append(f"{r.dataset:<12}{r.T:>3}{100 * m.hota:8.2f}{100 * m.idf1:8.2f}"
                     f"{100 * m.mota:8.2f}{100 * m.deta:8.2f}{r.loss:9.4f}")
    return "\n".join(lines)


def format_lambda_table(rows: Sequence[LambdaRow]) -> str:
    lines = [f"{'lambda':<8}{'HOTA':>8}{'MOTA':>8}{'IDF1':>8}{'DetA':>8}{'Loss':>9}"]
    for r in rows:
        m = r.report
        lines.append(f"{r.label:<8}{100 * m.hota:8.2f}{100 * m.mota:8.2f}{100 * m.idf1:8.2f}"
                     f"{100 * m.deta:8.2f}{r.loss:9.4f}")
    return "\n".join(lines)
