"""CLEAR (MOTA, IDs, Frag), IDF1 and HOTA over MOTChallenge-style frame dicts."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import pairwise_iou
from .mot_io import SequenceRecord

HOTA_ALPHAS = np.arange(0.05, 0.99, 0.05)
_EPS = np.finfo(float).eps

FrameDict = Mapping[int, Sequence[SequenceRecord]]


@dataclass
class ClearResult:
    mota: float
    ids: int
    frag: int
    fn: int
    fp: int
    tp: int
    num_gt: int


@dataclass
class HotaResult:
    hota: float
    deta: float
    assa: float
    assr: float
    loca: float


@dataclass
class MetricReport:
    hota: float
    mota: float
    idf1: float
    deta: float
    assa: float
    assr: float
    ids: int
    frag: int

    def as_dict(self) -> dict:
        return asdict(self)


def _frame_arrays(recs: Sequence[SequenceRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not recs:
        return np.zeros(0, int), np.zeros((0, 4))
    ids = np.array([r.id for r in recs], dtype=int)
    boxes = np.array([[r.x + r.w / 2, r.y + r.h / 2, r.w, r.h] for r in recs], dtype=float)
    return ids, boxes


def _frames(gt: FrameDict, pred: FrameDict):
    for f in sorted(set(gt) | set(pred)):
        gi, gb = _frame_arrays(gt.get(f, []))
        pi, pb = _frame_arrays(pred.get(f, []))
        sim = pairwise_iou(gb, pb).reshape(len(gi), len(pi))
        yield f, gi, pi, sim


def clear_metrics(gt: FrameDict, pred: FrameDict, iou_match_thresh: float = 0.5) -> ClearResult:
    """Frame-wise matching that keeps a gt's previous partner when still valid."""
    tp = fn = fp = ids = num_gt = 0
    last_match: dict[int, int] = {}
    history: dict[int, list[bool]] = {}
    for _, gi, pi, sim in _frames(gt, pred):
        num_gt += len(gi)
        valid = sim >= iou_match_thresh
        pairs: list[tuple[int, int]] = []
        used_g, used_p = set(), set()
        pcol = {p: j for j, p in enumerate(pi)}
        for i, g in enumerate(gi):
            j = pcol.get(last_match.get(g, None), None)
            if j is not None and valid[i, j] and j not in used_p:
                pairs.append((i, j))
                used_g.add(i)
                used_p.add(j)
        rows = [i for i in range(len(gi)) if i not in used_g]
        cols = [j for j in range(len(pi)) if j not in used_p]
        if rows and cols:
            sub = valid[np.ix_(rows, cols)]
            if sub.any():
                cost = np.where(sub, 1.0 - sim[np.ix_(rows, cols)], 1e6)
                r, c = linear_sum_assignment(cost)
                pairs += [(rows[a], cols[b]) for a, b in zip(r, c) if sub[a, b]]
        matched_g = {i for i, _ in pairs}
        for i, j in pairs:
            g, p = int(gi[i]), int(pi[j])
            if g in last_match and last_match[g] != p:
                ids += 1
            last_match[g] = p
        for i, g in enumerate(gi):
            history.setdefault(int(g), []).append(i in matched_g)
        tp += len(pairs)
        fn += len(gi) - len(pairs)
        fp += len(pi) - len(pairs)
    frag = 0
    for flags in history.values():
        idx = [k for k, m in enumerate(flags) if m]
        if not idx:
            continue
        seg = flags[idx[0]:idx[-1] + 1]
        frag += sum(1 for a, b in zip(seg, seg[1:]) if a and not b)
    mota = 1.0 - (fn + fp + ids) / num_gt if num_gt else 0.0
    return ClearResult(mota, ids, frag, fn, fp, tp, num_gt)


def _id_index(frames: FrameDict) -> dict[int, int]:
    ids = sorted({r.id for recs in frames.values() for r in recs})
    return {v: k for k, v in enumerate(ids)}


def idf1(gt: FrameDict, pred: FrameDict, iou_match_thresh: float = 0.5) -> float:
    gidx, pidx = _id_index(gt), _id_index(pred)
    n_gt = sum(len(v) for v in gt.values())
    n_pred = sum(len(v) for v in pred.values())
    if not gidx or not pidx:
        return 0.0
    overlap = np.zeros((len(gidx), len(pidx)))
    for _, gi, pi, sim in _frames(gt, pred):
        if len(gi) and len(pi):
            ok = sim >= iou_match_thresh
            r, c = np.nonzero(ok)
            np.add.at(overlap, ([gidx[g] for g in gi[r]], [pidx[p] for p in pi[c]]), 1)
    rows, cols = linear_sum_assignment(-overlap)
    idtp = overlap[rows, cols].sum()
    return float(2 * idtp / (n_gt + n_pred))


def hota(gt: FrameDict, pred: FrameDict, alphas: np.ndarray = HOTA_ALPHAS) -> HotaResult:
    """Higher-order tracking accuracy averaged over localization thresholds."""
    gidx, pidx = _id_index(gt), _id_index(pred)
    G, P = len(gidx), len(pidx)
    A = len(alphas)
    if G == 0 or P == 0:
        return HotaResult(0.0, 0.0, 0.0, 0.0, 0.0)
    frames = []
    potential = np.zeros((G, P))
    gt_count = np.zeros((G, 1))
    pr_count = np.zeros((1, P))
    for _, gi, pi, sim in _frames(gt, pred):
        g = np.array([gidx[v] for v in gi], dtype=int)
        p = np.array([pidx[v] for v in pi], dtype=int)
        frames.append((g, p, sim))
        if len(g) and len(p):
            denom = sim.sum(0)[None, :] + sim.sum(1)[:, None] - sim
            sim_iou = np.zeros_like(sim)
            mask = denom > _EPS
            sim_iou[mask] = sim[mask] / denom[mask]
            potential[g[:, None], p[None, :]] += sim_iou
        gt_count[g] += 1
        pr_count[0, p] += 1
    global_score = potential / (gt_count + pr_count - potential)

    tp = np.zeros(A)
    fn = np.zeros(A)
    fp = np.zeros(A)
    loc = np.zeros(A)
    match_counts = np.zeros((A, G, P))
    for g, p, sim in frames:
        if len(p) == 0:
            fn += len(g)
            continue
        if len(g) == 0:
            fp += len(p)
            continue
        score = global_score[g[:, None], p[None, :]] * sim
        r, c = linear_sum_assignment(-score)
        for a, alpha in enumerate(alphas):
            ok = sim[r, c] >= alpha - _EPS
            n = int(ok.sum())
            tp[a] += n
            fn[a] += len(g) - n
            fp[a] += len(p) - n
            loc[a] += sim[r[ok], c[ok]].sum()
            match_counts[a, g[r[ok]], p[c[ok]]] += 1
    assa = np.zeros(A)
    assr = np.zeros(A)
    for a in range(A):
        mc = match_counts[a]
        ass_iou = mc / np.maximum(1, gt_count + pr_count - mc)
        assa[a] = (mc * ass_iou).sum() / max(1, tp[a])
        assr[a] = (mc * (mc / np.maximum(1, gt_count))).sum() / max(1, tp[a])
    deta = tp / np.maximum(1, tp + fn + fp)
    h = np.sqrt(deta * assa)
    # thresholds with no true positive count as perfect localization, as in the reference evaluator
    loca = np.where(tp > 0, loc / np.maximum(_EPS, tp), 1.0)
    return HotaResult(float(h.mean()), float(deta.mean()), float(assa.mean()), float(assr.mean()),
                      float(loca.mean()))


def evaluate(gt: FrameDict, pred: FrameDict, iou_match_thresh: float = 0.5) -> MetricReport:
    c = clear_metrics(gt, pred, iou_match_thresh)
    h = hota(gt, pred)
    return MetricReport(hota=h.hota, mota=c.mota, idf1=idf1(gt, pred, iou_match_thresh),
                        deta=h.deta, assa=h.assa, assr=h.assr, ids=c.ids, frag=c.frag)


def format_report(rows: Sequence[tuple[str, MetricReport]]) -> str:
    """Aligned text table, rates x100."""
    head = f"{'name':<16}{'HOTA':>8}{'MOTA':>8}{'IDF1':>8}{'DetA':>8}{'AssA':>8}{'AssR':>8}{'IDs':>6}{'Frag':>6}"
    lines = [head]
    for name, r in rows:
        lines.append(f"{name:<16}{100 * r.hota:8.2f}{100 * r.mota:8.2f}{100 * r.idf1:8.2f}"
                     f"{100 * r.deta:8.2f}{100 * r.assa:8.2f}{100 * r.assr:8.2f}{r.ids:6d}{r.frag:6d}")
    return "\n".join(lines)
