"""Hand-built micro-scenes with metric values worked out by hand."""
import numpy as np
import pytest

from spiketrack.metrics import HOTA_ALPHAS, clear_metrics, evaluate, format_report, hota, idf1
from spiketrack.mot_io import SequenceRecord


def rec(f, i, x, y=0.0, w=10.0, h=10.0):
    return SequenceRecord(f, i, float(x), float(y), w, h, 1.0)


def seq(rows):
    out = {}
    for r in rows:
        out.setdefault(r.frame, []).append(r)
    return out


def walker(i, frames, y=0.0, x0=0.0):
    return [rec(f, i, x0 + 3 * f, y) for f in frames]


GT1 = seq(walker(1, range(1, 11)))


def test_alpha_grid():
    np.testing.assert_allclose(HOTA_ALPHAS, np.arange(1, 20) * 0.05)


def test_perfect_tracking():
    r = evaluate(GT1, GT1)
    assert (r.hota, r.mota, r.idf1, r.deta, r.assa, r.assr) == pytest.approx((1, 1, 1, 1, 1, 1))
    assert r.ids == 0 and r.frag == 0


def test_one_missed_frame_at_end():
    pred = seq(walker(1, range(1, 10)))
    c = clear_metrics(GT1, pred)
    assert c.mota == pytest.approx(0.9) and c.fn == 1 and c.frag == 0
    assert idf1(GT1, pred) == pytest.approx(18 / 19)
    assert hota(GT1, pred).hota == pytest.approx(0.9)


def test_gap_counts_one_fragmentation():
    pred = seq(walker(1, [1, 2, 3, 6, 7, 8, 9, 10]))
    r = evaluate(GT1, pred)
    assert r.frag == 1 and r.ids == 0
    assert r.mota == pytest.approx(0.8)
    assert r.idf1 == pytest.approx(8 / 9)
    assert r.hota == pytest.approx(0.8)


def test_split_identity():
    pred = seq(walker(1, range(1, 6)) + walker(2, range(6, 11)))
    r = evaluate(GT1, pred)
    assert r.ids == 1
    assert r.mota == pytest.approx(0.9)
    assert r.idf1 == pytest.approx(0.5)
    assert r.deta == pytest.approx(1.0)
    assert r.assa == pytest.approx(0.5)
    assert r.hota == pytest.approx(np.sqrt(0.5))


def test_empty_prediction():
    r = evaluate(GT1, {})
    assert (r.hota, r.mota, r.idf1, r.deta) == (0, 0, 0, 0)


def test_false_positive():
    pred = seq(walker(1, range(1, 11)) + [rec(1, 2, 200, 200)])
    r = evaluate(GT1, pred)
    assert r.mota == pytest.approx(0.9)
    assert r.idf1 == pytest.approx(20 / 21)
    assert r.hota == pytest.approx(np.sqrt(10 / 11))


def test_constant_localization_error():
    # a 2 px shift of a 10 px box gives IoU 2/3, matched for the 13 alphas up to 0.65
    pred = seq([rec(f, 1, 3 * f + 2) for f in range(1, 11)])
    h = hota(GT1, pred)
    assert h.hota == pytest.approx(13 / 19)
    # alphas without a match score LocA 1
    assert h.loca == pytest.approx((13 * 2 / 3 + 6) / 19)
    assert clear_metrics(GT1, pred).mota == pytest.approx(1.0)


def test_identity_swap_between_two_objects():
    gt = seq(walker(1, range(1, 11)) + walker(2, range(1, 11), y=100))
    pred = seq(walker(1, range(1, 6)) + walker(2, range(1, 6), y=100)
               + walker(2, range(6, 11)) + walker(1, range(6, 11), y=100))
    r = evaluate(gt, pred)
    assert r.ids == 2
    assert r.mota == pytest.approx(0.9)
    assert r.idf1 == pytest.approx(0.5)


def test_relabeling_predictions_changes_nothing():
    gt = seq(walker(1, range(1, 11)) + walker(2, range(1, 11), y=100))
    pred = seq(walker(1, range(1, 8)) + walker(2, range(3, 11), y=100) + walker(3, range(8, 11)))
    relabeled = {f: [r._replace(id={1: 70, 2: 5, 3: 12}[r.id]) for r in rs] for f, rs in pred.items()}
    assert evaluate(gt, pred) == evaluate(gt, relabeled)


def test_continuation_is_preferred():
    # both predictions overlap the object in frame 2; keeping id 1 avoids a switch
    gt = seq(walker(1, [1, 2]))
    pred = seq([rec(1, 1, 3), rec(2, 1, 6.5), rec(2, 2, 6)])
    c = clear_metrics(gt, pred)
    assert c.ids == 0 and c.fp == 1


def test_format_report_layout():
    r = evaluate(GT1, GT1)
    lines = format_report([("seq", r)]).splitlines()
    assert lines[0].split() == ["name", "HOTA", "MOTA", "IDF1", "DetA", "AssA", "AssR", "IDs", "Frag"]
    assert lines[1].split() == ["seq", "100.00", "100.00", "100.00", "100.00", "100.00", "100.00", "0", "0"]
