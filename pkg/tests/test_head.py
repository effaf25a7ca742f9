import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiketrack.geometry import BBox, iou
from spiketrack.head import (NMS_IOU, STRIDES, TAU_HIGH, TAU_LOW, Detection, HeadOutput,
                             HeadWeights, LevelHeadWeights, LevelOutput, Source,
                             decode_boxes, decode_predictions, encode_box, head_forward,
                             init_head, nms, partition_detections)
from spiketrack.network import DetectorConfig, SpikeDetector
from spiketrack.spiking import ConvSpec, ShapeError


def _level(box_raw, obj, cls, stride=8):
    return LevelOutput(stride, np.asarray(cls, float)[None], np.asarray(box_raw, float)[None],
                       np.asarray(obj, float)[None])


def _head(level0):
    empty = lambda s: _level(np.zeros((4, 0, 0)), np.zeros((1, 0, 0)), np.zeros((1, 0, 0)), s)
    return HeadOutput([level0, empty(16), empty(32)])


def test_defaults():
    assert (TAU_HIGH, TAU_LOW, NMS_IOU) == (0.6, 0.1, 0.7)
    assert STRIDES == (8, 16, 32)


# ---- forward

def test_zero_features_give_final_biases():
    rng = np.random.default_rng(0)
    w = init_head(rng, [4, 6, 8], hidden=5, num_classes=2)
    for lw in w.levels:
        for spec in (lw.cls_pred, lw.box_pred, lw.obj_pred):
            spec.bias[...] = rng.normal(size=spec.bias.shape)
    feats = [np.zeros((2, 1, c, s, s), np.float32) for c, s in ((4, 6), (6, 3), (8, 2))]
    out = head_forward(feats, w)
    for lvl, lw in zip(out.levels, w.levels):
        np.testing.assert_allclose(lvl.cls_logits[0, :, 1, 1], lw.cls_pred.bias)
        np.testing.assert_allclose(lvl.box_raw[0, :, 0, 0], lw.box_pred.bias)
        np.testing.assert_allclose(lvl.obj_logit[0, :, 0, 0], lw.obj_pred.bias)


def test_grid_shapes_follow_strides():
    det = SpikeDetector(DetectorConfig(widths=(4, 4, 6, 8), stem_width=4, head_hidden=4))
    out = det(np.random.default_rng(1).uniform(size=(1, 3, 64, 96)))
    for lvl, s in zip(out.levels, STRIDES):
        assert lvl.stride == s
        assert lvl.box_raw.shape == (1, 4, 64 // s, 96 // s)
        assert lvl.obj_logit.shape == (1, 1, 64 // s, 96 // s)
        assert np.all(np.isfinite(lvl.box_raw))


def _scalar(v, k=1, bias=None):
    w = np.zeros((1, 1, k, k))
    w[0, 0, k // 2, k // 2] = v
    return ConvSpec("standard" if k > 1 else "pointwise", w, None if bias is None else np.array([bias]))


def test_scalar_trace_on_one_cell():
    lw = LevelHeadWeights(stem=_scalar(1.5), cls_convs=[_scalar(2.0, 3), _scalar(0.5, 3)],
                          cls_pred=_scalar(0.7, bias=0.1), reg_convs=[_scalar(1.0, 3), _scalar(3.0, 3)],
                          box_pred=ConvSpec("pointwise", np.array([1.0, 2.0, 0.5, 0.25]).reshape(4, 1, 1, 1),
                                            None, 1, None),
                          obj_pred=_scalar(-1.0, bias=0.3))
    lw.box_pred.bias = np.array([0.0, 0.1, 0.2, 0.3])
    weights = HeadWeights([lw] * 3)
    x = np.array([0.8, 1.7]).reshape(2, 1, 1, 1, 1)
    out = head_forward([x, x, x], weights).levels[0]

    def lif(seq):
        u, res = 0.0, []
        for v in seq:
            u += v
            s = min(max(round(u), 0), 4)
            u -= s
            res.append(s)
        return np.array(res, float)

    stem = 1.5 * lif([0.8, 1.7])
    c = 0.5 * lif(2.0 * lif(stem))
    r = 3.0 * lif(1.0 * lif(stem))
    assert out.cls_logits[0, 0, 0, 0] == pytest.approx(np.mean(0.7 * lif(c) + 0.1))
    assert out.obj_logit[0, 0, 0, 0] == pytest.approx(np.mean(-1.0 * lif(r) + 0.3))
    np.testing.assert_allclose(out.box_raw[0, :, 0, 0],
                               [np.mean(k * lif(r) + b) for k, b in zip([1, 2, 0.5, 0.25], [0, 0.1, 0.2, 0.3])])


def test_head_forward_shape_errors():
    w = init_head(np.random.default_rng(2), [4, 4, 4])
    with pytest.raises(ShapeError):
        head_forward([np.zeros((1, 1, 3, 2, 2))] * 3, w)
    with pytest.raises(ShapeError):
        head_forward([np.zeros((1, 1, 4, 2, 2))] * 2, w)


# ---- decode

def test_decode_cell_corner_convention():
    raw = np.zeros((4, 3, 5))
    boxes = decode_boxes(raw, 8)
    # cell (gx=3, gy=2) is row-major index 2 * 5 + 3
    np.testing.assert_array_equal(boxes[13], [24, 16, 8, 8])


def test_score_fusion_and_thresholds():
    raw = np.zeros((4, 1, 2))
    obj = np.array([[[0.0, -50.0]]])
    cls = np.array([[[0.0, 0.0]]])
    dets = decode_predictions(_head(_level(raw, obj, cls)), (0.6, 0.1))
    assert len(dets) == 1
    assert dets[0].score == pytest.approx(0.25, abs=1e-15) and dets[0].source is Source.LOW
    obj, cls = np.array([[[10.0, 0.0]]]), np.array([[[10.0, 0.0]]])
    dets = decode_predictions(_head(_level(raw, obj, cls)), (0.6, 0.1))
    assert [d.source for d in dets] == [Source.HIGH, Source.LOW]


def test_decode_rejects_bad_thresholds():
    h = _head(_level(np.zeros((4, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1))))
    for th in ((0.1, 0.6), (0.5, 0.5), (1.2, 0.1), (0.6, -0.1)):
        with pytest.raises(ValueError):
            decode_predictions(h, th)


def test_decode_clips_to_image():
    raw = np.zeros((4, 1, 1))
    raw[2:] = np.log(4.0)  # 32 px box centered at the origin
    dets = decode_predictions(_head(_level(raw, np.full((1, 1, 1), 9.0), np.full((1, 1, 1), 9.0))),
                              image_size=(100, 100))
    x1, y1, x2, y2 = dets[0].box.corners()
    assert (x1, y1, x2, y2) == (0, 0, 16, 16)
    assert 0 <= dets[0].score <= 1


@given(st.integers(0, 9), st.integers(0, 9), st.sampled_from(STRIDES),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-2, 3), st.floats(-2, 3))
def test_encode_inverts_decode(gx, gy, s, ox, oy, lw, lh):
    raw = np.zeros((4, 10, 10))
    raw[:, gy, gx] = [ox, oy, lw, lh]
    box = BBox(*decode_boxes(raw, s)[gy * 10 + gx])
    np.testing.assert_allclose(encode_box(box, (gx, gy), s), [ox, oy, lw, lh], atol=1e-6)


# ---- NMS

def test_nms_examples():
    a = Detection(BBox(10, 10, 8, 8), 0.9)
    b = Detection(BBox(10, 10, 8, 8), 0.8)
    kept, sup = nms([b, a], 0.7)
    assert kept == [a] and [d.box for d in sup] == [b.box] and sup[0].source is Source.SUPPRESSED
    far = Detection(BBox(100, 100, 8, 8), 0.5)
    kept, sup = nms([a, far], 0.7)
    assert kept == [a, far] and sup == []
    with pytest.raises(ValueError):
        nms([a], 1.0)


def test_nms_is_per_class():
    a = Detection(BBox(10, 10, 8, 8), 0.9, class_id=0)
    b = Detection(BBox(10, 10, 8, 8), 0.8, class_id=1)
    assert len(nms([a, b])[0]) == 2


def test_nms_ties_prefer_lower_index():
    a = Detection(BBox(10, 10, 8, 8), 0.5)
    b = Detection(BBox(10.5, 10, 8, 8), 0.5)
    kept, sup = nms([a, b], 0.5)
    assert kept == [a] and sup[0].box == b.box


det_strategy = st.builds(
    lambda x, y, w, h, s, c: Detection(BBox(x, y, w, h), s, c),
    st.floats(0, 60), st.floats(0, 60), st.floats(2, 30), st.floats(2, 30), st.floats(0, 1),
    st.integers(0, 1))


@settings(max_examples=100)
@given(st.lists(det_strategy, max_size=25), st.floats(0.05, 0.95))
def test_nms_partitions_input(dets, thr):
    kept, sup = nms(dets, thr)
    key = lambda d: (tuple(d.box.as_array()), d.score, d.class_id)
    assert sorted(map(key, kept + sup)) == sorted(map(key, dets))
    # kept boxes of the same class never overlap above the threshold
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            if a.class_id == b.class_id:
                assert iou(a.box, b.box) <= thr
    assert nms(dets, thr) == (kept, sup)


@settings(max_examples=100)
@given(st.lists(det_strategy, max_size=25))
def test_partition_is_score_consistent(dets):
    high, low, sup = partition_detections(dets, 0.6, 0.1, 0.7)
    assert all(d.score >= 0.6 and d.source is Source.HIGH for d in high)
    assert all(0.1 <= d.score < 0.6 and d.source is Source.LOW for d in low)
    assert all(d.source is Source.SUPPRESSED and d.score >= 0.1 for d in sup)
    assert len(high) + len(low) + len(sup) == sum(d.score >= 0.1 for d in dets)


# ---- detector

def test_detector_checkpoint_round_trip(tmp_path):
    cfg = DetectorConfig(widths=(4, 4, 6, 8), stem_width=4, head_hidden=4, seed=3)
    det = SpikeDetector(cfg)
    det.save(tmp_path / "det.npz")
    back = SpikeDetector.load(tmp_path / "det.npz")
    assert back.config == cfg
    img = np.random.default_rng(4).uniform(size=(1, 3, 32, 32))
    for a, b in zip(det(img).levels, back(img).levels):
        assert np.array_equal(a.box_raw, b.box_raw)
