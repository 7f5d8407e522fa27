import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskflow.core import FlowField, MaskFrame, MaskSequence, ValidationError
from maskflow.evalkit import endpoint_error, make_scene, propagation_drift, temporal_iou, volume_iou


def seq_of(*arrays):
    return MaskSequence(tuple(MaskFrame.from_bool(a) for a in arrays))


def rect(shape, x0, y0, w, h):
    m = np.zeros(shape, bool)
    m[y0 : y0 + h, x0 : x0 + w] = True
    return m


def test_identical_sequences():
    a = seq_of(rect((8, 8), 1, 1, 3, 3), np.zeros((8, 8), bool))
    assert temporal_iou(a, a).mean == 1.0


def test_disjoint_masks():
    assert temporal_iou(seq_of(rect((8, 8), 0, 0, 2, 2)), seq_of(rect((8, 8), 4, 4, 2, 2))).mean == 0.0


def test_cross_rectangles_one_third():
    a = rect((8, 8), 2, 3, 4, 2)  # 2 rows x 4 cols
    b = rect((8, 8), 3, 2, 2, 4)  # 4 rows x 2 cols
    assert temporal_iou(seq_of(a), seq_of(b)).mean == pytest.approx(1 / 3, abs=0)


def test_errors():
    a = seq_of(np.zeros((4, 4), bool))
    with pytest.raises(ValidationError):
        temporal_iou(a, seq_of(np.zeros((4, 4), bool), np.zeros((4, 4), bool)))
    with pytest.raises(ValidationError):
        temporal_iou(a, seq_of(np.zeros((4, 5), bool)))
    with pytest.raises(ValidationError):
        temporal_iou(a, MaskSequence((MaskFrame(np.full((4, 4), 0.5)),)))


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_iou_symmetric_and_identity(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(3, 5, 5)) > 0.5
    b = rng.uniform(size=(3, 5, 5)) > 0.5
    sa, sb = seq_of(*a), seq_of(*b)
    r1, r2 = temporal_iou(sa, sb), temporal_iou(sb, sa)
    assert r1.per_frame == r2.per_frame
    assert all(0.0 <= x <= 1.0 for x in r1.per_frame)
    assert (r1.mean == 1.0) == bool(np.array_equal(a, b))


def test_epe_examples():
    f = FlowField(np.ones((3, 3)), np.zeros((3, 3)))
    assert endpoint_error(f, f).mean == 0.0
    g = FlowField(f.u + 0.3, f.v + 0.4)
    assert endpoint_error(g, f).mean == pytest.approx(0.5, abs=1e-15)


def test_epe_matches_scalar_loop():
    rng = np.random.default_rng(7)
    a = FlowField(rng.normal(size=(4, 5)), rng.normal(size=(4, 5)))
    b = FlowField(rng.normal(size=(4, 5)), rng.normal(size=(4, 5)))
    errs = [((a.u[y, x] - b.u[y, x]) ** 2 + (a.v[y, x] - b.v[y, x]) ** 2) ** 0.5 for y in range(4) for x in range(5)]
    r = endpoint_error(a, b)
    assert abs(r.mean - sum(errs) / len(errs)) <= 1e-12 * max(1.0, r.mean)
    assert r.max == pytest.approx(max(errs), rel=1e-12)


def test_epe_shape_mismatch():
    with pytest.raises(ValidationError):
        endpoint_error(FlowField.zeros(2, 2), FlowField.zeros(2, 3))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_epe_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (FlowField(rng.normal(size=(4, 4)), rng.normal(size=(4, 4))) for _ in range(3))
    assert endpoint_error(a, c).mean <= endpoint_error(a, b).mean + endpoint_error(b, c).mean + 1e-12
    assert endpoint_error(a, a).mean == 0.0


def test_scene_is_consistent():
    s = make_scene("translation", 4, dx=1.0)
    assert len(s.video) == 4 and len(s.masks) == 4 and len(s.flows) == 3
    a, b = s.masks[0].values, s.masks[1].values
    assert np.array_equal(b[:, 1:], a[:, :-1])


def test_zero_motion_drift():
    assert propagation_drift(motion="translation", frames=6, dx=0.0).mean == 1.0


def test_translation_drift():
    assert propagation_drift(motion="translation", frames=16).mean >= 0.95


def test_rotation_drift():
    assert propagation_drift(motion="rotation", frames=16, angle=np.deg2rad(2.0)).mean >= 0.90


def test_volume_iou():
    a = np.zeros((2, 3, 3), bool)
    assert volume_iou(a, a) == 1.0
    b = a.copy()
    b[0, 0, 0] = True
    assert volume_iou(a, b) == 0.0
