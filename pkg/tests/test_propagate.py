import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskflow.core import FlowField, FlowSequence, MaskFrame, MaskSequence, ValidationError
from maskflow.evalkit import temporal_iou
from maskflow.flow import synthetic_flow
from maskflow.propagate import (
    MorphParams,
    PropagationConfig,
    area_ratio,
    binarize,
    propagate_masks,
    refine_mask,
    select_initial_mask,
    vanished_frames,
)


def box(shape, x0, y0, w, h):
    """Axis-aligned rectangle, clipped to the grid."""
    m = np.zeros(shape, bool)
    m[max(y0, 0) : max(y0 + h, 0), max(x0, 0) : max(x0 + w, 0)] = True
    return MaskFrame.from_bool(m)


def translation_flows(shape, dx, dy, n):
    f = synthetic_flow("translation", shape, dx=dx, dy=dy)
    b = synthetic_flow("translation", shape, dx=-dx, dy=-dy)
    return FlowSequence((f,) * n, (b,) * n)


# ----------------------------------------------------------------------------
# initial mask


def test_add_returns_target_mask():
    mt = box((8, 8), 1, 1, 3, 3)
    assert select_initial_mask("add", None, mt) is mt


def test_remove_returns_source_mask():
    ms = box((8, 8), 2, 2, 2, 2)
    assert select_initial_mask("remove", ms, None) is ms


def test_replace_union_of_disjoint_masks():
    a = np.zeros((10, 10), bool)
    a[0, :5] = True
    b = np.zeros((10, 10), bool)
    b[5, :7] = True
    u = select_initial_mask("replace", MaskFrame.from_bool(a), MaskFrame.from_bool(b))
    assert u.values.sum() == 12


@given(st.integers(0, 2**32 - 1))
def test_replace_union_idempotent(seed):
    m = MaskFrame.from_bool(np.random.default_rng(seed).uniform(size=(6, 6)) > 0.5)
    assert np.array_equal(select_initial_mask("replace", m, m).values, m.values)


@pytest.mark.parametrize("task,ms,mt", [("add", 1, None), ("remove", None, 1), ("replace", 1, None), ("replace", None, 1), ("move", 1, 1)])
def test_missing_masks_rejected(task, ms, mt):
    m = box((4, 4), 0, 0, 2, 2)
    with pytest.raises(ValidationError):
        select_initial_mask(task, m if ms else None, m if mt else None)


# ----------------------------------------------------------------------------
# refinement and binarisation


def test_refine_empty():
    assert not refine_mask(MaskFrame(np.zeros((9, 9)))).values.any()


def test_refine_removes_isolated_pixel():
    m = np.zeros((9, 9))
    m[4, 4] = 1.0
    assert not refine_mask(MaskFrame(m), MorphParams(1, 0)).values.any()


def test_refine_keeps_solid_square():
    m = box((16, 16), 5, 5, 6, 6)
    assert np.array_equal(refine_mask(m, MorphParams(1, 1)).values, m.values)


def test_disk_element_shape():
    from maskflow.propagate import structuring_element

    assert structuring_element(1, "disk").astype(int).tolist() == [[0, 1, 0], [1, 1, 1], [0, 1, 0]]
    assert structuring_element(2, "square").all() and structuring_element(2).shape == (5, 5)


def test_closing_bridges_small_gap():
    m = np.zeros((12, 20), bool)
    m[3:9, 2:8] = True
    m[3:9, 10:16] = True
    out = refine_mask(MaskFrame.from_bool(m), MorphParams(0, 2)).values
    assert out[3:9, 2:16].all()


def test_binarize_tie_and_below():
    assert np.all(binarize(MaskFrame(np.full((3, 3), 0.5)), 0.5).values == 1)
    assert np.all(binarize(MaskFrame(np.full((3, 3), 0.49)), 0.5).values == 0)


@given(st.floats(1e-6, 1.0), st.integers(0, 2**32 - 1))
def test_binarize_binary_input_unchanged(theta, seed):
    m = MaskFrame.from_bool(np.random.default_rng(seed).uniform(size=(5, 5)) > 0.5)
    assert np.array_equal(binarize(m, theta).values, m.values)


def test_config_validation():
    for th in (0.0, 1.0, -0.1):
        with pytest.raises(ValidationError):
            PropagationConfig(binarize_threshold=th)
    with pytest.raises(ValidationError):
        PropagationConfig(occlusion_fill="nearest")
    with pytest.raises(ValidationError):
        MorphParams(-1, 0)


# ----------------------------------------------------------------------------
# propagation


def test_zero_flow_constant_sequence():
    m = box((32, 32), 8, 8, 10, 10)
    z = FlowField.zeros(32, 32)
    seq = propagate_masks(m, FlowSequence((z,) * 4, (z,) * 4))
    assert len(seq) == 5
    assert all(np.array_equal(s.values, seq[0].values) for s in seq)


def test_translation_centroid_and_iou():
    shape, n = (64, 64), 16
    seq = propagate_masks(box(shape, 10, 24, 16, 16), translation_flows(shape, 1, 0, n - 1))
    ref = MaskSequence(tuple(box(shape, 10 + t, 24, 16, 16) for t in range(n)))
    cx = [np.nonzero(m.values)[1].mean() for m in seq]
    assert np.allclose(np.diff(cx), 1.0)
    assert min(temporal_iou(seq, ref).per_frame) >= 0.99


def test_outputs_binary():
    shape = (40, 40)
    f = synthetic_flow("rotation", shape, angle=0.05)
    b = synthetic_flow("rotation", shape, angle=-0.05)
    seq = propagate_masks(box(shape, 22, 14, 10, 10), FlowSequence((f,) * 6, (b,) * 6))
    for m in seq:
        assert m.kind == "binary"
        assert np.all((m.values == 0) | (m.values == 1))


@settings(max_examples=12, deadline=None)
@given(st.integers(-2, 2), st.integers(-2, 2), st.integers(0, 40), st.integers(0, 40))
def test_integer_translation_matches_shift_away_from_border(dx, dy, x0, y0):
    shape, n = (48, 48), 8
    morph = MorphParams()
    seq = propagate_masks(box(shape, x0, y0, 10, 10), translation_flows(shape, dx, dy, n - 1))
    band = morph.open_radius + morph.close_radius + 1
    interior = np.zeros(shape, bool)
    interior[band:-band, band:-band] = True
    first = box(shape, x0, y0, 10, 10).values
    ys, xs = np.mgrid[0:48, 0:48]
    for t, m in enumerate(seq):
        # analytic shift of the first mask; anything arriving from outside the grid is 0
        sx, sy = xs - dx * t, ys - dy * t
        inb = (sx >= 0) & (sx < 48) & (sy >= 0) & (sy < 48)
        ref = np.zeros(shape)
        ref[inb] = first[sy[inb], sx[inb]]
        assert np.array_equal(m.values[interior], ref[interior])


def test_length_and_shape_mismatch():
    m = box((8, 8), 1, 1, 3, 3)
    with pytest.raises(ValidationError):
        propagate_masks(m, translation_flows((8, 9), 1, 0, 2))


def test_object_leaving_frame_vanishes():
    shape = (32, 32)
    seq = propagate_masks(box(shape, 22, 10, 8, 8), translation_flows(shape, 2, 0, 8))
    assert vanished_frames(seq)[0] <= 6


def _occluder_scene(frames=20, shape=(64, 64), side=16, bar_w=4):
    """A 16 px square moving right 1 px/frame, crossed by a full-height 4 px bar moving left 2 px/frame.

    Flows are the exact motion of whatever is visible at each pixel. Masks are
    the square's full (amodal) footprint.
    """
    h, w = shape
    xs = np.arange(w)[None, :].repeat(h, 0)
    obj = lambda t: (xs >= 16 + t) & (xs < 16 + t + side) & (np.arange(h)[:, None] >= 24) & (np.arange(h)[:, None] < 24 + side)
    bar = lambda t: (xs >= 56 - 2 * t) & (xs < 56 - 2 * t + bar_w)
    fwd, bwd = [], []
    for t in range(frames - 1):
        u = np.where(bar(t), -2.0, np.where(obj(t), 1.0, 0.0))
        ub = np.where(bar(t + 1), 2.0, np.where(obj(t + 1), -1.0, 0.0))
        fwd.append(FlowField(u, np.zeros(shape)))
        bwd.append(FlowField(ub, np.zeros(shape)))
    masks = [MaskFrame.from_bool(obj(t)) for t in range(frames)]
    return masks, FlowSequence(tuple(fwd), tuple(bwd))


@pytest.mark.xfail(strict=True, reason="visible-layer flow drags the mask with the occluder; amodal tracking is not modelled")
def test_occluder_crossing_area_stable_with_hold_previous():
    masks, flows = _occluder_scene()
    seq = propagate_masks(masks[0], flows, PropagationConfig(occlusion_fill="hold-previous"))
    areas = np.array([m.values.sum() for m in seq])
    assert (areas.max() - areas.min()) / areas[0] <= 0.10


# ----------------------------------------------------------------------------
# area ratio


def test_area_ratio_examples():
    ones, zeros = MaskFrame(np.ones((4, 4))), MaskFrame(np.zeros((4, 4)))
    half = np.zeros((4, 4))
    half[:2] = 1
    assert area_ratio(MaskSequence((ones, ones))) == 1.0
    assert area_ratio(MaskSequence((zeros,))) == 0.0
    assert area_ratio(MaskSequence((MaskFrame(half), zeros))) == 0.25


@given(st.integers(0, 2**32 - 1))
def test_area_ratio_monotone(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(3, 5, 5)) > 0.6
    b = a | (rng.uniform(size=a.shape) > 0.7)
    sa = MaskSequence(tuple(MaskFrame.from_bool(x) for x in a))
    sb = MaskSequence(tuple(MaskFrame.from_bool(x) for x in b))
    assert area_ratio(sb) >= area_ratio(sa)
