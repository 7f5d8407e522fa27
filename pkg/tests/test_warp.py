import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskflow.core import FlowField, Frame, MaskFrame, ValidationError
from maskflow.warp import ConsistencyParams, backward_warp, bilinear_sample, fb_consistency


def const(h, w, u, v):
    return FlowField(np.full((h, w), float(u)), np.full((h, w), float(v)))


def test_zero_flow_identity_bit_exact():
    rng = np.random.default_rng(1)
    m = MaskFrame.from_bool(rng.uniform(size=(7, 9)) > 0.5)
    assert np.array_equal(backward_warp(m, FlowField.zeros(7, 9)).values, m.values)
    soft = rng.uniform(size=(7, 9))
    assert np.array_equal(backward_warp(soft, FlowField.zeros(7, 9)), soft)


def test_single_pixel_unit_flow():
    a = np.zeros((4, 4))
    a[1, 1] = 1.0
    out = backward_warp(MaskFrame(a), const(4, 4, 1, 0)).values
    expect = np.zeros((4, 4))
    expect[1, 0] = 1.0
    assert np.array_equal(out, expect)


def test_half_pixel_row():
    a = np.array([[0.0, 1.0, 0.0, 0.0]])
    out = backward_warp(MaskFrame(a), const(1, 4, 0.5, 0)).values
    assert np.array_equal(out, [[0.5, 0.5, 0.0, 0.0]])


def test_outside_reads_zero_and_partial_band_clamps():
    src = np.full((1, 4), 0.8)
    # x + u = 4.5 is beyond the last centre but inside the partial band (< W) -> clamped to column 3
    vals, oob = bilinear_sample(src, np.array([[3.5, 4.0, -0.5, -1.0]]), np.zeros((1, 4)))
    assert np.allclose(vals, [[0.8, 0.0, 0.8, 0.0]])
    assert oob.tolist() == [[False, True, False, True]]


def test_frame_input_returns_frame():
    f = Frame(np.linspace(0, 1, 12).reshape(3, 4))
    out = backward_warp(f, FlowField.zeros(3, 4))
    assert isinstance(out, Frame) and np.array_equal(out.data, f.data)


def test_shape_mismatch_and_bad_flow():
    with pytest.raises(ValidationError):
        backward_warp(MaskFrame(np.zeros((3, 3))), FlowField.zeros(3, 4))
    with pytest.raises(ValidationError):
        backward_warp(np.zeros((3, 3)), np.zeros((2, 3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(0, 2**32 - 1))
def test_integer_shift_equivariance(a, b, seed):
    rng = np.random.default_rng(seed)
    m = (rng.uniform(size=(8, 11)) > 0.5).astype(float)
    out = backward_warp(MaskFrame(m), const(8, 11, a, b)).values
    ys, xs = np.mgrid[0:8, 0:11]
    sx, sy = xs + a, ys + b
    inb = (sx >= 0) & (sx < 11) & (sy >= 0) & (sy < 8)
    expect = np.zeros_like(m)
    expect[inb] = m[sy[inb], sx[inb]]
    assert np.array_equal(out, expect)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 6))
def test_range_preserved(seed, scale):
    rng = np.random.default_rng(seed)
    m = rng.uniform(size=(10, 10))
    f = FlowField(rng.normal(0, scale, (10, 10)), rng.normal(0, scale, (10, 10)))
    out = backward_warp(m, f)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_consistent_constant_flows():
    fwd, bwd = const(6, 8, 2, 0), const(6, 8, -2, 0)
    occ = fb_consistency(fwd, bwd, ConsistencyParams(tau_abs=0.01))
    assert not occ[:, :6].any()


def test_mismatched_flows_flag_everything():
    occ = fb_consistency(const(6, 8, 2, 0), const(6, 8, 0, 0), ConsistencyParams(0.01, 0.0))
    assert occ.all()


def test_right_band_flagged_by_grid_rule():
    occ = fb_consistency(const(6, 8, 2, 0), const(6, 8, -2, 0), ConsistencyParams(tau_abs=0.01))
    expect = np.zeros((6, 8), bool)
    expect[:, 6:] = True
    assert np.array_equal(occ, expect)


@given(st.integers(-3, 3), st.integers(-3, 3), st.floats(0.0, 1.0), st.floats(0.0, 0.1))
def test_negated_flow_flags_only_boundary_band(a, b, tau_abs, tau_rel):
    h, w = 7, 9
    occ = fb_consistency(const(h, w, a, b), const(h, w, -a, -b), ConsistencyParams(tau_abs, tau_rel))
    ys, xs = np.mgrid[0:h, 0:w]
    band = (xs + a < 0) | (xs + a > w - 1) | (ys + b < 0) | (ys + b > h - 1)
    assert np.array_equal(occ, band)


def test_consistency_params_validation():
    with pytest.raises(ValidationError):
        ConsistencyParams(-1.0, 0.0)
    with pytest.raises(ValidationError):
        fb_consistency(FlowField.zeros(3, 3), FlowField.zeros(3, 4))
