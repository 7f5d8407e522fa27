import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskflow.core import FlowField, FlowSequence, ValidationError, Video, gray_frame
from maskflow.evalkit import endpoint_error, smooth_texture
from maskflow.flow import (
    FloFormatError,
    HSParams,
    estimate_flow_hs,
    estimate_flow_sequence,
    flow_magnitude_stats,
    hs_energy,
    hs_relax,
    image_derivatives,
    read_flo,
    synthetic_flow,
    write_flo,
)
from maskflow.warp import backward_warp


def _pair(dx, dy, shape=(64, 64)):
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    return smooth_texture(xs, ys), smooth_texture(xs - dx, ys - dy)


def _ssd_match(a, b, radius=3, margin=8):
    """Integer displacement minimising SSD over the interior, by exhaustive search."""
    core = a[margin:-margin, margin:-margin]
    best = None
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = b[margin + dy : b.shape[0] - margin + dy, margin + dx : b.shape[1] - margin + dx]
            cost = np.sum((core - shifted) ** 2)
            if best is None or cost < best[0]:
                best = (cost, dx, dy)
    return best[1], best[2]


def test_identical_frames_give_zero_flow():
    a, _ = _pair(0, 0)
    f = estimate_flow_hs(a, a)
    assert f.magnitude().max() <= 1e-6


def test_unit_shift_agrees_with_block_matching():
    a, b = _pair(1, 0)
    assert _ssd_match(a, b) == (1, 0)
    f = estimate_flow_hs(a, b, HSParams(smoothness_weight=0.1, iterations=200))
    assert 0.7 <= f.u.mean() <= 1.1
    assert abs(f.v.mean()) <= 0.1


def test_three_two_shift_pyramid():
    a, b = _pair(3, 2)
    f = estimate_flow_hs(a, b, HSParams(pyramid_levels=3))
    assert endpoint_error(f, synthetic_flow("translation", a.shape, dx=3, dy=2)).mean <= 0.5


def test_shape_mismatch():
    with pytest.raises(ValidationError):
        estimate_flow_hs(np.zeros((8, 8)), np.zeros((8, 9)))


def test_hs_params_validation():
    for bad in (dict(smoothness_weight=0), dict(iterations=0), dict(pyramid_levels=0), dict(pyramid_scale=1.0)):
        with pytest.raises(ValidationError):
            HSParams(**bad)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0), st.floats(-2, 2), st.floats(-2, 2))
def test_energy_non_increasing_every_iteration(seed, lam, dx, dy):
    rng = np.random.default_rng(seed)
    a, b = _pair(dx, dy, (24, 28))
    a = a + rng.normal(0, 0.02, a.shape)
    ix, iy, it = image_derivatives(a, b)
    u0 = rng.normal(0, 0.5, a.shape)
    v0 = rng.normal(0, 0.5, a.shape)
    energies = [hs_energy(ix, iy, it, u0, v0, lam, u0, v0)]
    hs_relax(ix, iy, it, u0, v0, lam, 40, callback=lambda k, u, v: energies.append(hs_energy(ix, iy, it, u, v, lam, u0, v0)))
    e = np.array(energies)
    assert np.all(np.diff(e) <= 1e-12 * np.maximum(1.0, e[:-1]))


def _video(dx, frames, shape=(48, 48)):
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    return Video(tuple(gray_frame(smooth_texture(xs - dx * t, ys)) for t in range(frames)))


def test_static_video_zero_flows():
    seq = estimate_flow_sequence(_video(0, 5))
    assert all(f.magnitude().max() <= 1e-6 for f in seq.forward + seq.backward)


def test_three_frames_two_fields_each_way():
    seq = estimate_flow_sequence(_video(1, 3), HSParams(iterations=20))
    assert len(seq.forward) == 2 and len(seq.backward) == 2


def test_forward_backward_symmetry():
    seq = estimate_flow_sequence(_video(1, 4))
    for f, b in zip(seq.forward, seq.backward):
        assert np.mean(np.abs(f.u + b.u)) + np.mean(np.abs(f.v + b.v)) <= 0.2


def test_single_frame_rejected():
    with pytest.raises(ValidationError):
        estimate_flow_sequence(_video(0, 1))


def test_worker_count_does_not_change_output(monkeypatch):
    v = _video(1, 4)
    one = estimate_flow_sequence(v, HSParams(iterations=30), workers=1)
    monkeypatch.setenv("MASKFLOW_WORKERS", "3")
    many = estimate_flow_sequence(v, HSParams(iterations=30))
    for a, b in zip(one.forward + one.backward, many.forward + many.backward):
        assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


# ----------------------------------------------------------------------------
# .flo


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_flo_round_trip(tmp_path_factory, h, w, seed):
    rng = np.random.default_rng(seed)
    f = FlowField(rng.normal(0, 10, (h, w)), rng.normal(0, 10, (h, w)))
    p = tmp_path_factory.mktemp("flo") / "a.flo"
    write_flo(f, p)
    g = read_flo(p)
    assert np.array_equal(g.u, f.u.astype(np.float32)) and np.array_equal(g.v, f.v.astype(np.float32))


def test_flo_layout(tmp_path):
    f = FlowField(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
    write_flo(f, tmp_path / "a.flo")
    raw = (tmp_path / "a.flo").read_bytes()
    assert raw == struct.pack("<fii4f", 202021.25, 2, 1, 1.0, 3.0, 2.0, 4.0)


def test_flo_bad_magic(tmp_path):
    (tmp_path / "a.flo").write_bytes(struct.pack("<fii2f", 1.0, 1, 1, 0.0, 0.0))
    with pytest.raises(FloFormatError, match="magic"):
        read_flo(tmp_path / "a.flo")


def test_flo_truncated(tmp_path):
    write_flo(FlowField.zeros(4, 4), tmp_path / "a.flo")
    raw = (tmp_path / "a.flo").read_bytes()
    (tmp_path / "b.flo").write_bytes(raw[:-5])
    with pytest.raises(FloFormatError, match="truncated"):
        read_flo(tmp_path / "b.flo")
    (tmp_path / "c.flo").write_bytes(raw[:6])
    with pytest.raises(FloFormatError, match="truncated"):
        read_flo(tmp_path / "c.flo")


def test_flo_non_finite(tmp_path):
    (tmp_path / "a.flo").write_bytes(struct.pack("<fii2f", 202021.25, 1, 1, np.nan, 0.0))
    with pytest.raises(FloFormatError):
        read_flo(tmp_path / "a.flo")


# ----------------------------------------------------------------------------
# stats and synthetic fields


def _seq(*fields):
    return FlowSequence(tuple(fields), tuple(-f for f in fields))


def test_stats_zero():
    s = flow_magnitude_stats(_seq(FlowField.zeros(3, 3)))
    assert s.mean_magnitude == 0 and s.max_magnitude == 0


def test_stats_three_four_five():
    s = flow_magnitude_stats(_seq(FlowField(np.full((3, 3), 3.0), np.full((3, 3), 4.0))))
    assert s.mean_magnitude == 5.0 and s.max_magnitude == 5.0


def test_stats_hand_average():
    z = FlowField.zeros(2, 2)
    c = FlowField(np.zeros((2, 2)), np.full((2, 2), 2.0))
    assert flow_magnitude_stats(_seq(z, c)).mean_magnitude == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stats_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    perm = rng.permutation(30)
    a = flow_magnitude_stats(_seq(FlowField(u, v)))
    b = flow_magnitude_stats(_seq(FlowField(u.ravel()[perm].reshape(5, 6), v.ravel()[perm].reshape(5, 6))))
    assert a.mean_magnitude == pytest.approx(b.mean_magnitude, rel=1e-12)
    assert a.max_magnitude == b.max_magnitude


def test_stats_empty():
    with pytest.raises(ValidationError):
        flow_magnitude_stats(FlowSequence((), ()))


def test_synthetic_fields():
    t = synthetic_flow("translation", (4, 5), dx=1, dy=0)
    assert np.all(t.u == 1) and np.all(t.v == 0)
    for kind, kw in (("rotation", dict(angle=0.0)), ("zoom", dict(factor=1.0))):
        f = synthetic_flow(kind, (6, 7), **kw)
        assert np.all(f.u == 0) and np.all(f.v == 0)


def test_synthetic_rotation_geometry():
    f = synthetic_flow("rotation", (5, 5), angle=np.pi / 2)
    # (4, 2) is 2 px right of the centre; a quarter turn with y down sends it to (2, 4)
    assert f.u[2, 4] == pytest.approx(-2) and f.v[2, 4] == pytest.approx(2)


@given(st.integers(-3, 3), st.integers(-3, 3))
def test_integer_translation_warp_is_exact_shift(dx, dy):
    rng = np.random.default_rng(0)
    src = rng.uniform(size=(9, 10))
    out = backward_warp(src, synthetic_flow("translation", src.shape, dx=dx, dy=dy))
    for y in range(9):
        for x in range(10):
            sx, sy = x + dx, y + dy
            expect = src[sy, sx] if 0 <= sx < 10 and 0 <= sy < 9 else 0.0
            assert out[y, x] == expect
