"""Backward warping and forward-backward flow consistency."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import FlowField, Frame, MaskFrame, ValidationError, ensure_same_shape


@dataclass(frozen=True)
class ConsistencyParams:
    tau_abs: float = 0.5
    tau_rel: float = 0.01

    def __post_init__(self):
        if not (self.tau_abs >= 0 and self.tau_rel >= 0):
            raise ValidationError("consistency thresholds must be >= 0")


def bilinear_sample(src: np.ndarray, sx: np.ndarray, sy: np.ndarray, outside: str = "zero"):
    """Sample ``src`` at float coordinates.

    Coordinates strictly beyond one pixel of the grid (``sx <= -1`` or
    ``sx >= W``, same for y) are out of grid. Coordinates in the partial band
    between the last pixel centre and that limit are clamped onto the edge.
    With ``outside="zero"`` out-of-grid samples read 0, with
    ``outside="clamp"`` they read the nearest edge value.

    Returns ``(values, out_of_grid)``.
    """
    h, w = src.shape
    oob = (sx <= -1.0) | (sx >= w) | (sy <= -1.0) | (sy >= h)
    x = np.clip(sx, 0.0, w - 1.0)
    y = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    if outside == "zero":
        out = np.where(oob, 0.0, out)
    elif outside != "clamp":
        raise ValueError(f"unknown outside policy {outside!r}")
    return out, oob


def _grid(shape):
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    return xs.astype(np.float64), ys.astype(np.float64)


def warp_array(src: np.ndarray, flow: FlowField, outside: str = "zero") -> np.ndarray:
    ensure_same_shape(src.shape, flow.shape)
    xs, ys = _grid(flow.shape)
    out, _ = bilinear_sample(np.asarray(src, dtype=np.float64), xs + flow.u, ys + flow.v, outside)
    return out


def backward_warp(src: Union[MaskFrame, Frame, np.ndarray], sampling_flow: FlowField):
    """Return ``out(x, y) = src(x + u(x, y), y + v(x, y))`` by bilinear sampling.

    Samples that land outside the grid read 0, so content leaving the frame
    vanishes instead of smearing along the border.
    """
    if not isinstance(sampling_flow, FlowField):
        raise ValidationError("sampling_flow must be a FlowField")
    if isinstance(src, MaskFrame):
        out = warp_array(src.values, sampling_flow)
        return MaskFrame(np.clip(out, 0.0, 1.0), "soft")
    if isinstance(src, Frame):
        if src.channels != 1:
            raise ValidationError("backward_warp needs a grayscale frame")
        return Frame(warp_array(src.to_gray(), sampling_flow))
    return warp_array(np.asarray(src, dtype=np.float64), sampling_flow)


def fb_consistency(fwd: FlowField, bwd: FlowField, params: ConsistencyParams = ConsistencyParams()) -> np.ndarray:
    """Boolean grid, True where the forward flow is not undone by the backward flow.

    A pixel is flagged when
    ``|f + b(x + f)|^2 > tau_abs + tau_rel * (|f|^2 + |b(x + f)|^2)``, with
    ``b`` sampled bilinearly. Lookups landing outside ``[0, W-1] x [0, H-1]``
    are flagged as well.
    """
    ensure_same_shape(fwd.shape, bwd.shape)
    h, w = fwd.shape
    xs, ys = _grid(fwd.shape)
    tx = xs + fwd.u
    ty = ys + fwd.v
    bu, _ = bilinear_sample(bwd.u, tx, ty, "clamp")
    bv, _ = bilinear_sample(bwd.v, tx, ty, "clamp")
    err = (fwd.u + bu) ** 2 + (fwd.v + bv) ** 2
    bound = params.tau_abs + params.tau_rel * (fwd.u**2 + fwd.v**2 + bu**2 + bv**2)
    outside = (tx < 0) | (tx > w - 1) | (ty < 0) | (ty > h - 1)
    return (err > bound) | outside
