"""Mask and flow metrics, plus analytic scenes that exercise the propagation path end to end."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import FlowField, FlowSequence, MaskFrame, MaskSequence, ValidationError, Video, ensure_same_shape, gray_frame
from .flow import HSParams, estimate_flow_sequence, inverse_params, synthetic_flow
from .propagate import PropagationConfig, propagate_masks


@dataclass(frozen=True)
class IoUReport:
    per_frame: tuple
    mean: float


@dataclass(frozen=True)
class EPEReport:
    mean: float
    max: float


def _require_binary(seq: MaskSequence, name: str) -> None:
    for m in seq:
        if not np.all((m.values == 0.0) | (m.values == 1.0)):
            raise ValidationError(f"{name} contains soft masks; binarize first")


def temporal_iou(pred: MaskSequence, ref: MaskSequence) -> IoUReport:
    """Per-frame intersection over union. Two empty masks count as a perfect match."""
    if len(pred) != len(ref):
        raise ValidationError(f"{len(pred)} predicted vs {len(ref)} reference masks")
    ensure_same_shape(pred.shape, ref.shape)
    _require_binary(pred, "pred")
    _require_binary(ref, "ref")
    scores = []
    for a, b in zip(pred, ref):
        a, b = a.values > 0.5, b.values > 0.5
        union = np.count_nonzero(a | b)
        scores.append(1.0 if union == 0 else np.count_nonzero(a & b) / union)
    return IoUReport(tuple(scores), float(np.mean(scores)))


def endpoint_error(flow: FlowField, truth: FlowField) -> EPEReport:
    ensure_same_shape(flow.shape, truth.shape)
    e = np.hypot(flow.u - truth.u, flow.v - truth.v)
    return EPEReport(float(e.mean()), float(e.max()))


# ----------------------------------------------------------------------------
# analytic scenes

SCENE_SIZE = (64, 64)


def smooth_texture(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Band-limited texture in [0.1, 0.9] with several orientations, so no aperture problem."""
    return (
        0.5
        + 0.15 * np.sin(2 * np.pi * (0.8 * x + 0.6 * y) / 14 + 0.3)
        + 0.15 * np.sin(2 * np.pi * (-0.5 * x + 0.87 * y) / 11 + 1.1)
        + 0.05 * np.sin(2 * np.pi * x / 19 + 2.0)
        + 0.05 * np.sin(2 * np.pi * y / 17 + 0.5)
    )


def _inverse_map(kind: str, steps: int, shape, params: dict) -> Callable:
    """Coordinates in frame 1 of the points that sit at (x, y) after ``steps`` frames."""
    h, w = shape
    cx, cy = params.get("center") or ((w - 1) / 2.0, (h - 1) / 2.0)

    def f(x, y):
        if kind == "translation":
            return x - steps * params.get("dx", 0.0), y - steps * params.get("dy", 0.0)
        if kind == "rotation":
            a = -steps * params.get("angle", 0.0)
            dx, dy = x - cx, y - cy
            return cx + np.cos(a) * dx - np.sin(a) * dy, cy + np.sin(a) * dx + np.cos(a) * dy
        if kind == "zoom":
            s = params.get("factor", 1.0) ** (-steps)
            return cx + s * (x - cx), cy + s * (y - cy)
        raise ValueError(f"unknown motion {kind!r}")

    return f


def default_shape(kind: str, shape=SCENE_SIZE) -> Callable:
    """Indicator of the object in frame 1: a square for translation, an off-centre disk otherwise."""
    h, w = shape
    if kind == "translation":
        x0, y0, side = w // 4, h // 4 + 4, w // 4
        return lambda x, y: (x >= x0) & (x < x0 + side) & (y >= y0) & (y < y0 + side)
    cx, cy, r = 0.65 * w, 0.5 * h, 0.15 * w
    return lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 <= r**2


@dataclass
class Scene:
    video: Video
    masks: MaskSequence
    flows: FlowSequence


def make_scene(kind: str, frames: int, shape=SCENE_SIZE, obj: Callable = None, **params) -> Scene:
    """Textured video under a global motion, analytic object masks and exact flows."""
    obj = obj or default_shape(kind, shape)
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    vids, masks = [], []
    for t in range(frames):
        sx, sy = _inverse_map(kind, t, shape, params)(xs, ys)
        vids.append(gray_frame(smooth_texture(sx, sy)))
        masks.append(MaskFrame.from_bool(obj(sx, sy)))
    fwd = synthetic_flow(kind, shape, **params)
    bwd = synthetic_flow(kind, shape, **inverse_params(kind, **params))
    n = frames - 1
    return Scene(Video(tuple(vids)), MaskSequence(tuple(masks)), FlowSequence((fwd,) * n, (bwd,) * n))


def propagation_drift(
    cfg: PropagationConfig = PropagationConfig(),
    motion: str = "translation",
    frames: int = 16,
    flow_source: str = "analytic",
    hs: HSParams = HSParams(),
    **params,
) -> IoUReport:
    """Propagate the first analytic mask and score every frame against the analytic masks."""
    if motion == "translation":
        params.setdefault("dx", 1.0)
        params.setdefault("dy", 0.0)
    elif motion == "rotation":
        params.setdefault("angle", np.deg2rad(2.0))
    elif motion == "zoom":
        params.setdefault("factor", 1.02)
    scene = make_scene(motion, frames, **params)
    if flow_source == "analytic":
        flows = scene.flows
    elif flow_source == "estimate":
        flows = estimate_flow_sequence(scene.video, hs)
    else:
        raise ValueError(f"unknown flow source {flow_source!r}")
    pred = propagate_masks(scene.masks[0], flows, cfg)
    return temporal_iou(pred, scene.masks)


def volume_iou(pred: np.ndarray, ref: np.ndarray) -> float:
    """IoU of two boolean arrays of any shape; both empty counts as 1."""
    pred, ref = np.asarray(pred, dtype=bool), np.asarray(ref, dtype=bool)
    ensure_same_shape(pred.shape, ref.shape)
    union = np.count_nonzero(pred | ref)
    return 1.0 if union == 0 else np.count_nonzero(pred & ref) / union
