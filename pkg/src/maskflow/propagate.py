"""Initial mask selection, morphological refinement and flow-driven propagation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .core import FlowSequence, MaskFrame, MaskSequence, ValidationError, ensure_same_shape
from .warp import ConsistencyParams, backward_warp, fb_consistency


@dataclass(frozen=True)
class MorphParams:
    open_radius: int = 1
    close_radius: int = 2
    element: str = "square"

    def __post_init__(self):
        if self.open_radius < 0 or self.close_radius < 0:
            raise ValidationError("morphology radii must be >= 0")
        if self.element not in ("square", "disk"):
            raise ValidationError(f"unknown structuring element {self.element!r}")


@dataclass(frozen=True)
class PropagationConfig:
    morph: MorphParams = field(default_factory=MorphParams)
    binarize_threshold: float = 0.5
    consistency: ConsistencyParams = field(default_factory=ConsistencyParams)
    occlusion_fill: str = "hold-previous"

    def __post_init__(self):
        if not 0 < self.binarize_threshold < 1:
            raise ValidationError("binarize_threshold must lie in (0, 1)")
        if self.occlusion_fill not in ("hold-previous", "zero"):
            raise ValidationError(f"unknown occlusion_fill {self.occlusion_fill!r}")


def select_initial_mask(task: str, m_s: Optional[MaskFrame] = None, m_t: Optional[MaskFrame] = None) -> MaskFrame:
    """Target mask for additions, source mask for removals, their union for replacements."""
    if task == "add":
        if m_t is None:
            raise ValidationError("add task needs the target-image mask")
        return m_t
    if task == "remove":
        if m_s is None:
            raise ValidationError("remove task needs the source-image mask")
        return m_s
    if task == "replace":
        if m_s is None or m_t is None:
            raise ValidationError("replace task needs both masks")
        ensure_same_shape(m_s.shape, m_t.shape)
        kind = "binary" if m_s.kind == m_t.kind == "binary" else "soft"
        return MaskFrame(np.maximum(m_s.values, m_t.values), kind)
    raise ValidationError(f"unknown task {task!r}")


def binarize(m: MaskFrame, theta: float = 0.5) -> MaskFrame:
    if not 0 < theta <= 1:
        raise ValidationError("threshold must lie in (0, 1]")
    return MaskFrame.from_bool(m.values >= theta)


def structuring_element(radius: int, element: str = "square") -> np.ndarray:
    if element == "square":
        return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return xx**2 + yy**2 <= radius**2


def _morph(b: np.ndarray, radius: int, element: str, op: str) -> np.ndarray:
    # edge padding: objects touching the border are treated as continuing past it
    if radius == 0:
        return b
    se = structuring_element(radius, element)
    pad = 2 * radius + 1
    p = np.pad(b, pad, mode="edge")
    if op == "open":
        p = ndimage.binary_dilation(ndimage.binary_erosion(p, se), se)
    else:
        p = ndimage.binary_erosion(ndimage.binary_dilation(p, se), se)
    return p[pad:-pad, pad:-pad]


def opening(m: MaskFrame, radius: int, element: str = "square") -> MaskFrame:
    return MaskFrame.from_bool(_morph(m.values >= 0.5, radius, element, "open"))


def closing(m: MaskFrame, radius: int, element: str = "square") -> MaskFrame:
    return MaskFrame.from_bool(_morph(m.values >= 0.5, radius, element, "close"))


def refine_mask(m: MaskFrame, morph: MorphParams = MorphParams()) -> MaskFrame:
    """Opening removes speckle, closing bridges small gaps. Soft input is cut at 0.5."""
    b = m.values >= 0.5
    b = _morph(b, morph.open_radius, morph.element, "open")
    b = _morph(b, morph.close_radius, morph.element, "close")
    return MaskFrame.from_bool(b)


def _lookup_outside(flow) -> np.ndarray:
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w]
    tx, ty = xs + flow.u, ys + flow.v
    return (tx < 0) | (tx > w - 1) | (ty < 0) | (ty > h - 1)


def propagate_masks(m1: MaskFrame, flows: FlowSequence, cfg: PropagationConfig = PropagationConfig()) -> MaskSequence:
    """Carry the refined first-frame mask through the video.

    Frame t+1 is built by sampling frame t along the backward flow
    ``F(t+1 -> t)``. Pixels of frame t+1 whose backward flow is not undone
    by the forward flow are occluded/disoccluded and filled per
    ``cfg.occlusion_fill``. Pixels whose backward lookup leaves the grid
    show content entering the frame and read 0.

    The warped state is carried soft from step to step; every emitted mask
    is binarised and closed. Re-thresholding the carried state would snap
    sub-pixel motion (< 0.5 px per frame) back to the previous boundary.
    """
    if len(flows) and flows.shape != m1.shape:
        raise ValidationError(f"mask shape {m1.shape} does not match flow shape {flows.shape}")
    first = refine_mask(m1, cfg.morph)
    masks = [first]
    state = first.values
    for fwd, bwd in zip(flows.forward, flows.backward):
        warped = backward_warp(MaskFrame(state), bwd).values
        # content entering from outside the frame keeps the warp's zero
        occluded = fb_consistency(bwd, fwd, cfg.consistency) & ~_lookup_outside(bwd)
        fill = state if cfg.occlusion_fill == "hold-previous" else 0.0
        state = np.where(occluded, fill, warped)
        b = binarize(MaskFrame(state), cfg.binarize_threshold)
        masks.append(closing(b, cfg.morph.close_radius, cfg.morph.element))
    return MaskSequence(tuple(masks))


def area_ratio(seq: MaskSequence) -> float:
    """Mean over frames of the fraction of pixels inside the mask."""
    return float(np.mean([m.values.mean() for m in seq]))


def vanished_frames(seq: MaskSequence) -> list:
    return [i for i, m in enumerate(seq) if not m.values.any()]
