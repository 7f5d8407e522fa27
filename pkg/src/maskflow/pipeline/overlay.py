"""Tint the mask region of every frame for visual inspection."""
from __future__ import annotations

import numpy as np

from ..core import LUMA, Frame, MaskSequence, ValidationError, Video, save_video

HIGHLIGHT = (255, 0, 0)


def blend(src: np.ndarray, sel: np.ndarray, alpha: float, color=HIGHLIGHT) -> np.ndarray:
    """``round((1 - alpha) * src + alpha * color)`` on selected pixels, rounding halves up."""
    out = src.copy()
    if src.ndim == 2:
        c = np.floor(float(np.dot(LUMA, color)) + 0.5)
    else:
        c = np.asarray(color, dtype=np.float64)
    mixed = np.floor((1.0 - alpha) * src[sel].astype(np.float64) + alpha * c + 0.5)
    out[sel] = np.clip(mixed, 0, 255).astype(np.uint8)
    return out


def overlay_frames(video: Video, masks: MaskSequence, alpha: float = 0.5, color=HIGHLIGHT) -> Video:
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    masks.check_matches(video)
    frames = []
    for f, m in zip(video.frames, masks):
        if f.data.dtype != np.uint8:
            raise ValidationError("overlay needs 8-bit frames")
        frames.append(Frame(blend(f.data, m.values >= 0.5, alpha, color)))
    return Video(tuple(frames), fps=video.fps)


def render_overlay(video: Video, masks: MaskSequence, alpha: float, out_dir, color=HIGHLIGHT) -> list:
    return save_video(overlay_frames(video, masks, alpha, color), out_dir)
