"""A small editing task: a bright square moving over a noisy background."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ValidationError
from .model import Batch

CHANNELS = 4
VIDEO_DIMS = (8, 32, 32)
PATCH = (2, 4, 4)
INSTRUCTIONS = ("add-square", "remove-square")


@dataclass
class ToyDataset:
    """Video-space arrays ``(N, C, F, H, W)``, masks ``(N, F, H, W)`` and their patch-pooled latents."""

    source: np.ndarray
    target: np.ndarray
    instruction: np.ndarray
    mask: np.ndarray
    source_latent: np.ndarray
    target_latent: np.ndarray
    mask_latent: np.ndarray

    def __len__(self):
        return len(self.instruction)

    def batch(self, idx, noise: np.ndarray, t: np.ndarray) -> Batch:
        return Batch(
            source=self.source_latent[idx],
            target=self.target_latent[idx],
            noise=noise,
            t=t,
            instruction=self.instruction[idx],
            mask=self.mask[idx],
            mask_latent=self.mask_latent[idx],
        )


def patchify(v: np.ndarray, patch=PATCH) -> np.ndarray:
    """Average over non-overlapping patches of the last three axes."""
    pf, ph, pw = patch
    *lead, f, h, w = v.shape
    r = v.reshape(*lead, f // pf, pf, h // ph, ph, w // pw, pw)
    return r.mean(axis=(-5, -3, -1))


def _trajectory(rng, side: int):
    f, h, w = VIDEO_DIMS
    vx, vy = rng.uniform(-1.5, 1.5, size=2)
    span_x, span_y = vx * (f - 1), vy * (f - 1)
    x0 = rng.uniform(max(0, -span_x), min(w - side, w - side - span_x))
    y0 = rng.uniform(max(0, -span_y), min(h - side, h - side - span_y))
    ts = np.arange(f)
    return np.rint(x0 + vx * ts).astype(int), np.rint(y0 + vy * ts).astype(int)


def make_synthetic_task(seed: int, count: int) -> ToyDataset:
    """Deterministic dataset of ``count`` edits.

    ``remove-square``: the source holds a bright square, the target is the bare
    background. ``add-square``: the source marks the future square with a dark
    placeholder, the target holds the bright square. The ground-truth mask is
    the square's footprint in every frame.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    f, h, w = VIDEO_DIMS
    src = np.empty((count, CHANNELS, f, h, w))
    tgt = np.empty_like(src)
    mask = np.zeros((count, f, h, w), dtype=bool)
    instr = np.empty(count, dtype=np.intp)
    for n in range(count):
        bg = rng.normal(0.0, 0.3, (CHANNELS, f, h, w)) + rng.uniform(-0.5, 0.5, (CHANNELS, 1, 1, 1))
        colour = rng.uniform(1.5, 2.5, (CHANNELS, 1))
        side = int(rng.integers(8, 13))
        xs, ys = _trajectory(rng, side)
        for k in range(f):
            mask[n, k, ys[k] : ys[k] + side, xs[k] : xs[k] + side] = True
        bright = np.where(mask[n][None], colour.reshape(CHANNELS, 1, 1, 1), bg)
        instr[n] = rng.integers(0, len(INSTRUCTIONS))
        if INSTRUCTIONS[instr[n]] == "remove-square":
            src[n], tgt[n] = bright, bg
        else:
            src[n], tgt[n] = np.where(mask[n][None], -1.0, bg), bright
    return ToyDataset(
        source=src,
        target=tgt,
        instruction=instr,
        mask=mask.astype(np.float64),
        source_latent=patchify(src),
        target_latent=patchify(tgt),
        mask_latent=patchify(mask.astype(np.float64)),
    )
