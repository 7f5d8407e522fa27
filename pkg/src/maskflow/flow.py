"""Dense optical flow: a Horn-Schunck estimator, ``.flo`` I/O and flow statistics."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .core import FlowField, FlowSequence, Frame, MediaError, ValidationError, Video, ensure_same_shape
from .warp import warp_array

FLO_MAGIC = np.float32(202021.25)


class FloFormatError(ValueError):
    pass


@dataclass(frozen=True)
class HSParams:
    smoothness_weight: float = 0.1
    iterations: int = 200
    pyramid_levels: int = 3
    pyramid_scale: float = 0.5

    def __post_init__(self):
        if not self.smoothness_weight > 0:
            raise ValidationError("smoothness_weight must be > 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.pyramid_levels < 1:
            raise ValidationError("pyramid_levels must be >= 1")
        if not 0 < self.pyramid_scale < 1:
            raise ValidationError("pyramid_scale must lie in (0, 1)")


@dataclass(frozen=True)
class FlowStats:
    mean_magnitude: float
    max_magnitude: float
    per_frame_means: tuple = field(default_factory=tuple)


# ----------------------------------------------------------------------------
# Horn-Schunck


def _neighbor_sum(a: np.ndarray) -> np.ndarray:
    s = np.zeros_like(a)
    s[1:, :] += a[:-1, :]
    s[:-1, :] += a[1:, :]
    s[:, 1:] += a[:, :-1]
    s[:, :-1] += a[:, 1:]
    return s


def image_derivatives(prev: np.ndarray, warped_next: np.ndarray):
    """Spatial central differences of the pair average (replicate edges) and the temporal difference."""
    avg = 0.5 * (prev + warped_next)
    p = np.pad(avg, 1, mode="edge")
    ix = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    iy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    it = warped_next - prev
    return ix, iy, it


def hs_energy(ix, iy, it, u, v, lam, u0=0.0, v0=0.0) -> float:
    """Linearised data term plus ``lam`` times the squared 4-neighbour differences."""
    data = ix * (u - u0) + iy * (v - v0) + it
    smooth = (
        np.sum(np.diff(u, axis=0) ** 2)
        + np.sum(np.diff(u, axis=1) ** 2)
        + np.sum(np.diff(v, axis=0) ** 2)
        + np.sum(np.diff(v, axis=1) ** 2)
    )
    return float(np.sum(data**2) + lam * smooth)


def hs_relax(ix, iy, it, u0, v0, lam, iterations, callback: Optional[Callable] = None):
    """Jacobi relaxation of the Horn-Schunck equations on a red-black ordering.

    Each half sweep solves the 2x2 per-pixel system exactly for one colour
    while the other colour is held fixed, so the energy cannot increase.
    The linearisation point ``(u0, v0)`` is also the starting estimate.
    """
    h, w = ix.shape
    u = np.array(u0, dtype=np.float64, copy=True)
    v = np.array(v0, dtype=np.float64, copy=True)
    n = _neighbor_sum(np.ones((h, w)))
    a = lam * n
    denom = a + ix**2 + iy**2
    c = it - ix * u0 - iy * v0
    yy, xx = np.mgrid[0:h, 0:w]
    colours = [(xx + yy) % 2 == 0, (xx + yy) % 2 == 1]
    for k in range(iterations):
        for sel in colours:
            ubar = _neighbor_sum(u) / n
            vbar = _neighbor_sum(v) / n
            k_ = (ix * ubar + iy * vbar + c) / denom
            u = np.where(sel, ubar - ix * k_, u)
            v = np.where(sel, vbar - iy * k_, v)
        if callback is not None:
            callback(k, u, v)
    return u, v


def _downsample(img: np.ndarray, shape) -> np.ndarray:
    sigma = 0.5 * np.array(img.shape) / np.array(shape)
    sm = ndimage.gaussian_filter(img, sigma=sigma, mode="nearest")
    return ndimage.zoom(sm, (shape[0] / img.shape[0], shape[1] / img.shape[1]), order=1, mode="nearest", grid_mode=True)


def _resize(a: np.ndarray, shape) -> np.ndarray:
    if a.shape == tuple(shape):
        return a
    return ndimage.zoom(a, (shape[0] / a.shape[0], shape[1] / a.shape[1]), order=1, mode="nearest", grid_mode=True)


def _as_gray(x) -> np.ndarray:
    if isinstance(x, Frame):
        return x.to_gray()
    return np.asarray(x, dtype=np.float64)


def estimate_flow_hs(prev, next, params: HSParams = HSParams()) -> FlowField:
    """Flow from ``prev`` to ``next`` (both grayscale in [0, 1]).

    Coarse-to-fine: at every level ``next`` is warped toward ``prev`` by the
    current estimate and the linearised problem is relaxed around it.
    """
    i1 = _as_gray(prev)
    i2 = _as_gray(next)
    ensure_same_shape(i1.shape, i2.shape)
    if i1.ndim != 2:
        raise ValidationError("flow estimation needs grayscale frames")

    shapes = [i1.shape]
    for _ in range(params.pyramid_levels - 1):
        h, w = shapes[-1]
        nh, nw = max(1, round(h * params.pyramid_scale)), max(1, round(w * params.pyramid_scale))
        if (nh, nw) == (h, w) or min(nh, nw) < 4:
            break
        shapes.append((nh, nw))
    pyr1, pyr2 = [i1], [i2]
    for s in shapes[1:]:
        pyr1.append(_downsample(pyr1[-1], s))
        pyr2.append(_downsample(pyr2[-1], s))

    u = np.zeros(shapes[-1])
    v = np.zeros(shapes[-1])
    for lvl in range(len(shapes) - 1, -1, -1):
        s = shapes[lvl]
        if u.shape != s:
            sy, sx = s[0] / u.shape[0], s[1] / u.shape[1]
            u = _resize(u, s) * sx
            v = _resize(v, s) * sy
        a, b = pyr1[lvl], pyr2[lvl]
        warped = warp_array(b, FlowField(u, v), outside="clamp")
        ix, iy, it = image_derivatives(a, warped)
        u, v = hs_relax(ix, iy, it, u, v, params.smoothness_weight, params.iterations)
    return FlowField(u, v)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MASKFLOW_WORKERS", "1")))
    except ValueError:
        return 1


def estimate_flow_sequence(video: Video, params: HSParams = HSParams(), workers: Optional[int] = None) -> FlowSequence:
    if len(video) < 2:
        raise ValidationError("flow needs at least two frames")
    gray = video.gray()
    jobs = []
    for t in range(len(gray) - 1):
        jobs.append((gray[t], gray[t + 1]))
        jobs.append((gray[t + 1], gray[t]))
    n = workers or _workers()
    if n > 1:
        with ThreadPoolExecutor(n) as ex:
            fields = list(ex.map(lambda ab: estimate_flow_hs(ab[0], ab[1], params), jobs))
    else:
        fields = [estimate_flow_hs(a, b, params) for a, b in jobs]
    return FlowSequence(tuple(fields[0::2]), tuple(fields[1::2]))


# ----------------------------------------------------------------------------
# Middlebury .flo


def write_flo(f: FlowField, path) -> None:
    h, w = f.shape
    uv = np.empty((h, w, 2), dtype="<f4")
    uv[..., 0] = f.u
    uv[..., 1] = f.v
    if not np.all(np.isfinite(uv)):
        raise FloFormatError("flow overflows 32-bit float")
    with open(path, "wb") as fh:
        fh.write(np.array([FLO_MAGIC], dtype="<f4").tobytes())
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(uv.tobytes())


def read_flo(path) -> FlowField:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise MediaError(f"cannot read {path}: {e}") from e
    if len(raw) < 12:
        raise FloFormatError(f"{path}: truncated header")
    magic = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if magic != FLO_MAGIC:
        raise FloFormatError(f"{path}: bad magic {magic!r}")
    w, h = (int(x) for x in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if w < 1 or h < 1:
        raise FloFormatError(f"{path}: invalid size {w}x{h}")
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise FloFormatError(f"{path}: truncated payload ({len(raw)} of {need} bytes)")
    if len(raw) > need:
        raise FloFormatError(f"{path}: {len(raw) - need} trailing bytes")
    uv = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    if not np.all(np.isfinite(uv)):
        raise FloFormatError(f"{path}: non-finite flow values")
    return FlowField(uv[..., 0].astype(np.float64), uv[..., 1].astype(np.float64))


def save_flow_sequence(seq: FlowSequence, path) -> None:
    root = Path(path)
    for name, fields in (("forward", seq.forward), ("backward", seq.backward)):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(fields, start=1):
            write_flo(f, d / f"{i:06d}.flo")


def load_flow_sequence(path) -> FlowSequence:
    root = Path(path)
    out = []
    for name in ("forward", "backward"):
        d = root / name
        if not d.is_dir():
            raise MediaError(f"missing flow directory {d}")
        out.append(tuple(read_flo(p) for p in sorted(d.glob("*.flo"))))
    return FlowSequence(*out)


# ----------------------------------------------------------------------------


def flow_magnitude_stats(flows: FlowSequence) -> FlowStats:
    """Mean and max of ``sqrt(u^2 + v^2)`` over every pixel of every forward field."""
    if len(flows) == 0:
        raise ValidationError("no forward flow fields")
    mags = [f.magnitude() for f in flows.forward]
    per_frame = tuple(float(m.mean()) for m in mags)
    # all fields share a shape, so the global mean is the mean of per-frame means
    return FlowStats(
        mean_magnitude=float(np.mean(per_frame)),
        max_magnitude=float(max(m.max() for m in mags)),
        per_frame_means=per_frame,
    )


def _center(shape, center):
    if center is None:
        return (shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0
    return center


def synthetic_flow(kind: str, shape, **params) -> FlowField:
    """Analytic flow fields.

    ``translation(dx, dy)``, ``rotation(angle, center=None)`` in radians
    (positive turns +x toward +y), ``zoom(factor, center=None)``. The default
    centre is the middle of the pixel grid.
    """
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if kind == "translation":
        return FlowField(np.full((h, w), float(params.get("dx", 0.0))), np.full((h, w), float(params.get("dy", 0.0))))
    if kind == "rotation":
        cx, cy = _center(shape, params.get("center"))
        a = float(params.get("angle", 0.0))
        dx, dy = xs - cx, ys - cy
        c, s = np.cos(a), np.sin(a)
        return FlowField(c * dx - s * dy - dx, s * dx + c * dy - dy)
    if kind == "zoom":
        cx, cy = _center(shape, params.get("center"))
        k = float(params.get("factor", 1.0)) - 1.0
        return FlowField(k * (xs - cx), k * (ys - cy))
    raise ValueError(f"unknown synthetic flow kind {kind!r}")


def inverse_params(kind: str, **params) -> dict:
    """Parameters of the motion that undoes ``kind(**params)``."""
    p = dict(params)
    if kind == "translation":
        p["dx"] = -p.get("dx", 0.0)
        p["dy"] = -p.get("dy", 0.0)
    elif kind == "rotation":
        p["angle"] = -p.get("angle", 0.0)
    elif kind == "zoom":
        p["factor"] = 1.0 / p.get("factor", 1.0)
    else:
        raise ValueError(f"unknown synthetic flow kind {kind!r}")
    return p
