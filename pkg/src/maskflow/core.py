"""Domain types and media I/O shared by every stage.

Arrays are stored row-major as ``(height, width[, channels])``. The coordinate
convention everywhere is origin top-left, x to the right, y downward.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

LUMA = np.array([0.299, 0.587, 0.114])
TASKS = ("add", "remove", "replace")
_FRAME_NAME = re.compile(r"^(\d+)\.(png|bmp|tif|tiff|ppm|pgm)$", re.IGNORECASE)


class ValidationError(ValueError):
    """Raised when a domain object violates one of its invariants."""


class MediaError(OSError):
    """Raised for unreadable or missing media on disk."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Frame:
    """A single image: uint8 samples, or float64 grayscale in [0, 1] for numerics."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            pass
        elif d.ndim == 3 and d.shape[2] in (1, 3):
            if d.shape[2] == 1:
                d = d[:, :, 0]
        else:
            raise ValidationError(f"frame must be HxW or HxWx3, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValidationError("frame width and height must be >= 1")
        if d.dtype == np.uint8:
            pass
        elif np.issubdtype(d.dtype, np.floating):
            if d.ndim != 2:
                raise ValidationError("float frames must be grayscale")
            d = d.astype(np.float64)
            if not np.all(np.isfinite(d)):
                raise ValidationError("float frame contains non-finite values")
        else:
            raise ValidationError(f"unsupported frame dtype {d.dtype}")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.data.dtype == other.data.dtype and np.array_equal(self.data, other.data)

    def to_gray(self) -> np.ndarray:
        """Grayscale float64 in [0, 1] using fixed Rec.601 luma weights."""
        d = self.data
        if d.dtype != np.uint8:
            return np.array(d, dtype=np.float64)
        d = d.astype(np.float64) / 255.0
        if d.ndim == 3:
            d = d @ LUMA
        return d


@dataclass(frozen=True, eq=False)
class Video:
    frames: tuple
    fps: float = 16.0

    def __post_init__(self):
        frames = tuple(f if isinstance(f, Frame) else Frame(f) for f in self.frames)
        if not frames:
            raise ValidationError("a video needs at least one frame")
        first = frames[0]
        for i, f in enumerate(frames):
            if f.shape != first.shape or f.data.dtype != first.data.dtype:
                raise ValidationError(
                    f"frame {i} has shape {f.shape}/{f.data.dtype}, expected {first.shape}/{first.data.dtype}"
                )
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ValidationError("fps must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def gray(self) -> list:
        return [f.to_gray() for f in self.frames]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement in pixels; ``u`` is +x (right), ``v`` is +y (down)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValidationError(f"u and v must be equal 2-D grids, got {u.shape} and {v.shape}")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise ValidationError("flow field must be at least 1x1")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValidationError("flow field contains non-finite values")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def __neg__(self) -> "FlowField":
        return FlowField(-self.u, -self.v)


@dataclass(frozen=True)
class FlowSequence:
    forward: tuple
    backward: tuple

    def __post_init__(self):
        fwd, bwd = tuple(self.forward), tuple(self.backward)
        if len(fwd) != len(bwd):
            raise ValidationError(f"{len(fwd)} forward vs {len(bwd)} backward fields")
        shapes = {f.shape for f in fwd + bwd}
        if len(shapes) > 1:
            raise ValidationError(f"flow fields have mixed shapes {sorted(shapes)}")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "backward", bwd)

    def __len__(self):
        return len(self.forward)

    @property
    def shape(self) -> Optional[tuple]:
        return self.forward[0].shape if self.forward else None


@dataclass(frozen=True, eq=False)
class MaskFrame:
    """Edit-region mask; 1.0 marks the region to edit."""

    values: np.ndarray
    kind: str = "soft"

    def __post_init__(self):
        m = np.asarray(self.values, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValidationError(f"mask must be a non-empty 2-D grid, got shape {m.shape}")
        if self.kind not in ("soft", "binary"):
            raise ValidationError(f"unknown mask kind {self.kind!r}")
        if not np.all(np.isfinite(m)) or m.min() < 0.0 or m.max() > 1.0:
            raise ValidationError("mask values must lie in [0, 1]")
        if self.kind == "binary" and not np.all((m == 0.0) | (m == 1.0)):
            raise ValidationError("binary mask has values other than 0 and 1")
        object.__setattr__(self, "values", _frozen(m))

    @classmethod
    def from_bool(cls, b: np.ndarray) -> "MaskFrame":
        return cls(np.asarray(b, dtype=bool).astype(np.float64), "binary")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def area(self) -> float:
        return float(self.values.sum())

    def __eq__(self, other):
        if not isinstance(other, MaskFrame):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class MaskSequence:
    masks: tuple

    def __post_init__(self):
        masks = tuple(self.masks)
        if not masks:
            raise ValidationError("mask sequence is empty")
        shapes = {m.shape for m in masks}
        if len(shapes) > 1:
            raise ValidationError(f"masks have mixed shapes {sorted(shapes)}")
        object.__setattr__(self, "masks", masks)

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i) -> MaskFrame:
        return self.masks[i]

    def __iter__(self):
        return iter(self.masks)

    @property
    def shape(self) -> tuple:
        return self.masks[0].shape

    def stack(self) -> np.ndarray:
        return np.stack([m.values for m in self.masks])

    def check_matches(self, video: Video) -> None:
        if len(self) != len(video):
            raise ValidationError(f"{len(self)} masks for a {len(video)}-frame video")
        if self.shape != (video.height, video.width):
            raise ValidationError(f"mask shape {self.shape} does not match video {video.height}x{video.width}")


@dataclass(frozen=True)
class BBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box {self}")
        if self.x_min < 0 or self.y_min < 0:
            raise ValidationError(f"box {self} starts outside the frame")

    def check_within(self, width: int, height: int) -> None:
        if self.x_max > width or self.y_max > height:
            raise ValidationError(f"box {self} exceeds {width}x{height} frame")


@dataclass(frozen=True)
class EditInstruction:
    text: str
    task: str
    scene_text: Optional[str] = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValidationError("instruction text is empty")
        if self.task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {self.task!r}")


@dataclass
class EditPair:
    """One dataset record. Paths are relative to the manifest directory."""

    id: str
    instruction: EditInstruction
    source_image: str = ""
    target_image: str = ""
    source_video: str = ""
    target_video: str = ""
    masks: str = ""
    flows: str = ""
    stats: dict = field(default_factory=dict)
    keep: bool = False
    status: str = "pending"
    error: Optional[str] = None
    video_info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("record id is empty")
        for k, v in self.stats.items():
            if not np.isfinite(v):
                raise ValidationError(f"stat {k} is not finite")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instruction": {
                "text": self.instruction.text,
                "task": self.instruction.task,
                "scene_text": self.instruction.scene_text,
            },
            "source_image": self.source_image,
            "target_image": self.target_image,
            "source_video": self.source_video,
            "target_video": self.target_video,
            "masks": self.masks,
            "flows": self.flows,
            "stats": dict(self.stats),
            "keep": self.keep,
            "status": self.status,
            "error": self.error,
            "video_info": dict(self.video_info),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditPair":
        d = dict(d)
        d["instruction"] = EditInstruction(**d["instruction"])
        return cls(**d)


# ----------------------------------------------------------------------------
# I/O


def _numbered_files(path: Path) -> list:
    if not path.is_dir():
        raise MediaError(f"no such directory: {path}")
    items = []
    for p in path.iterdir():
        m = _FRAME_NAME.match(p.name)
        if m:
            items.append((int(m.group(1)), p))
    if not items:
        raise MediaError(f"no numbered image files in {path}")
    items.sort()
    return [p for _, p in items]


def _read_image(p: Path) -> np.ndarray:
    try:
        with Image.open(p) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                raise MediaError(f"{p}: unsupported image mode {im.mode}")
            return np.asarray(im)
    except MediaError:
        raise
    except Exception as e:
        raise MediaError(f"cannot read image {p}: {e}") from e


def _prepare_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise MediaError(f"cannot create {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise MediaError(f"{path} is not writable")
    return path


def load_frame(path) -> Frame:
    return Frame(_read_image(Path(path)))


def save_frame(frame: Frame, path) -> None:
    if frame.data.dtype != np.uint8:
        raise ValidationError("only 8-bit frames can be written as images")
    Image.fromarray(frame.data).save(path)


def load_video(path, fps: float = 16.0) -> Video:
    """Read a directory of zero-padded numbered images, ordered by index."""
    files = _numbered_files(Path(path))
    return Video(tuple(Frame(_read_image(p)) for p in files), fps=fps)


def save_video(video: Video, path, ext: str = "png") -> list:
    """Write frames losslessly as ``000001.png``, ``000002.png``, ..."""
    out = _prepare_dir(path)
    written = []
    for i, f in enumerate(video.frames, start=1):
        p = out / f"{i:06d}.{ext}"
        try:
            save_frame(f, p)
        except OSError as e:
            raise MediaError(f"cannot write {p}: {e}") from e
        written.append(p)
    return written


def mask_to_uint8(m: MaskFrame) -> np.ndarray:
    return np.floor(m.values * 255.0 + 0.5).astype(np.uint8)


def load_mask(path) -> MaskFrame:
    a = _read_image(Path(path))
    if a.ndim != 2:
        raise ValidationError(f"{path}: mask images must be single-channel grayscale")
    vals = a.astype(np.float64) / 255.0
    kind = "binary" if np.all((a == 0) | (a == 255)) else "soft"
    return MaskFrame(vals, kind)


def save_mask(m: MaskFrame, path) -> None:
    Image.fromarray(mask_to_uint8(m), mode="L").save(path)


def load_mask_sequence(path) -> MaskSequence:
    return MaskSequence(tuple(load_mask(p) for p in _numbered_files(Path(path))))


def save_mask_sequence(seq: MaskSequence, path) -> list:
    """Masks are quantized to 8 bits: 0 maps to 0.0 and 255 to 1.0."""
    out = _prepare_dir(path)
    written = []
    for i, m in enumerate(seq.masks, start=1):
        p = out / f"{i:06d}.png"
        try:
            save_mask(m, p)
        except OSError as e:
            raise MediaError(f"cannot write {p}: {e}") from e
        written.append(p)
    return written


def gray_frame(a: np.ndarray) -> Frame:
    """Build an 8-bit grayscale frame from float values in [0, 1]."""
    return Frame(np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8))


def ensure_same_shape(*shapes: Sequence[int]) -> None:
    first = tuple(shapes[0])
    for s in shapes[1:]:
        if tuple(s) != first:
            raise ValidationError(f"shape mismatch: {first} vs {tuple(s)}")
