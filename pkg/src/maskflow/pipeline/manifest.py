"""Dataset manifest persistence and validation.

A manifest lives in one directory as two files: ``manifest.json`` (header with
thresholds, tool provenance and creation time) and ``records.jsonl`` (one
record per line). Record paths are relative to that directory.
"""
from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

from ..core import EditPair, MediaError, ValidationError, load_mask_sequence, load_video
from ..flow import FloFormatError, load_flow_sequence
from .filtering import FilterThresholds, keep

HEADER_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"

# dataset format targets: 16-24 fps, 81-121 frames, up to 720p (long side 1280)
FPS_RANGE = (16.0, 24.0)
FRAME_RANGE = (81, 121)
MAX_LONG_SIDE = 1280


class ManifestError(ValueError):
    pass


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    tool_provenance: dict = field(default_factory=dict)
    created_at: str = ""
    root: Optional[Path] = None

    def __post_init__(self):
        if not self.created_at:
            self.created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def by_id(self) -> dict:
        return {r.id: r for r in self.records}

    def header(self) -> dict:
        return {
            "thresholds": self.thresholds.to_dict(),
            "tool_provenance": self.tool_provenance,
            "created_at": self.created_at,
            "records": RECORDS_NAME,
        }


def _dump(rec: EditPair) -> str:
    return json.dumps(rec.to_dict(), sort_keys=True)


def _atomic_write(path: Path, text: str) -> None:
    # leave an identical file alone so reruns do not touch it
    if path.is_file() and path.read_text() == text:
        return
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_header(m: DatasetManifest, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    _atomic_write(root / HEADER_NAME, json.dumps(m.header(), indent=2, sort_keys=True) + "\n")


def write_manifest(m: DatasetManifest, root) -> Path:
    root = Path(root)
    write_header(m, root)
    _atomic_write(root / RECORDS_NAME, "".join(_dump(r) + "\n" for r in m.records))
    m.root = root
    return root / HEADER_NAME


class RecordWriter:
    """Serialises appends from concurrent workers; one line per finished record."""

    def __init__(self, root):
        self.path = Path(root) / RECORDS_NAME
        self._lock = threading.Lock()

    def append(self, rec: EditPair) -> None:
        line = _dump(rec) + "\n"
        with self._lock, open(self.path, "a") as fh:
            fh.write(line)
            fh.flush()


def _resolve(path) -> Path:
    p = Path(path)
    return p / HEADER_NAME if p.is_dir() else p


def read_manifest(path) -> DatasetManifest:
    """Load a manifest. Later lines for the same id supersede earlier ones."""
    header_path = _resolve(path)
    root = header_path.parent
    try:
        header = json.loads(header_path.read_text())
        thresholds = FilterThresholds(**header["thresholds"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ManifestError(f"cannot read manifest header {header_path}: {e}") from e
    records = {}
    rpath = root / header.get("records", RECORDS_NAME)
    if rpath.exists():
        for n, line in enumerate(rpath.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = EditPair.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as e:
                raise ManifestError(f"{rpath}:{n}: malformed record: {e}") from e
            records.pop(rec.id, None)
            records[rec.id] = rec
    return DatasetManifest(
        records=list(records.values()),
        thresholds=thresholds,
        tool_provenance=header.get("tool_provenance", {}),
        created_at=header.get("created_at", ""),
        root=root,
    )


def read_raw_ids(path) -> list:
    """Every record id in file order, duplicates included."""
    rpath = _resolve(path).parent / RECORDS_NAME
    if not rpath.exists():
        return []
    out = []
    for line in rpath.read_text().splitlines():
        if line.strip():
            try:
                out.append(json.loads(line)["id"])
            except (ValueError, KeyError, TypeError) as e:
                raise ManifestError(f"malformed record line: {e}") from e
    return out


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def format_warnings(rec: EditPair) -> list:
    info = rec.video_info or {}
    out = []
    fps = info.get("fps")
    if fps is not None and not FPS_RANGE[0] <= fps <= FPS_RANGE[1]:
        out.append(f"{rec.id}: fps {fps} outside {FPS_RANGE[0]:g}-{FPS_RANGE[1]:g}")
    frames = info.get("frames")
    if frames is not None and not FRAME_RANGE[0] <= frames <= FRAME_RANGE[1]:
        out.append(f"{rec.id}: {frames} frames outside {FRAME_RANGE[0]}-{FRAME_RANGE[1]}")
    w, h = info.get("width"), info.get("height")
    if w is not None and h is not None and max(w, h) > MAX_LONG_SIDE:
        out.append(f"{rec.id}: resolution {w}x{h} exceeds long side {MAX_LONG_SIDE}")
    return out


def _check_files(rec: EditPair, root: Path) -> list:
    errs = []
    for name in ("source_video", "target_video", "masks", "flows"):
        if not getattr(rec, name):
            errs.append(f"{rec.id}: kept record has no {name} path")
    if errs:
        return errs
    try:
        src = load_video(root / rec.source_video)
        tgt = load_video(root / rec.target_video)
        masks = load_mask_sequence(root / rec.masks)
        flows = load_flow_sequence(root / rec.flows)
        masks.check_matches(src)
        if len(tgt) != len(src):
            errs.append(f"{rec.id}: target has {len(tgt)} frames, source {len(src)}")
        if len(flows) != len(src) - 1 or flows.shape != (src.height, src.width):
            errs.append(f"{rec.id}: flow sequence does not match the source video")
    except (MediaError, ValidationError, FloFormatError) as e:
        errs.append(f"{rec.id}: {e}")
    return errs


def validate_manifest(manifest: Union[DatasetManifest, str, Path], check_files: bool = True) -> ValidationReport:
    if not isinstance(manifest, DatasetManifest):
        root = _resolve(manifest).parent
        raw_ids = read_raw_ids(manifest)
        manifest = read_manifest(manifest)
    else:
        root = manifest.root
        raw_ids = [r.id for r in manifest.records]
    rep = ValidationReport()
    seen = set()
    for rid in raw_ids:
        if rid in seen:
            rep.errors.append(f"duplicate record id {rid!r}")
        seen.add(rid)
    for rec in manifest.records:
        if rec.status not in ("complete", "failed", "pending"):
            rep.errors.append(f"{rec.id}: unknown status {rec.status!r}")
        if rec.status == "complete":
            try:
                report = keep(rec.stats, manifest.thresholds)
            except (KeyError, ValidationError) as e:
                rep.errors.append(f"{rec.id}: unusable stats: {e}")
            else:
                if report.keep != rec.keep:
                    rep.errors.append(f"{rec.id}: keep={rec.keep} disagrees with thresholds ({report.keep})")
            rep.warnings.extend(format_warnings(rec))
        elif rec.keep:
            rep.errors.append(f"{rec.id}: record with status {rec.status!r} is marked keep")
        for k, v in rec.stats.items():
            if not math.isfinite(v):
                rep.errors.append(f"{rec.id}: stat {k} is not finite")
        if rec.keep and check_files:
            if root is None:
                rep.errors.append(f"{rec.id}: manifest has no root directory to resolve paths")
            else:
                rep.errors.extend(_check_files(rec, Path(root)))
    return rep
