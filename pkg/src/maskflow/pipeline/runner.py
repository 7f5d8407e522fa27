"""End-to-end dataset construction driven by a TOML config."""
from __future__ import annotations

import logging
import os
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..core import (
    EditInstruction,
    EditPair,
    Frame,
    MediaError,
    ValidationError,
    load_frame,
    load_mask,
    load_video,
    save_frame,
    save_mask,
    save_mask_sequence,
    save_video,
)
from ..flow import HSParams, estimate_flow_sequence, flow_magnitude_stats, load_flow_sequence, save_flow_sequence
from ..propagate import MorphParams, PropagationConfig, area_ratio, propagate_masks, select_initial_mask, vanished_frames
from ..warp import ConsistencyParams
from .adapters import AdapterSpec, StageError, run_stage
from .filtering import FilterThresholds, keep
from .manifest import DatasetManifest, RecordWriter, read_manifest, write_header, write_manifest
from .overlay import render_overlay

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    pass


@dataclass
class PairSpec:
    id: str
    instruction: EditInstruction
    source_image: Path
    target_image: Path
    source_video: Optional[Path] = None
    flows: Optional[Path] = None
    source_mask: Optional[Path] = None
    target_mask: Optional[Path] = None
    object_prompt: str = ""


@dataclass
class PipelineConfig:
    output_dir: Path
    adapters: dict
    thresholds: FilterThresholds
    propagation: PropagationConfig
    flow: HSParams
    pairs: list
    frames: int = 16
    fps: float = 16.0
    workers: int = 1
    adapter_concurrency: int = 1
    overlay_alpha: float = 0.5
    extra: dict = field(default_factory=dict)


def _path(base: Path, v) -> Optional[Path]:
    return None if v in (None, "") else (base / v).resolve()


def load_config(path) -> PipelineConfig:
    """Parse and check a pipeline config. Everything is validated before any work starts."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    base = path.parent.resolve()
    try:
        ad = raw.get("adapters", {})
        adapters = {name: AdapterSpec.from_config(name, d, base) for name, d in ad.items()}
        th = FilterThresholds(**raw.get("thresholds", {}))
        pr = dict(raw.get("propagation", {}))
        prop = PropagationConfig(
            morph=MorphParams(
                open_radius=int(pr.pop("open_radius", 1)),
                close_radius=int(pr.pop("close_radius", 2)),
                element=pr.pop("element", "square"),
            ),
            binarize_threshold=float(pr.pop("binarize_threshold", 0.5)),
            consistency=ConsistencyParams(float(pr.pop("tau_abs", 0.5)), float(pr.pop("tau_rel", 0.01))),
            occlusion_fill=pr.pop("occlusion_fill", "hold-previous"),
        )
        if pr:
            raise ConfigError(f"unknown [propagation] keys {sorted(pr)}")
        fl = dict(raw.get("flow", {}))
        fl.pop("source", None)
        hs = HSParams(**fl)
        pairs = []
        for p in raw.get("pairs", []):
            pairs.append(
                PairSpec(
                    id=str(p["id"]),
                    instruction=EditInstruction(p["instruction"], p["task"], p.get("scene")),
                    source_image=_path(base, p["source_image"]),
                    target_image=_path(base, p.get("target_image") or p["source_image"]),
                    source_video=_path(base, p.get("source_video")),
                    flows=_path(base, p.get("flows")),
                    source_mask=_path(base, p.get("source_mask")),
                    target_mask=_path(base, p.get("target_mask")),
                    object_prompt=p.get("object", p["instruction"]),
                )
            )
    except (KeyError, TypeError, ValidationError) as e:
        raise ConfigError(f"{path}: {e}") from e

    if not pairs:
        raise ConfigError(f"{path}: no [[pairs]] to process")
    ids = [p.id for p in pairs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: duplicate pair ids")
    if "inpaint" not in adapters:
        raise ConfigError(f"{path}: [adapters.inpaint] is required")
    if any(p.source_video is None for p in pairs) and "i2v" not in adapters:
        raise ConfigError(f"{path}: pairs without source_video need [adapters.i2v]")
    if any(_needs_segmenter(p) for p in pairs) and "detect_segment" not in adapters:
        raise ConfigError(f"{path}: pairs without masks need [adapters.detect_segment]")

    env_cap = os.environ.get("MASKFLOW_WORKERS")
    workers = int(raw.get("workers", 1))
    if env_cap:
        workers = min(workers, max(1, int(env_cap)))
    return PipelineConfig(
        output_dir=_path(base, raw.get("output_dir", "output")),
        adapters=adapters,
        thresholds=th,
        propagation=prop,
        flow=hs,
        pairs=pairs,
        frames=int(raw.get("frames", 16)),
        fps=float(raw.get("fps", 16.0)),
        workers=max(1, workers),
        adapter_concurrency=max(1, int(raw.get("adapter_concurrency", workers))),
        overlay_alpha=float(raw.get("overlay_alpha", 0.5)),
    )


def _needs_segmenter(p: PairSpec) -> bool:
    task = p.instruction.task
    need_s = task in ("remove", "replace") and p.source_mask is None
    need_t = task in ("add", "replace") and p.target_mask is None
    return need_s or need_t


class _Runner:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = cfg.output_dir
        self.gate = threading.Semaphore(cfg.adapter_concurrency)

    def stage(self, name: str, **inputs) -> Path:
        with self.gate:
            return run_stage(self.cfg.adapters[name], {"frames": self.cfg.frames, "fps": self.cfg.fps, **inputs})

    def rel(self, p: Path) -> str:
        return os.path.relpath(p, self.root)

    def _mask_for(self, pair: PairSpec, which: str, work: Path):
        given = pair.source_mask if which == "source" else pair.target_mask
        if given is not None:
            return load_mask(given)
        image = pair.source_image if which == "source" else pair.target_image
        out = self.stage("detect_segment", **{"in": image, "out": work / f"{which}_mask.png", "prompt": pair.object_prompt})
        return load_mask(out)

    def process(self, pair: PairSpec) -> EditPair:
        cfg = self.cfg
        work = self.root / pair.id
        rec = EditPair(id=pair.id, instruction=pair.instruction)
        try:
            if work.exists():
                shutil.rmtree(work)
            (work / "images").mkdir(parents=True)
            for name, src in (("source", pair.source_image), ("target", pair.target_image)):
                dst = work / "images" / f"{name}.png"
                save_frame(load_frame(src), dst)
                setattr(rec, f"{name}_image", self.rel(dst))

            # stage 1: source video
            src_dir = work / "source"
            if pair.source_video is not None:
                video = load_video(pair.source_video, fps=cfg.fps)
                save_video(video, src_dir)
            else:
                self.stage("i2v", **{"in": pair.source_image, "out": src_dir, "prompt": pair.instruction.scene_text or pair.instruction.text})
                video = load_video(src_dir, fps=cfg.fps)
            rec.source_video = self.rel(src_dir)
            rec.video_info = {"fps": cfg.fps, "frames": len(video), "width": video.width, "height": video.height}

            # stage 2: initial mask
            init = work / "init"
            init.mkdir()
            task = pair.instruction.task
            m_s = self._mask_for(pair, "source", init) if task in ("remove", "replace") else None
            m_t = self._mask_for(pair, "target", init) if task in ("add", "replace") else None
            m1 = select_initial_mask(task, m_s, m_t)
            save_mask(m1, init / "initial.png")

            # stage 3: flow
            flows_dir = work / "flows"
            flows = load_flow_sequence(pair.flows) if pair.flows is not None else estimate_flow_sequence(video, cfg.flow, workers=1)
            save_flow_sequence(flows, flows_dir)
            rec.flows = self.rel(flows_dir)

            # stage 4: propagation
            masks = propagate_masks(m1, flows, cfg.propagation)
            masks.check_matches(video)
            save_mask_sequence(masks, work / "masks")
            rec.masks = self.rel(work / "masks")
            gone = vanished_frames(masks)
            if gone:
                log.warning("%s: propagated mask is empty in %d frame(s), first at %d", pair.id, len(gone), gone[0])
            render_overlay(video, masks, cfg.overlay_alpha, work / "overlay")

            # filter, then stage 5 only for kept pairs
            rec.stats = {"area_ratio": area_ratio(masks), "flow_mag": flow_magnitude_stats(flows).mean_magnitude}
            rec.keep = keep(rec.stats, cfg.thresholds).keep
            if rec.keep:
                tgt = self.stage("inpaint", **{"in": src_dir, "mask": work / "masks", "out": work / "target", "prompt": pair.instruction.text})
                rec.target_video = self.rel(tgt)
            rec.status = "complete"
        except (StageError, MediaError, ValidationError, OSError) as e:
            log.error("%s failed: %s", pair.id, e)
            rec.status, rec.keep, rec.error = "failed", False, str(e)
        return rec


def _is_done(rec: EditPair, root: Path) -> bool:
    if rec.status != "complete":
        return False
    paths = [rec.source_video, rec.masks, rec.flows] + ([rec.target_video] if rec.keep else [])
    return all(p and (root / p).exists() for p in paths)


def run_pipeline(config_path) -> DatasetManifest:
    """Process every configured pair; records already complete in an existing manifest are skipped.

    A failing pair is recorded with ``status="failed"`` and does not stop the
    batch. The records file is appended as pairs finish and compacted into
    config order at the end.
    """
    cfg = load_config(config_path)
    root = cfg.output_dir
    root.mkdir(parents=True, exist_ok=True)
    provenance = {name: a.provenance() for name, a in sorted(cfg.adapters.items())}

    done = {}
    created_at = ""
    if (root / "manifest.json").exists():
        prev = read_manifest(root)
        if prev.thresholds == cfg.thresholds:
            created_at = prev.created_at
            done = {r.id: r for r in prev.records if _is_done(r, root)}
        else:
            log.info("thresholds changed; reprocessing every pair")
    manifest = DatasetManifest(thresholds=cfg.thresholds, tool_provenance=provenance, created_at=created_at, root=root)
    write_header(manifest, root)

    todo = [p for p in cfg.pairs if p.id not in done]
    writer = RecordWriter(root)
    runner = _Runner(cfg)

    def work(p):
        rec = runner.process(p)
        writer.append(rec)
        return rec

    if cfg.workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(work, todo))
    else:
        results = [work(p) for p in todo]

    fresh = {r.id: r for r in results}
    manifest.records = [done.get(p.id) or fresh[p.id] for p in cfg.pairs]
    write_manifest(manifest, root)
    if not any(r.status == "complete" for r in manifest.records):
        raise PipelineError("no pair could be processed")
    return manifest


# ----------------------------------------------------------------------------
# synthetic demo


def _demo_image(size: int, square: Optional[tuple]) -> np.ndarray:
    from ..evalkit import smooth_texture

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    g = smooth_texture(xs, ys)
    rgb = np.stack([g, 0.8 * g + 0.1, 1.0 - g], -1)
    img = np.floor(np.clip(rgb, 0, 1) * 230 + 0.5).astype(np.uint8)
    if square:
        x0, y0, side = square
        img[y0 : y0 + side, x0 : x0 + side] = 255
    return img


def write_demo_config(directory, frames: int = 16, size: int = 64, dx: float = 1.0, **overrides) -> Path:
    """Three synthetic pairs with mock adapters: an add, a remove, and an oversized edit that fails the area filter."""
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    pairs = [
        ("add_square", "add", "add a white square", (16, 20, 16), True),
        ("remove_square", "remove", "remove the white square", (24, 18, 12), False),
        ("huge_square", "add", "add a huge white square", (4, 4, 50), True),
    ]
    blocks = []
    for pid, task, text, sq, on_target in pairs:
        plain, with_sq = _demo_image(size, None), _demo_image(size, sq)
        s_img, t_img = (plain, with_sq) if on_target else (with_sq, plain)
        save_frame(Frame(s_img), d / "images" / f"{pid}_source.png")
        save_frame(Frame(t_img), d / "images" / f"{pid}_target.png")
        blocks.append(
            f'[[pairs]]\nid = "{pid}"\ntask = "{task}"\ninstruction = "{text}"\nscene = "a textured wall"\n'
            f'object = "white square"\nsource_image = "images/{pid}_source.png"\ntarget_image = "images/{pid}_target.png"\n'
        )
    mock = "{python} -m maskflow.mock_adapters"
    cfg = f"""output_dir = "{overrides.get('output_dir', 'output')}"
frames = {frames}
fps = 16
workers = {overrides.get('workers', 2)}

[adapters.i2v]
command = "{mock} i2v --in {{in}} --out {{out}} --prompt {{prompt}} --frames {{frames}} --dx {dx}"
timeout = 120
version = "mock-1"

[adapters.detect_segment]
command = "{mock} detect_segment --in {{in}} --out {{out}} --prompt {{prompt}}"
timeout = 60
version = "mock-1"

[adapters.inpaint]
command = "{overrides.get('inpaint_command', mock + ' inpaint --in {in} --mask {mask} --out {out} --prompt {prompt}')}"
timeout = 120
version = "mock-1"

[thresholds]
alpha_min = 0.01
alpha_max = 0.5
beta_min = 0.1
beta_max = 20.0

[propagation]
open_radius = 1
close_radius = 2
element = "square"
binarize_threshold = 0.5
tau_abs = 0.5
tau_rel = 0.01
occlusion_fill = "hold-previous"

[flow]
smoothness_weight = 0.1
iterations = 200
pyramid_levels = 3
pyramid_scale = 0.5

""" + "\n".join(blocks)
    path = d / "pipeline.toml"
    path.write_text(cfg)
    return path
