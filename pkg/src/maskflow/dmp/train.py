"""Gradient-descent training of the toy denoiser and mask predictor."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ValidationError
from ..evalkit import volume_iou
from .model import Batch, DMPParams, LossBreakdown, LossWeights, ToyDenoiserParams, backward, forward
from .synthetic import CHANNELS, INSTRUCTIONS, ToyDataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    batch_size: int = 8
    hidden: int = 32
    dmp_hidden: int = 16
    embed_dim: int = 8
    eval_size: int = 16


@dataclass
class TrainResult:
    denoiser: ToyDenoiserParams
    dmp: DMPParams
    curve: list
    eval_initial: LossBreakdown
    eval_final: LossBreakdown
    mask_iou: float


def init_params(cfg: TrainConfig, rng: np.random.Generator):
    den = ToyDenoiserParams.init(CHANNELS, len(INSTRUCTIONS), cfg.embed_dim, cfg.hidden, rng)
    dmp = DMPParams.init(cfg.hidden, cfg.dmp_hidden, rng)
    return den, dmp


def _draw(ds: ToyDataset, idx, rng) -> Batch:
    noise = rng.standard_normal(ds.target_latent[idx].shape)
    t = rng.uniform(0.0, 1.0, len(idx))
    return ds.batch(idx, noise, t)


def eval_batch(ds: ToyDataset, size: int, seed: int) -> Batch:
    """Fixed batch (first ``size`` items, fixed noise and times) for before/after comparisons."""
    rng = np.random.default_rng([seed, 1])
    return _draw(ds, np.arange(min(size, len(ds))), rng)


def mask_iou(batch: Batch, den, dmp) -> float:
    pred = forward(batch, den, dmp).logits[:, 0] >= 0.0
    return float(np.mean([volume_iou(p, m > 0.5) for p, m in zip(pred, batch.mask)]))


def train_toy(ds: ToyDataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Plain minibatch gradient descent on the combined loss; deterministic for a fixed seed."""
    if len(ds) == 0:
        raise ValidationError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    den, dmp = init_params(cfg, rng)
    ev = eval_batch(ds, cfg.eval_size, cfg.seed)
    initial = forward(ev, den, dmp, cfg.weights).loss
    curve = []
    for step in range(cfg.steps):
        idx = rng.choice(len(ds), size=min(cfg.batch_size, len(ds)), replace=False)
        try:
            with np.errstate(over="raise", invalid="raise"):
                loss, g_den, g_dmp = backward(_draw(ds, idx, rng), den, dmp, cfg.weights)
        except (FloatingPointError, ValidationError) as e:
            raise TrainingDiverged(f"non-finite values at step {step} (lr={cfg.lr}): {e}") from e
        curve.append(loss)
        for params, grads in ((den, g_den), (dmp, g_dmp)):
            for (_, p), (_, g) in zip(params.named(), grads.named()):
                p -= cfg.lr * g
        if step % 200 == 0:
            log.info("step %d total %.5f", step, loss.total)
    final = forward(ev, den, dmp, cfg.weights).loss
    return TrainResult(den, dmp, curve, initial, final, mask_iou(ev, den, dmp))


# ----------------------------------------------------------------------------
# persistence


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "l_diff", "l_mask", "l_pred", "total"])
        for i, lb in enumerate(curve):
            wr.writerow([i, *(repr(float(v)) for v in lb.as_row())])


def save_params(den: ToyDenoiserParams, dmp: DMPParams, path) -> Path:
    """Flat little-endian float64 blob ``<path>.bin`` plus JSON shape header ``<path>.json``."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for prefix, params in (("denoiser", den), ("dmp", dmp)):
        for name, arr in params.named():
            entries.append({"name": f"{prefix}.{name}", "shape": list(arr.shape), "offset": offset})
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").ravel())
            offset += arr.size
    path.with_suffix(".bin").write_bytes(np.concatenate(chunks).tobytes())
    header = {"dtype": "<f8", "count": offset, "params": entries}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")
    return path.with_suffix(".json")


def load_params(path):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if flat.size != header["count"]:
        raise ValidationError(f"{path}: expected {header['count']} values, found {flat.size}")
    groups = {"denoiser": {}, "dmp": {}}
    for e in header["params"]:
        prefix, name = e["name"].split(".", 1)
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        groups[prefix][name] = flat[e["offset"] : e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return ToyDenoiserParams(**groups["denoiser"]), DMPParams(**groups["dmp"])
