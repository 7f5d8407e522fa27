"""Command-line entry point: ``maskflow <group> <command> ...``.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 stage failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import MediaError, ValidationError, load_mask, load_mask_sequence, load_video, save_mask, save_mask_sequence

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_STAGE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _write_csv(path, header, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)
    finally:
        if path:
            fh.close()


# ----------------------------------------------------------------------------
# handlers


def cmd_pipeline_run(a) -> int:
    from .pipeline import run_pipeline

    m = run_pipeline(a.config)
    failed = [r.id for r in m.records if r.status != "complete"]
    _emit({
        "manifest": str(m.root / "manifest.json"),
        "records": len(m.records),
        "kept": sum(r.keep for r in m.records),
        "failed": failed,
    })
    for rid in failed:
        logging.warning("pair %s failed; see its manifest record", rid)
    return EXIT_OK


def cmd_pipeline_validate(a) -> int:
    from .pipeline import validate_manifest

    rep = validate_manifest(a.manifest, check_files=not a.no_files)
    _emit({"errors": rep.errors, "warnings": rep.warnings})
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_pipeline_demo(a) -> int:
    from .pipeline import write_demo_config

    print(write_demo_config(a.directory, frames=a.frames))
    return EXIT_OK


def _hs(a):
    from .flow import HSParams

    return HSParams(a.smoothness, a.iterations, a.levels, a.scale)


def cmd_flow_estimate(a) -> int:
    from .flow import estimate_flow_sequence, save_flow_sequence

    seq = estimate_flow_sequence(load_video(a.video), _hs(a))
    save_flow_sequence(seq, a.out)
    print(f"wrote {len(seq)} forward and backward fields to {a.out}")
    return EXIT_OK


def cmd_flow_stats(a) -> int:
    from .flow import flow_magnitude_stats, load_flow_sequence

    _emit(asdict(flow_magnitude_stats(load_flow_sequence(a.flows))))
    return EXIT_OK


def _morph(a):
    from .propagate import MorphParams

    return MorphParams(a.open_radius, a.close_radius, a.element)


def cmd_mask_init(a) -> int:
    from .propagate import refine_mask, select_initial_mask

    m_s = load_mask(a.source_mask) if a.source_mask else None
    m_t = load_mask(a.target_mask) if a.target_mask else None
    m = refine_mask(select_initial_mask(a.task, m_s, m_t), _morph(a))
    save_mask(m, a.out)
    _emit({"out": a.out, "area": m.area()})
    return EXIT_OK


def cmd_mask_propagate(a) -> int:
    from .flow import load_flow_sequence
    from .propagate import PropagationConfig, propagate_masks, vanished_frames
    from .warp import ConsistencyParams

    cfg = PropagationConfig(_morph(a), a.threshold, ConsistencyParams(a.tau_abs, a.tau_rel), a.occlusion_fill)
    seq = propagate_masks(load_mask(a.mask), load_flow_sequence(a.flows), cfg)
    save_mask_sequence(seq, a.out)
    gone = vanished_frames(seq)
    if gone:
        logging.warning("mask is empty in %d frame(s), first at index %d", len(gone), gone[0])
    _emit({"out": a.out, "frames": len(seq)})
    return EXIT_OK


def cmd_filter(a) -> int:
    from .flow import flow_magnitude_stats, load_flow_sequence
    from .pipeline import FilterThresholds, keep
    from .propagate import area_ratio

    th = FilterThresholds(a.alpha_min, a.alpha_max, a.beta_min, a.beta_max)
    stats = {
        "area_ratio": area_ratio(load_mask_sequence(a.masks)),
        "flow_mag": flow_magnitude_stats(load_flow_sequence(a.flows)).mean_magnitude,
    }
    _emit(keep(stats, th).to_dict())
    return EXIT_OK


def cmd_render_overlay(a) -> int:
    from .pipeline import render_overlay

    render_overlay(load_video(a.video), load_mask_sequence(a.masks), a.alpha, a.out)
    print(f"wrote overlay frames to {a.out}")
    return EXIT_OK


def _train_config(path):
    from .dmp import LossWeights, TrainConfig

    raw = tomllib.loads(Path(path).read_text()) if path else {}
    tr = dict(raw.get("train", {}))
    weights = LossWeights(float(tr.pop("lambda1", 1.0)), float(tr.pop("lambda2", 0.5)))
    data = raw.get("data", {})
    return TrainConfig(weights=weights, **tr), int(data.get("seed", 0)), int(data.get("count", 32))


def cmd_dmp_train(a) -> int:
    from .dmp import make_synthetic_task, save_params, train_toy, write_curve

    cfg, data_seed, count = _train_config(a.config)
    if a.steps is not None:
        cfg = type(cfg)(**{**cfg.__dict__, "steps": a.steps})
    res = train_toy(make_synthetic_task(data_seed, count), cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_curve(res.curve, out / "loss_curve.csv")
    save_params(res.denoiser, res.dmp, out / "params")
    summary = {
        "initial_total": res.eval_initial.total,
        "final_total": res.eval_final.total,
        "reduction": 1.0 - res.eval_final.total / res.eval_initial.total,
        "mask_iou": res.mask_iou,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _emit(summary)
    return EXIT_OK


def cmd_dmp_gradcheck(a) -> int:
    import numpy as np

    from .dmp import TrainConfig, grad_check, make_synthetic_task
    from .dmp.train import _draw, init_params

    ds = make_synthetic_task(0, 4)
    worst = {}
    for seed in range(a.seeds):
        rng = np.random.default_rng(seed)
        den, dmp = init_params(TrainConfig(hidden=a.hidden, dmp_hidden=a.dmp_hidden, embed_dim=a.embed_dim), rng)
        rep = grad_check(_draw(ds, np.arange(a.batch), rng), den, dmp, fd_step=a.step)
        for k, v in rep.per_group.items():
            worst[k] = max(worst.get(k, 0.0), v)
    ok = max(worst.values()) <= a.tolerance
    _emit({"max_rel_error": max(worst.values()), "per_group": worst, "pass": ok})
    return EXIT_OK if ok else EXIT_INVALID


def cmd_eval_iou(a) -> int:
    from .evalkit import temporal_iou

    rep = temporal_iou(load_mask_sequence(a.pred), load_mask_sequence(a.ref))
    _write_csv(a.csv, ["frame", "iou"], [(i, repr(v)) for i, v in enumerate(rep.per_frame)])
    if a.csv:
        _emit({"mean": rep.mean, "csv": a.csv})
    return EXIT_OK


def _flo_list(path):
    from .flow import read_flo

    p = Path(path)
    files = sorted(p.glob("*.flo")) if p.is_dir() else [p]
    if not files:
        raise MediaError(f"no .flo files at {p}")
    return [read_flo(f) for f in files]


def cmd_eval_epe(a) -> int:
    from .evalkit import endpoint_error

    est, ref = _flo_list(a.flow), _flo_list(a.truth)
    if len(est) != len(ref):
        raise ValidationError(f"{len(est)} estimated vs {len(ref)} reference fields")
    rows = [(i, repr(r.mean), repr(r.max)) for i, r in enumerate(endpoint_error(e, t) for e, t in zip(est, ref))]
    _write_csv(a.csv, ["frame", "mean_epe", "max_epe"], rows)
    if a.csv:
        _emit({"mean": sum(float(r[1]) for r in rows) / len(rows), "csv": a.csv})
    return EXIT_OK


# ----------------------------------------------------------------------------


def _add_morph(p):
    p.add_argument("--open-radius", type=int, default=1)
    p.add_argument("--close-radius", type=int, default=2)
    p.add_argument("--element", choices=["square", "disk"], default="square")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="maskflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    groups = ap.add_subparsers(dest="group", required=True, parser_class=_Parser)

    g = groups.add_parser("pipeline", help="dataset construction").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("run")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline_run)
    p = g.add_parser("validate")
    p.add_argument("manifest")
    p.add_argument("--no-files", action="store_true", help="skip checking referenced files")
    p.set_defaults(func=cmd_pipeline_validate)
    p = g.add_parser("demo", help="write a synthetic three-pair config using mock adapters")
    p.add_argument("directory")
    p.add_argument("--frames", type=int, default=16)
    p.set_defaults(func=cmd_pipeline_demo)

    g = groups.add_parser("flow", help="optical flow").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("estimate")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--smoothness", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--scale", type=float, default=0.5)
    p.set_defaults(func=cmd_flow_estimate)
    p = g.add_parser("stats")
    p.add_argument("--flows", required=True)
    p.set_defaults(func=cmd_flow_stats)

    g = groups.add_parser("mask", help="initial masks and propagation").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("init")
    p.add_argument("--task", choices=["add", "remove", "replace"], required=True)
    p.add_argument("--source-mask")
    p.add_argument("--target-mask")
    p.add_argument("--out", required=True)
    _add_morph(p)
    p.set_defaults(func=cmd_mask_init)
    p = g.add_parser("propagate")
    p.add_argument("--mask", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--tau-abs", type=float, default=0.5)
    p.add_argument("--tau-rel", type=float, default=0.01)
    p.add_argument("--occlusion-fill", choices=["hold-previous", "zero"], default="hold-previous")
    _add_morph(p)
    p.set_defaults(func=cmd_mask_propagate)

    p = groups.add_parser("filter", help="apply the area/motion keep filter")
    p.add_argument("--masks", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--alpha-min", type=float, default=0.01)
    p.add_argument("--alpha-max", type=float, default=0.5)
    p.add_argument("--beta-min", type=float, default=0.1)
    p.add_argument("--beta-max", type=float, default=20.0)
    p.set_defaults(func=cmd_filter)

    g = groups.add_parser("render", help="visualisation").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("overlay")
    p.add_argument("--video", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_render_overlay)

    g = groups.add_parser("dmp", help="toy mask predictor").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("train")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_dmp_train)
    p = g.add_parser("gradcheck")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--dmp-hidden", type=int, default=16)
    p.add_argument("--embed-dim", type=int, default=8)
    p.set_defaults(func=cmd_dmp_gradcheck)

    g = groups.add_parser("eval", help="metrics").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("iou")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval_iou)
    p = g.add_parser("epe")
    p.add_argument("--flow", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval_epe)
    return ap


def main(argv=None) -> int:
    from .pipeline import ConfigError, ManifestError, PipelineError, StageError
    from .dmp import TrainingDiverged
    from .flow import FloFormatError

    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except (StageError, PipelineError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except (ValidationError, ConfigError, ManifestError, MediaError, FloFormatError, tomllib.TOMLDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
