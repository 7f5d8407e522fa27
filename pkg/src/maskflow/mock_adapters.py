"""Stand-in external tools honouring the adapter file contracts.

    python -m maskflow.mock_adapters i2v --in IMG --out DIR --prompt P --frames 16 --dx 1
    python -m maskflow.mock_adapters detect_segment --in IMG --out MASK.png --prompt P
    python -m maskflow.mock_adapters inpaint --in DIR --mask DIR --out DIR --prompt P
    python -m maskflow.mock_adapters fail --code 4

``i2v`` copies the image ``frames`` times, translating frame t by ``t*(dx, dy)``
pixels with edge replication. ``detect_segment`` returns pixels whose luma is at
least ``threshold``. ``inpaint`` replaces masked pixels by the mean colour of the
unmasked pixels of the same frame.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import Frame, MaskFrame, Video, load_frame, load_mask_sequence, load_video, save_mask, save_video


def _shift(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    a = img.astype(np.float64)
    if a.ndim == 2:
        out = ndimage.shift(a, (dy, dx), order=1, mode="nearest")
    else:
        out = np.stack([ndimage.shift(a[..., c], (dy, dx), order=1, mode="nearest") for c in range(a.shape[2])], -1)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def i2v(args) -> None:
    img = load_frame(args.inp).data
    frames = [Frame(_shift(img, t * args.dx, t * args.dy)) for t in range(args.frames)]
    save_video(Video(tuple(frames), fps=args.fps), args.out)


def detect_segment(args) -> None:
    f = load_frame(args.inp)
    save_mask(MaskFrame.from_bool(f.to_gray() >= args.threshold), args.out)


def inpaint(args) -> None:
    video = load_video(args.inp)
    masks = load_mask_sequence(args.mask)
    out = []
    for f, m in zip(video.frames, masks):
        d = f.data.copy()
        sel = m.values >= 0.5
        if sel.any() and (~sel).any():
            d[sel] = np.floor(d[~sel].astype(np.float64).mean(axis=0) + 0.5).astype(np.uint8)
        out.append(Frame(d))
    save_video(Video(tuple(out), fps=video.fps), args.out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="maskflow.mock_adapters")
    sub = ap.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("i2v")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--fps", type=float, default=16.0)
    p.add_argument("--dx", type=float, default=0.0)
    p.add_argument("--dy", type=float, default=0.0)

    p = sub.add_parser("detect_segment")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--threshold", type=float, default=0.95)

    p = sub.add_parser("inpaint")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prompt", default="")

    p = sub.add_parser("fail")
    p.add_argument("--code", type=int, default=1)
    p.add_argument("rest", nargs=argparse.REMAINDER)

    args = ap.parse_args(argv)
    if args.stage == "fail":
        print("mock failure", file=sys.stderr)
        return args.code
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    {"i2v": i2v, "detect_segment": detect_segment, "inpaint": inpaint}[args.stage](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
