"""Standalone codec/container toolchain CLI (`vidpipe-codec`).

Probe, cut (remux or re-encode), and synthesize H.264-in-MP4 files. The
chunk planner drives this binary as an external process with a pinned
argument template, so its flag surface is part of the manifest contract
and must stay backward compatible.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from . import _codec
from .errors import ToolError


def _probe(args: argparse.Namespace) -> dict:
    return dict(_codec.probe(args.src))


def _fps_fraction(fps: float) -> Fraction:
    return Fraction(fps).limit_denominator(10_000)


def _cut(args: argparse.Namespace) -> dict:
    if args.mode == "remux":
        info = dict(_codec.remux_cut(args.src, args.dst, args.start, args.end))
        info["mode"] = "remux"
        return info
    return reencode_cut(args.src, args.dst, args.start, args.end,
                        bit_rate=args.bitrate, crf=args.crf,
                        gop_seconds=args.gop_seconds, preset=args.preset)


def reencode_cut(src: str, dst: str, start: float, end: float, *,
                 bit_rate: int = 0, crf: int = -1, gop_seconds: float = 1.0,
                 preset: str = "veryfast") -> dict:
    """Exact frame-boundary cut via decode + re-encode.

    Defaults to the source's own bitrate when neither bit_rate nor crf is
    given. The fresh encode starts with a keyframe, so the output is
    independently decodable regardless of source GOP structure.
    """
    meta = _codec.probe(src)
    if bit_rate <= 0 and crf < 0:
        bit_rate = int(meta["bit_rate"]) if meta["bit_rate"] > 0 else 0
        if bit_rate <= 0:
            crf = 18
    fps = _fps_fraction(meta["fps"])
    gop = max(1, round(meta["fps"] * gop_seconds))
    reader = _codec.VideoReader(src)
    writer = _codec.VideoWriter(dst, meta["width"], meta["height"],
                                fps.numerator, fps.denominator,
                                codec="libx264", bit_rate=bit_rate, gop=gop,
                                preset=preset, crf=crf)
    eps = 1e-6
    frames = 0
    try:
        reader.seek(start)
        while reader.advance():
            pts = reader.last_pts()
            if pts < start - eps:
                continue
            if pts >= end - eps:
                break
            # planes pass straight through: no color conversion loss
            _, y, u, v = reader.current_raw()
            writer.write_yuv(y, u, v)
            frames += 1
    finally:
        writer.close()
        reader.close()
    return {"mode": "reencode", "frames": frames, "actual_start": start,
            "drift": 0.0, "keyframe_aligned": True, "gop": gop}


def _synth(args: argparse.Namespace) -> dict:
    from .corpus import write_pattern_clip
    return write_pattern_clip(
        args.out, clip_id=args.clip_id, length_sec=args.length,
        width=args.width, height=args.height, fps=args.fps,
        bit_rate=args.bitrate, crf=args.crf, gop_seconds=args.gop_seconds,
        noise=args.noise, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidpipe-codec",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("probe", help="container metadata, no decode")
    pr.add_argument("--src", required=True)
    pr.set_defaults(func=_probe)

    cut = sub.add_parser("cut", help="extract [start, end) into a new file")
    cut.add_argument("--src", required=True)
    cut.add_argument("--dst", required=True)
    cut.add_argument("--start", type=float, required=True)
    cut.add_argument("--end", type=float, required=True)
    cut.add_argument("--mode", choices=("remux", "reencode"),
                     default="reencode")
    cut.add_argument("--bitrate", type=int, default=0,
                     help="target bits/sec; 0 = source bitrate")
    cut.add_argument("--crf", type=int, default=-1)
    cut.add_argument("--gop-seconds", type=float, default=1.0)
    cut.add_argument("--preset", default="veryfast")
    cut.set_defaults(func=_cut)

    sy = sub.add_parser("synth", help="synthetic timestamp-pattern clip")
    sy.add_argument("--out", required=True)
    sy.add_argument("--clip-id", type=int, default=0)
    sy.add_argument("--length", type=float, default=15.0)
    sy.add_argument("--width", type=int, default=320)
    sy.add_argument("--height", type=int, default=256)
    sy.add_argument("--fps", type=float, default=8.0)
    sy.add_argument("--bitrate", type=int, default=0)
    sy.add_argument("--crf", type=int, default=-1)
    sy.add_argument("--gop-seconds", type=float, default=1.0)
    sy.add_argument("--noise", type=float, default=0.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (RuntimeError, OSError, ValueError, ToolError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
