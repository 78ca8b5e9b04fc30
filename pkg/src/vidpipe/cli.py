"""vidpipe command line.

Exit codes: 0 success, 1 usage/config error, 2 data error (probe/decode/
tool failures), 3 infeasible plan. Results go to stdout (JSON with
--json), diagnostics to stderr. Env: VIDPIPE_LOG sets the log level,
VIDPIPE_CODEC_BIN points the chunker at an alternative codec toolchain.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import struct
import sys

from . import __version__
from .chunking import (ChunkRecord, manifest_header, plan_chunks,
                       probe_source, solve_chunk_length, chunk_video,
                       write_manifest)
from .config import PipelineConfig, SCHEMA_VERSION, load_config
from .corpus import corpus_size_bytes, make_synthetic_corpus
from .decoder import (ClipRequest, decode_fused, decode_then_crop, probe,
                      select_timestamps)
from .errors import ConfigurationError, InputError, VidpipeError
from .loader import run_benchmark, run_loader
from .models import (activation_memory, calibrate_fixed_overhead,
                     max_batch_size, pipeline_throughput, PipelineProfile)
from .rrc import CropRect, SampleSeed, center_crop, sample_crop
from .tensorio import write_vpc1
from .units import format_bytes, parse_bits, parse_bytes, parse_seconds

log = logging.getLogger("vidpipe.cli")

MEMORY_MODES = {
    "baseline": (False, False),
    "flash": (True, False),
    "ckpt": (False, True),
    "flash+ckpt": (True, True),
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def _size(value: str) -> tuple[int, int]:
    try:
        w, h = value.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise ConfigurationError(
            f"expected WIDTHxHEIGHT, got {value!r}") from exc


# ---------------------------------------------------------------- chunking

def cmd_solve_chunk_length(args, cfg: PipelineConfig) -> int:
    profile = cfg.hardware_profile(
        batch_size=args.batch_size,
        avg_bitrate=parse_bits(args.bitrate) if args.bitrate else None,
        read_speed=parse_bytes(args.read_speed) if args.read_speed else None,
        step_time=parse_seconds(args.step_time) if args.step_time else None)
    margin = args.margin
    if margin is None:
        margin = cfg.chunking.get("safety_margin", 0.9)
    t_max = solve_chunk_length(profile, safety_margin=margin)
    payload = {
        "chunk_length_sec": t_max,
        "integer_bound_sec": math.ceil(t_max - 1e-12),
        "suggested_sec": math.floor(t_max + 1e-12),
        "margin": margin,
        "batch_size": profile.batch_size,
        "avg_bitrate_bits_per_sec": profile.avg_bitrate,
        "read_speed_bytes_per_sec": profile.read_speed,
        "step_time_sec": profile.step_time,
    }
    _emit(args, payload, f"{t_max:g}")
    return 0


def cmd_chunk(args, cfg: PipelineConfig) -> int:
    mode = args.mode or cfg.chunking.get("mode", "reencode")
    failures = []
    records: list[ChunkRecord] = []
    per_source = {}
    for source in args.source:
        source_id = os.path.splitext(os.path.basename(source))[0]
        try:
            meta = probe_source(source)
            if args.chunk_length is not None:
                length = parse_seconds(args.chunk_length)
            else:
                length = solve_chunk_length(
                    cfg.hardware_profile(
                        batch_size=args.batch_size,
                        avg_bitrate=parse_bits(args.bitrate)
                        if args.bitrate else None,
                        read_speed=parse_bytes(args.read_speed)
                        if args.read_speed else None,
                        step_time=parse_seconds(args.step_time)
                        if args.step_time else None),
                    safety_margin=args.margin
                    if args.margin is not None
                    else cfg.chunking.get("safety_margin", 0.9))
            plan = plan_chunks(float(meta["duration"]), length, source_id)
            recs = chunk_video(source, plan, mode, args.out_dir)
            records.extend(recs)
            per_source[source_id] = len(recs)
        except VidpipeError as exc:
            failures.append({"source": source, "error": str(exc)})
    if records or not failures:
        write_manifest(args.manifest, records, manifest_header())
    for failure in failures:
        print(f"vidpipe chunk: {failure['source']}: {failure['error']}",
              file=sys.stderr)
    payload = {"manifest": args.manifest, "mode": mode,
               "chunks": len(records), "sources": per_source,
               "failures": failures}
    _emit(args, payload,
          f"{len(records)} chunks from {len(per_source)} sources -> "
          f"{args.manifest}" + (f" ({len(failures)} failed)"
                                if failures else ""))
    return 2 if failures else 0


# ---------------------------------------------------------------- decoding

def _parse_crop(args, cfg: PipelineConfig, geometry) -> CropRect:
    if args.crop == "center":
        return center_crop(geometry, args.target[1], args.target[0])
    if args.crop == "rrc":
        params = cfg.rrc_params(target_w=args.target[0],
                                target_h=args.target[1])
        seed = SampleSeed(0, 0, args.sample_index)
        return sample_crop(geometry, params, seed, args.seed)
    parts = args.crop.split(",")
    if len(parts) != 4:
        raise ConfigurationError(
            f"--crop must be 'center', 'rrc' or 'x,y,w,h', got {args.crop!r}")
    try:
        x, y, w, h = (int(p) for p in parts)
    except ValueError as exc:
        raise ConfigurationError(f"bad --crop {args.crop!r}: {exc}") from exc
    return CropRect(x=x, y=y, crop_w=w, crop_h=h)


def cmd_decode(args, cfg: PipelineConfig) -> int:
    meta = probe(args.chunk)
    geometry = meta.geometry
    crop = _parse_crop(args, cfg, geometry)
    request = ClipRequest(
        chunk_path=args.chunk, local_start=parse_seconds(args.start),
        local_end=parse_seconds(args.end), num_frames=args.frames,
        crop=crop, hflip=args.hflip, target_w=args.target[0],
        target_h=args.target[1], frame_sampling=args.sampling,
        seed=SampleSeed(0, 0, args.sample_index), base_seed=args.seed)
    decode = decode_fused if args.pipeline == "fused" else decode_then_crop
    clip = decode(request)
    with open(args.out, "wb") as fh:
        written = write_vpc1(fh, clip.frames)
    payload = {
        "out": args.out, "bytes": written,
        "shape": list(clip.frames.shape),
        "timestamps": clip.timestamps,
        "crop": {"x": crop.x, "y": crop.y, "w": crop.crop_w,
                 "h": crop.crop_h},
        "hflip": args.hflip, "pipeline": args.pipeline,
        "counters": clip.counters,
    }
    _emit(args, payload,
          f"wrote {args.out} shape {tuple(clip.frames.shape)} "
          f"({clip.counters.get('frames_decoded', '?')} frames decoded)")
    return 0


def cmd_make_corpus(args, cfg: PipelineConfig) -> int:
    width, height = _size(args.resolution)
    manifest = make_synthetic_corpus(
        args.clips, parse_seconds(args.length), (width, height),
        int(parse_bits(args.bitrate)) if args.bitrate else 0,
        args.out_dir, fps=args.fps, gop_seconds=args.gop, noise=args.noise,
        seed=args.seed)
    size = corpus_size_bytes(manifest)
    payload = {"manifest": manifest, "clips": args.clips,
               "total_bytes": size, "total_human": format_bytes(size)}
    _emit(args, payload,
          f"{args.clips} clips, {format_bytes(size)} -> {manifest}")
    return 0


# ------------------------------------------------------------------ loader

def _loader_config(args, cfg: PipelineConfig):
    sampling = cfg.sampling_spec(num_frames=args.frames,
                                 window_seconds=args.window)
    return cfg.loader_config(
        manifest=args.manifest, sampling=sampling,
        num_workers=args.workers, queue_capacity=args.queue,
        batch_size=args.batch, pipeline=args.pipeline,
        epoch_seed=args.seed, error_policy=args.policy)


def cmd_bench_loader(args, cfg: PipelineConfig) -> int:
    report = run_benchmark(
        _loader_config(args, cfg), sample_count=args.samples,
        duration_sec=args.duration, warmup_fraction=args.warmup,
        dump_csv=args.dump_csv)
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    if args.plot:
        from . import plots
        plots.plot_bench(payload, args.plot)
    lat = payload["latency_ms"]
    _emit(args, payload, "\n".join([
        f"pipeline {report.pipeline}, M={report.num_workers}, "
        f"{report.samples_measured} samples measured "
        f"({report.samples_warmup} warm-up)",
        f"latency ms: p50 {lat['p50']:.2f}  p90 {lat['p90']:.2f}  "
        f"mean {lat['mean']:.2f}",
        "stage ms: " + "  ".join(
            f"{k} {v:.2f}" for k, v in payload["stage_ms"].items()),
        f"throughput: total {report.total_videos_per_sec:.2f} videos/s, "
        f"per-worker mean {report.per_worker_mean:.2f}",
        f"queue high-water mark {report.queue_high_water_mark}",
    ]))
    return 0


def cmd_run_loader(args, cfg: PipelineConfig) -> int:
    config = _loader_config(args, cfg)
    out = sys.stdout.buffer
    emitted = 0
    for batch in run_loader(config, epochs=args.epochs):
        if args.dump_ids:
            print(json.dumps({
                "epoch": batch.epoch, "batch": batch.batch_index,
                "sample_ids": batch.sample_ids,
                "skipped_ids": batch.skipped_ids}))
        else:
            header = json.dumps({
                "schema_version": SCHEMA_VERSION,
                "epoch": batch.epoch, "batch": batch.batch_index,
                "sample_ids": batch.sample_ids,
                "skipped_ids": batch.skipped_ids,
                "timestamps": batch.timestamps,
                "shape": list(batch.frames.shape), "dtype": "uint8",
            }).encode()
            out.write(struct.pack("<I", len(header)))
            out.write(header)
            # the container is 4-D; fold batch and time axes, the header's
            # 5-D shape is authoritative
            frames = batch.frames
            write_vpc1(out, frames.reshape(-1, *frames.shape[2:]))
            out.flush()
        emitted += 1
        if args.batches is not None and emitted >= args.batches:
            break
    if args.dump_ids:
        sys.stdout.flush()
    return 0


# ------------------------------------------------------------------ models

def cmd_plan_memory(args, cfg: PipelineConfig) -> int:
    vit = cfg.vit_config(frames=args.frames, depth=args.depth,
                         dim=args.dim, heads=args.heads)
    coeffs = cfg.memory_coefficients()
    modes = {name: activation_memory(vit, *flags, coeffs).to_dict()
             for name, flags in MEMORY_MODES.items()}
    requested = ("flash+ckpt" if args.flash and args.ckpt else
                 "flash" if args.flash else
                 "ckpt" if args.ckpt else "baseline")

    gpu_ram = (parse_bytes(args.gpu_ram) if args.gpu_ram
               else cfg.models.get("gpu_ram"))
    overhead = (parse_bytes(args.fixed_overhead) if args.fixed_overhead
                else cfg.models.get("fixed_overhead"))
    infeasible = False
    if gpu_ram is not None:
        if overhead is None:
            raise ConfigurationError(
                "--gpu-ram needs --fixed-overhead (or models."
                "fixed_overhead); use `vidpipe calibrate-memory` to fit it")
        for name, flags in MEMORY_MODES.items():
            modes[name]["max_batch_size"] = max_batch_size(
                vit, *flags, gpu_ram=gpu_ram, fixed_overhead=overhead,
                coeffs=coeffs)
        infeasible = modes[requested]["max_batch_size"] < 1

    payload = {"tokens": vit.tokens, "requested_mode": requested,
               "report": modes[requested], "modes": modes}
    if gpu_ram is not None:
        payload.update(gpu_ram_bytes=gpu_ram, fixed_overhead_bytes=overhead)

    if args.csv:
        _write_memory_csv(args.csv, modes)
    if args.plot:
        from . import plots
        plots.plot_memory(modes, args.plot)

    rep = modes[requested]
    lines = [f"N = {vit.tokens} tokens, mode {requested}",
             f"per video: layernorm {rep['layernorm_mb']:.2f} MB, "
             f"mha {rep['mha_mb']:.2f} MB, mlp {rep['mlp_mb']:.2f} MB, "
             f"total {rep['total_mb']:.2f} MB"]
    if gpu_ram is not None:
        lines.append(f"max batch size: {rep['max_batch_size']}")
    _emit(args, payload, "\n".join(lines))
    if infeasible:
        print("vidpipe plan-memory: no feasible batch size "
              f"(mode {requested})", file=sys.stderr)
        return 3
    return 0


def _write_memory_csv(path: str, modes: dict) -> None:
    import csv as _csv
    fields = ["mode", "layernorm_mb", "mha_mb", "mlp_mb", "total_mb",
              "max_batch_size"]
    with open(path, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for name, report in modes.items():
            writer.writerow(dict(report, mode=name))


def cmd_calibrate_memory(args, cfg: PipelineConfig) -> int:
    vit = cfg.vit_config(frames=args.frames, depth=args.depth,
                         dim=args.dim, heads=args.heads)
    overhead = calibrate_fixed_overhead(
        vit, args.flash, args.ckpt, parse_bytes(args.gpu_ram),
        args.observed_batch, cfg.memory_coefficients())
    payload = {"fixed_overhead_bytes": overhead,
               "fixed_overhead_human": format_bytes(overhead),
               "gpu_ram_bytes": parse_bytes(args.gpu_ram),
               "observed_batch": args.observed_batch,
               "flash": args.flash, "ckpt": args.ckpt}
    _emit(args, payload, f"{overhead:.0f}")
    return 0


def cmd_simulate_throughput(args, cfg: PipelineConfig) -> int:
    gpu_counts = ([int(g) for g in args.sweep_gpus.split(",")]
                  if args.sweep_gpus else [args.gpus])
    rows = []
    for gpus in gpu_counts:
        report = pipeline_throughput(PipelineProfile(
            num_gpus=gpus, per_gpu_rate=args.per_gpu,
            num_workers=args.workers, per_worker_rate=args.per_worker,
            read_speed=parse_bytes(args.read_speed),
            bits_per_clip=parse_bits(args.bits_per_clip)))
        rows.append(dict(report.to_dict(), label=f"{gpus} GPU",
                         num_gpus=gpus))
    if args.csv:
        import csv as _csv
        fields = ["num_gpus", "io", "cpu", "gpu", "end_to_end",
                  "bottleneck", "gpu_utilization"]
        with open(args.csv, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=fields,
                                     extrasaction="ignore")
            writer.writeheader()
            writer.writerows(rows)
    if args.plot:
        from . import plots
        plots.plot_throughput(rows, args.plot)
    payload = {"rows": rows} if len(rows) > 1 else rows[0]
    text = "\n".join(
        f"{r['label']}: end-to-end {r['end_to_end']:.2f} videos/s "
        f"(io {r['io']:.1f}, cpu {r['cpu']:.1f}, gpu {r['gpu']:.1f}; "
        f"bottleneck {r['bottleneck']}, "
        f"gpu util {r['gpu_utilization']:.0%})" for r in rows)
    _emit(args, payload, text)
    return 0


# ------------------------------------------------------------------- wiring

def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file (YAML)")
    common.add_argument("--json", action="store_true",
                        help="machine-readable output")

    parser = _Parser(prog="vidpipe",
                     description="video training data pipeline toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve-chunk-length", parents=[common],
                       help="max chunk seconds the IO budget admits")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--bitrate", help="avg clip bitrate, e.g. 1Mb")
    p.add_argument("--read-speed", help="storage read speed, e.g. 500MB")
    p.add_argument("--step-time", help="train step seconds, e.g. 4")
    p.add_argument("--margin", type=float, help="safety margin (default 0.9)")
    p.set_defaults(func=cmd_solve_chunk_length)

    p = sub.add_parser("chunk", parents=[common],
                       help="cut sources into fixed-length chunks")
    p.add_argument("--source", nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["reencode", "remux"])
    p.add_argument("--chunk-length", help="seconds per chunk; omit to solve")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--bitrate")
    p.add_argument("--read-speed")
    p.add_argument("--step-time")
    p.add_argument("--margin", type=float)
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("decode", parents=[common],
                       help="decode one clip request to a VPC1 tensor")
    p.add_argument("--chunk", required=True)
    p.add_argument("--start", required=True)
    p.add_argument("--end", required=True)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--crop", default="rrc",
                   help="'rrc', 'center' or 'x,y,w,h'")
    p.add_argument("--target", type=_size, default=(224, 224),
                   metavar="WxH")
    p.add_argument("--hflip", action="store_true")
    p.add_argument("--sampling", default="uniform_random",
                   choices=["uniform_random", "uniform_deterministic"])
    p.add_argument("--pipeline", default="fused",
                   choices=["fused", "reference"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("make-corpus", parents=[common],
                       help="synthesize a test-pattern clip corpus")
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--length", required=True, help="seconds per clip")
    p.add_argument("--resolution", default="320x256", metavar="WxH")
    p.add_argument("--bitrate", help="target bitrate (omit for crf)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fps", type=float, default=8.0)
    p.add_argument("--gop", type=float, default=1.0,
                   help="keyframe interval seconds")
    p.add_argument("--noise", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)

    loader_common = argparse.ArgumentParser(add_help=False)
    loader_common.add_argument("--manifest")
    loader_common.add_argument("--workers", type=int)
    loader_common.add_argument("--queue", type=int)
    loader_common.add_argument("--batch", type=int)
    loader_common.add_argument("--pipeline",
                               choices=["fused", "reference"])
    loader_common.add_argument("--policy",
                               choices=["fail_fast", "skip"])
    loader_common.add_argument("--frames", type=int,
                               help="frames per sample")
    loader_common.add_argument("--window", type=float,
                               help="sample window seconds")
    loader_common.add_argument("--seed", type=int, help="epoch seed")

    p = sub.add_parser("bench-loader", parents=[common, loader_common],
                       help="measure loader latency and throughput")
    p.add_argument("--samples", type=int, help="default: one epoch")
    p.add_argument("--duration", type=float, help="stop after seconds")
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--out", help="write the JSON report here too")
    p.add_argument("--dump-csv", help="per-sample rows for plotting")
    p.add_argument("--plot", help="render the report figure (PNG)")
    p.set_defaults(func=cmd_bench_loader)

    p = sub.add_parser("run-loader", parents=[common, loader_common],
                       help="stream loader batches to stdout")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--dump-ids", action="store_true",
                       help="JSON line per batch, ids only")
    group.add_argument("--stream", action="store_true",
                       help="length-prefixed JSON header + VPC1 per batch")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batches", type=int, help="stop after this many")
    p.set_defaults(func=cmd_run_loader)

    vit_common = argparse.ArgumentParser(add_help=False)
    vit_common.add_argument("--frames", type=int)
    vit_common.add_argument("--depth", type=int)
    vit_common.add_argument("--dim", type=int)
    vit_common.add_argument("--heads", type=int)
    vit_common.add_argument("--flash", action="store_true")
    vit_common.add_argument("--ckpt", action="store_true")

    p = sub.add_parser("plan-memory", parents=[common, vit_common],
                       help="activation memory and max batch size")
    p.add_argument("--gpu-ram", help="e.g. 24GB")
    p.add_argument("--fixed-overhead", help="bytes outside activations")
    p.add_argument("--csv", help="per-mode CSV")
    p.add_argument("--plot", help="render the memory figure (PNG)")
    p.set_defaults(func=cmd_plan_memory)

    p = sub.add_parser("calibrate-memory", parents=[common, vit_common],
                       help="fit fixed overhead from one observed batch")
    p.add_argument("--gpu-ram", required=True)
    p.add_argument("--observed-batch", type=int, required=True)
    p.set_defaults(func=cmd_calibrate_memory)

    p = sub.add_parser("simulate-throughput", parents=[common],
                       help="min() of io/cpu/gpu stage capacities")
    p.add_argument("--gpus", type=int, default=8)
    p.add_argument("--per-gpu", type=float, required=True,
                   help="videos/s per GPU")
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--per-worker", type=float, required=True,
                   help="videos/s per worker")
    p.add_argument("--read-speed", required=True, help="e.g. 1.25GB")
    p.add_argument("--bits-per-clip", required=True, help="e.g. 15Mb")
    p.add_argument("--sweep-gpus", help="comma list, e.g. 1,2,4,8")
    p.add_argument("--csv")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_simulate_throughput)

    parser.set_defaults(func=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("VIDPIPE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.func is None:
            parser.print_help(sys.stderr)
            return 1
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except VidpipeError as exc:
        print(f"vidpipe: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
