"""Chunk-length solving, boundary planning, and manifest plumbing.

The storage inequality B * rho * T <= S_r * Delta bounds how long a chunk
may be before a batch's worth of random chunk reads outruns the disk:
B clips per batch, rho bits/sec average bitrate, S_r bytes/sec read speed,
Delta seconds per optimizer step. Long sources are tiled into fixed-length
chunks cut by an external codec toolchain, and a line-delimited manifest
maps (source, time) to chunk files.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .errors import (ConfigurationError, DecodeError, RangeError, ToolError)

MANIFEST_SCHEMA_VERSION = 1

# Pinned invocation templates for the external toolchain; recorded in the
# manifest header so a chunking run can be reproduced byte-for-byte.
PROBE_TEMPLATE = "{tool} probe --src {src}"
CUT_TEMPLATE = ("{tool} cut --src {src} --dst {dst} --start {start:.6f} "
                "--end {end:.6f} --mode {mode}")


@dataclass(frozen=True)
class HardwareProfile:
    """Inputs to the chunk-length inequality."""

    batch_size: int        # B, clips per batch
    avg_bitrate: float     # rho, bits/sec
    read_speed: float      # S_r, bytes/sec
    step_time: float       # Delta, sec

    def validate(self) -> None:
        for name in ("batch_size", "avg_bitrate", "read_speed", "step_time"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(
                    f"profile field {name} must be positive, "
                    f"got {getattr(self, name)}")


@dataclass(frozen=True)
class ChunkPlan:
    source_id: str
    chunk_length: float
    boundaries: tuple[tuple[float, float], ...]

    @property
    def duration(self) -> float:
        return self.boundaries[-1][1] if self.boundaries else 0.0


@dataclass(frozen=True)
class ChunkRecord:
    source_id: str
    chunk_index: int
    chunk_path: str
    start_sec: float
    end_sec: float
    width: int
    height: int
    avg_bitrate: float
    keyframe_aligned: bool
    drift_sec: float = 0.0


@dataclass
class ChunkManifest:
    header: dict
    records: list[ChunkRecord] = field(default_factory=list)

    def by_source(self, source_id: str) -> list[ChunkRecord]:
        recs = sorted((r for r in self.records if r.source_id == source_id),
                      key=lambda r: r.chunk_index)
        if not recs:
            raise RangeError(f"unknown source_id {source_id!r}")
        return recs

    def source_ids(self) -> list[str]:
        return sorted({r.source_id for r in self.records})


def solve_chunk_length(profile: HardwareProfile,
                       safety_margin: float = 0.9) -> float:
    """Largest chunk length T with B*rho*T <= margin * S_r * Delta.

    read_speed is bytes/sec and avg_bitrate is bits/sec; the factor of 8
    reconciles them. margin < 1 leaves headroom for read-speed jitter.
    """
    profile.validate()
    if not (0 < safety_margin <= 1):
        raise ConfigurationError(
            f"safety_margin {safety_margin} outside (0, 1]")
    return (safety_margin * profile.read_speed * 8.0 * profile.step_time
            / (profile.batch_size * profile.avg_bitrate))


def plan_chunks(duration: float, chunk_length: float,
                source_id: str = "") -> ChunkPlan:
    """Tile [0, duration) with chunk_length pieces; the tail keeps its
    natural (shorter) length rather than being dropped or padded."""
    if duration <= 0:
        raise ConfigurationError(f"duration must be positive, got {duration}")
    if chunk_length <= 0:
        raise ConfigurationError(
            f"chunk_length must be positive, got {chunk_length}")
    n = max(1, math.ceil(duration / chunk_length - 1e-9))
    boundaries = []
    for i in range(n):
        start = i * chunk_length
        end = min((i + 1) * chunk_length, duration)
        boundaries.append((start, end))
    return ChunkPlan(source_id=source_id, chunk_length=chunk_length,
                     boundaries=tuple(boundaries))


def toolchain_command() -> list[str]:
    """External codec binary; overridable via VIDPIPE_CODEC_BIN."""
    override = os.environ.get("VIDPIPE_CODEC_BIN")
    if override:
        return shlex.split(override)
    return [sys.executable, "-m", "vidpipe.codec_tool"]


def _run_tool(template: str, **fields) -> dict:
    tool = " ".join(shlex.quote(p) for p in toolchain_command())
    cmd = shlex.split(template.format(tool=tool, **fields))
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ToolError(
            f"toolchain exited {proc.returncode}: {proc.stderr.strip()}")
    try:
        return json.loads(proc.stdout)
    except json.JSONDecodeError as exc:
        raise ToolError(f"toolchain emitted non-JSON output: {exc}") from exc


def probe_source(source_path: str) -> dict:
    return _run_tool(PROBE_TEMPLATE, src=source_path)


def chunk_video(source_path: str, plan: ChunkPlan, mode: str, out_dir: str,
                max_workers: int = 4) -> list[ChunkRecord]:
    """Cut one source into chunk files via the external toolchain.

    remux copies packets (fast, boundaries snap to keyframes, drift
    reported per chunk); reencode cuts exactly on frame boundaries and
    every chunk starts with a fresh keyframe. Cut jobs run in a bounded
    pool; each job is an independent process.
    """
    if mode not in ("remux", "reencode"):
        raise ConfigurationError(f"unknown chunk mode {mode!r}")
    if not plan.boundaries:
        return []
    os.makedirs(out_dir, exist_ok=True)
    try:
        src_meta = probe_source(source_path)
    except ToolError as exc:
        raise DecodeError(f"cannot probe {source_path}: {exc}",
                          sample_id=plan.source_id) from exc

    def cut_one(item: tuple[int, tuple[float, float]]) -> ChunkRecord:
        index, (start, end) = item
        dst = os.path.join(out_dir, f"{plan.source_id}_{index:05d}.mp4")
        try:
            info = _run_tool(CUT_TEMPLATE, src=source_path, dst=dst,
                             start=start, end=end, mode=mode)
            chunk_meta = probe_source(dst)
        except ToolError as exc:
            raise DecodeError(
                f"chunk {index} of {plan.source_id} failed: {exc}",
                sample_id=plan.source_id) from exc
        return ChunkRecord(
            source_id=plan.source_id, chunk_index=index, chunk_path=dst,
            start_sec=start, end_sec=end,
            width=int(chunk_meta["width"]), height=int(chunk_meta["height"]),
            avg_bitrate=float(chunk_meta["bit_rate"] or src_meta["bit_rate"]),
            keyframe_aligned=bool(info.get("keyframe_aligned", False)),
            drift_sec=float(info.get("drift", 0.0)))

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        records = list(pool.map(cut_one, enumerate(plan.boundaries)))
    return records


def manifest_header(tool_template: str = CUT_TEMPLATE) -> dict:
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "vidpipe-chunk-manifest",
        "tool": " ".join(toolchain_command()),
        "tool_template": tool_template,
        "created_unix": int(time.time()),
    }


def write_manifest(path: str, records: list[ChunkRecord],
                   header: dict | None = None) -> None:
    """Line-delimited JSON, header line first, records sorted by
    (source_id, chunk_index); append-friendly for incremental runs."""
    header = header or manifest_header()
    ordered = sorted(records, key=lambda r: (r.source_id, r.chunk_index))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in ordered:
            fh.write(json.dumps(asdict(rec)) + "\n")


def load_manifest(path: str) -> ChunkManifest:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError(f"manifest {path} is empty")
    header = json.loads(lines[0])
    version = header.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise ConfigurationError(
            f"manifest schema_version {version} unsupported "
            f"(expected {MANIFEST_SCHEMA_VERSION})")
    records = [ChunkRecord(**json.loads(ln)) for ln in lines[1:]]
    manifest = ChunkManifest(header=header, records=records)
    _validate_manifest(manifest)
    return manifest


def _validate_manifest(manifest: ChunkManifest) -> None:
    for sid in manifest.source_ids():
        recs = manifest.by_source(sid)
        for i, rec in enumerate(recs):
            if rec.chunk_index != i:
                raise ConfigurationError(
                    f"source {sid}: chunk indices not dense at {i}")
            if i and abs(rec.start_sec - recs[i - 1].end_sec) > 1e-6:
                raise ConfigurationError(
                    f"source {sid}: gap/overlap at chunk {i}")


def locate(manifest: ChunkManifest, source_id: str, t_start: float,
           t_end: float) -> list[tuple[str, float, float]]:
    """Minimal chunk cover of [t_start, t_end) with chunk-local times.

    A span that fits inside one chunk returns a single entry; spans
    straddling boundaries return each covering chunk in order.
    """
    if t_start >= t_end:
        raise RangeError(f"empty span [{t_start}, {t_end})")
    recs = manifest.by_source(source_id)
    duration = recs[-1].end_sec
    if t_start < 0 or t_end > duration + 1e-9:
        raise RangeError(
            f"span [{t_start}, {t_end}) outside [0, {duration}) "
            f"of source {source_id!r}")
    out = []
    for rec in recs:
        if rec.start_sec < t_end and rec.end_sec > t_start:
            out.append((rec.chunk_path,
                        max(t_start, rec.start_sec) - rec.start_sec,
                        min(t_end, rec.end_sec) - rec.start_sec))
    return out
