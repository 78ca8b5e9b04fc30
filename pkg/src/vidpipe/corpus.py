"""Synthetic timestamp-pattern corpus for decoder and loader tests.

Every frame carries its own frame index and clip id as black/white bit
blocks, so a decoded pixel block proves which frame the decoder actually
returned. A grayscale column gradient provides horizontal asymmetry for
flip checks (grayscale survives chroma subsampling exactly), and an
optional seeded-noise band gives the rate controller real entropy so
target bitrates are honored.
"""

from __future__ import annotations

import json
import logging
import os
from fractions import Fraction

import numpy as np

from . import _codec
from .chunking import (ChunkRecord, MANIFEST_SCHEMA_VERSION, manifest_header,
                       write_manifest)
from .errors import ConfigurationError, ToolError

log = logging.getLogger(__name__)

MARKER_ROWS = 48          # two 16px bit rows + 16px gradient band
_BITS = 16


def render_pattern_frame(clip_id: int, frame_idx: int, width: int,
                         height: int, noise: float = 0.0,
                         seed: int = 0) -> np.ndarray:
    """One [height, width, 3] uint8 pattern frame."""
    if width < 64 or height < MARKER_ROWS + 16:
        raise ConfigurationError(
            f"pattern needs at least 64x{MARKER_ROWS + 16}, "
            f"got {width}x{height}")
    frame = np.empty((height, width, 3), dtype=np.uint8)

    xx = np.arange(width, dtype=np.int32)
    yy = np.arange(height, dtype=np.int32)[:, None]
    # moving color field fills everything, marker bands overwrite below
    frame[:, :, 0] = ((xx * 2 + frame_idx * 5) % 256).astype(np.uint8)
    frame[:, :, 1] = ((yy * 2 + frame_idx * 3) % 256).astype(np.uint8)
    frame[:, :, 2] = ((xx + yy) % 256).astype(np.uint8)

    for row, value in ((0, frame_idx), (16, clip_id)):
        bits = [(value >> (_BITS - 1 - i)) & 1 for i in range(_BITS)]
        edges = np.linspace(0, width, _BITS + 1).astype(int)
        for i, bit in enumerate(bits):
            frame[row:row + 16, edges[i]:edges[i + 1]] = 255 if bit else 0
    # grayscale column ramp: asymmetric, immune to chroma interpolation
    ramp = np.round(255.0 * xx / (width - 1)).astype(np.uint8)
    frame[32:48, :, :] = ramp[None, :, None]

    if noise > 0:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(
                (seed, clip_id, frame_idx))))
        band = frame[MARKER_ROWS:, :, :].astype(np.int16)
        amp = int(noise * 64)
        band += rng.integers(-amp, amp + 1, band.shape, dtype=np.int16)
        frame[MARKER_ROWS:, :, :] = np.clip(band, 0, 255).astype(np.uint8)
    return frame


def decode_baked_markers(rgb: np.ndarray) -> tuple[int, int]:
    """Recover (frame_idx, clip_id) from a decoded full frame."""
    height, width = rgb.shape[:2]
    if height < 32:
        raise ValueError("frame too short to carry markers")
    values = []
    edges = np.linspace(0, width, _BITS + 1).astype(int)
    for row in (0, 16):
        bits = 0
        for i in range(_BITS):
            x0, x1 = edges[i], edges[i + 1]
            block = rgb[row + 4:row + 12, x0 + 1:x1 - 1, :]
            bits = (bits << 1) | int(block.mean() > 127)
        values.append(bits)
    return values[0], values[1]


def write_pattern_clip(out_path: str, clip_id: int = 0,
                       length_sec: float = 15.0, width: int = 320,
                       height: int = 256, fps: float = 8.0,
                       bit_rate: int = 0, crf: int = -1,
                       gop_seconds: float = 1.0, noise: float = 0.0,
                       seed: int = 0) -> dict:
    """Encode one pattern clip; returns probe-style metadata of the result."""
    if bit_rate <= 0 and crf < 0:
        crf = 23
    frac = Fraction(fps).limit_denominator(10_000)
    n_frames = round(length_sec * fps)
    gop = max(1, round(fps * gop_seconds))
    writer = _codec.VideoWriter(out_path, width, height, frac.numerator,
                                frac.denominator, codec="libx264",
                                bit_rate=bit_rate, gop=gop, crf=crf,
                                preset="veryfast")
    try:
        for i in range(n_frames):
            writer.write_rgb(render_pattern_frame(clip_id, i, width, height,
                                                  noise, seed))
    finally:
        writer.close()
    meta = dict(_codec.probe(out_path))
    meta.update(path=out_path, frames=n_frames, clip_id=clip_id, gop=gop,
                size_bytes=os.path.getsize(out_path))
    return meta


def make_synthetic_corpus(n_clips: int, length_sec: float,
                          resolution: tuple[int, int], bitrate: int,
                          out_dir: str, fps: float = 8.0,
                          gop_seconds: float = 1.0, noise: float = 0.6,
                          seed: int = 0) -> str:
    """Encode n_clips pattern chunks plus a chunk manifest; returns the
    manifest path. Each clip is a single self-contained chunk record."""
    if n_clips < 0:
        raise ConfigurationError("n_clips must be >= 0")
    os.makedirs(out_dir, exist_ok=True)
    width, height = resolution
    records = []
    for i in range(n_clips):
        path = os.path.join(out_dir, f"clip{i:05d}.mp4")
        try:
            meta = write_pattern_clip(
                path, clip_id=i, length_sec=length_sec, width=width,
                height=height, fps=fps, bit_rate=bitrate,
                gop_seconds=gop_seconds, noise=noise, seed=seed)
        except RuntimeError as exc:
            raise ToolError(f"encode failed for clip {i}: {exc}") from exc
        records.append(ChunkRecord(
            source_id=f"clip{i:05d}", chunk_index=0, chunk_path=path,
            start_sec=0.0, end_sec=length_sec, width=width, height=height,
            avg_bitrate=float(meta["bit_rate"]), keyframe_aligned=True))
        if n_clips >= 64 and (i + 1) % max(1, n_clips // 8) == 0:
            log.info("corpus: %d/%d clips encoded", i + 1, n_clips)

    header = manifest_header()
    header.update(kind="vidpipe-chunk-manifest", corpus=True,
                  n_clips=n_clips, length_sec=length_sec, fps=fps,
                  width=width, height=height, bitrate=bitrate, noise=noise,
                  seed=seed)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(manifest_path, records, header)
    return manifest_path


def corpus_size_bytes(manifest_path: str) -> int:
    """Total encoded bytes across all chunks in a manifest."""
    total = 0
    with open(manifest_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = json.loads(lines[0])
    if header.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ConfigurationError("unsupported manifest schema")
    for line in lines[1:]:
        rec = json.loads(line)
        total += os.path.getsize(rec["chunk_path"])
    return total
