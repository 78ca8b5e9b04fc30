"""Fused decode-crop engine plus the decode-then-crop reference oracle.

The fused path seeks to the nearest prior keyframe per sampled timestamp,
decodes only the frames it must, and converts only the cropped region of
the frames it returns. The reference path decodes and materializes every
frame of the request's span at full size, then crops/flips/rescales as
array ops. Both funnel pixels through the same pinned scaler, so their
outputs are byte-identical; their work counters are the measurement of
interest.

Timestamp-to-frame rule: the frame shown at time t, i.e. the latest frame
with presentation time <= t (clamped to the first frame when t precedes
the stream).
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from . import _codec
from .errors import DecodeError, InputError, ProbeError, RangeError
from .rrc import (CropRect, FrameGeometry, SampleSeed, STREAM_TIMESTAMPS,
                  make_rng)

FRAME_SAMPLING_MODES = ("uniform_random", "uniform_deterministic")


@dataclass(frozen=True)
class ProbeResult:
    geometry: FrameGeometry
    duration: float
    fps: float
    codec: str
    bit_rate: int
    nb_frames: int
    start_time: float


@dataclass(frozen=True)
class ClipRequest:
    chunk_path: str
    local_start: float
    local_end: float
    num_frames: int
    crop: CropRect
    hflip: bool = False
    target_h: int = 224
    target_w: int = 224
    frame_sampling: str = "uniform_random"
    seed: SampleSeed = SampleSeed(0, 0, 0)
    base_seed: int = 0


@dataclass
class DecodedClip:
    frames: np.ndarray          # [num_frames, 3, target_h, target_w] uint8
    timestamps: list[float]     # requested sample times, sorted
    source: dict = field(default_factory=dict)

    @property
    def counters(self) -> dict:
        return self.source.get("counters", {})


def probe(chunk_path) -> ProbeResult:
    """Container metadata only; never instantiates a decoder."""
    try:
        meta = _codec.probe(chunk_path)
    except RuntimeError as exc:
        raise ProbeError(f"probe failed: {exc}") from exc
    return ProbeResult(
        geometry=FrameGeometry(int(meta["width"]), int(meta["height"])),
        duration=float(meta["duration"]), fps=float(meta["fps"]),
        codec=str(meta["codec"]), bit_rate=int(meta["bit_rate"]),
        nb_frames=int(meta["nb_frames"]),
        start_time=float(meta["start_time"]))


def select_timestamps(local_start: float, local_end: float, num_frames: int,
                      mode: str = "uniform_random",
                      seed: SampleSeed = SampleSeed(0, 0, 0),
                      base_seed: int = 0) -> list[float]:
    """Sample times within [local_start, local_end).

    uniform_random: num_frames i.i.d. U(start, end) draws, sorted.
    uniform_deterministic: midpoints of num_frames equal sub-intervals.
    """
    if local_start >= local_end:
        raise RangeError(f"empty span [{local_start}, {local_end})")
    if num_frames < 1:
        raise InputError(f"num_frames must be >= 1, got {num_frames}")
    if mode == "uniform_random":
        rng = make_rng(seed, base_seed, STREAM_TIMESTAMPS)
        return sorted(rng.uniform(local_start, local_end, num_frames).tolist())
    if mode == "uniform_deterministic":
        span = local_end - local_start
        return [local_start + (i + 0.5) * span / num_frames
                for i in range(num_frames)]
    raise InputError(f"unknown frame_sampling mode {mode!r}")


def _validate(request: ClipRequest, meta: ProbeResult) -> list[float]:
    if request.num_frames < 1:
        raise InputError("num_frames must be >= 1")
    if not (0 <= request.local_start < request.local_end):
        raise RangeError(
            f"bad span [{request.local_start}, {request.local_end})")
    if request.local_end > meta.duration + 1e-6:
        raise RangeError(
            f"span end {request.local_end} beyond chunk duration "
            f"{meta.duration}")
    if not request.crop.contained_in(meta.geometry):
        raise InputError(
            f"crop {request.crop} outside frame geometry "
            f"{meta.geometry.width}x{meta.geometry.height}")
    if request.target_h < 1 or request.target_w < 1:
        raise InputError("target size must be >= 1 pixel")
    return select_timestamps(request.local_start, request.local_end,
                             request.num_frames, request.frame_sampling,
                             request.seed, request.base_seed)


def _new_output(request: ClipRequest, out: np.ndarray | None) -> np.ndarray:
    shape = (request.num_frames, 3, request.target_h, request.target_w)
    if out is None:
        return np.empty(shape, dtype=np.uint8)
    if out.shape != shape or out.dtype != np.uint8:
        raise InputError(f"output buffer must be uint8 {shape}, "
                         f"got {out.dtype} {out.shape}")
    return out


def decode_fused(request: ClipRequest, thread_count: int = 1, *,
                 data: bytes | None = None, out: np.ndarray | None = None,
                 timings: dict | None = None) -> DecodedClip:
    """Decode only what the request needs, cropping inside the decode loop.

    Per sorted timestamp: jump (seek) only when an indexed keyframe lies
    strictly ahead of the current decode position, otherwise roll forward;
    this never re-decodes a frame and never reads outside
    [keyframe_before(first ts), frame covering last ts].

    Args:
        data: already-read file bytes; decode from memory instead of path.
        out: preallocated [num_frames, 3, target_h, target_w] uint8 buffer
            (e.g. a batch-buffer slot), written in place.
        timings: if given, accumulates decode/crop/collate stage seconds.
    """
    src = data if data is not None else request.chunk_path
    meta = probe(src)
    timestamps = _validate(request, meta)
    out = _new_output(request, out)
    rect = request.crop
    frame_pts: list[float] = []
    spans = {"decode": 0.0, "crop": 0.0, "collate": 0.0}

    reader = _codec.VideoReader(src, thread_count)
    try:
        reader.seek(timestamps[0])
        have = False
        for i, ts in enumerate(timestamps):
            t0 = perf_counter()
            try:
                while True:
                    if have:
                        pts = reader.last_pts()
                        if pts > ts:
                            break  # ts precedes first frame: clamp
                        if ts < pts + reader.last_frame_duration():
                            break  # current frame covers ts
                        kf = reader.keyframe_before(ts)
                        if kf > pts + 1e-9:
                            # a later keyframe reaches ts faster; skip ahead
                            reader.seek(ts)
                            have = False
                            continue
                    if not reader.advance():
                        break  # EOF: clamp to last decoded frame
                    have = True
                if not have:
                    raise DecodeError("no decodable frames in span",
                                      timestamp=ts)
                t1 = perf_counter()
                rgb = reader.current_rgb(rect.x, rect.y, rect.crop_w,
                                         rect.crop_h, request.hflip,
                                         request.target_w, request.target_h)
            except RuntimeError as exc:
                raise DecodeError(f"fused decode failed: {exc}",
                                  timestamp=ts) from exc
            t2 = perf_counter()
            out[i] = rgb.transpose(2, 0, 1)
            t3 = perf_counter()
            spans["decode"] += t1 - t0
            spans["crop"] += t2 - t1
            spans["collate"] += t3 - t2
            frame_pts.append(reader.last_pts())
        counters = dict(reader.counters())
    finally:
        reader.close()
    if timings is not None:
        timings.update(spans)

    return DecodedClip(
        frames=out, timestamps=timestamps,
        source={"chunk_path": request.chunk_path, "frame_pts": frame_pts,
                "counters": counters, "crop": rect, "hflip": request.hflip,
                "path": "fused"})


def decode_then_crop(request: ClipRequest, thread_count: int = 1, *,
                     data: bytes | None = None, out: np.ndarray | None = None,
                     timings: dict | None = None) -> DecodedClip:
    """Reference oracle: materialize every span frame at full size, then
    crop/flip/rescale as array ops.

    The span's frames are copied out plane-by-plane (the memory-traffic
    cost the fused path avoids); detecting the end of the span costs one
    decoded frame past it, except at end of stream. Keyword args as in
    decode_fused.
    """
    src = data if data is not None else request.chunk_path
    meta = probe(src)
    timestamps = _validate(request, meta)
    spans = {"decode": 0.0, "crop": 0.0, "collate": 0.0}

    t0 = perf_counter()
    reader = _codec.VideoReader(src, thread_count)
    mats: list[tuple[float, np.ndarray, np.ndarray, np.ndarray]] = []
    try:
        reader.seek(request.local_start)
        while True:
            try:
                more = reader.advance()
            except RuntimeError as exc:
                raise DecodeError(f"reference decode failed: {exc}",
                                  timestamp=reader.last_pts()) from exc
            if not more:
                break
            pts = reader.last_pts()
            if pts + reader.last_frame_duration() <= request.local_start:
                continue  # pre-roll from the seek keyframe; not in span
            if pts >= request.local_end:
                break  # first frame past the span ends the scan
            mats.append(reader.current_raw())
        counters = dict(reader.counters())
    finally:
        reader.close()
    spans["decode"] = perf_counter() - t0
    if not mats:
        raise DecodeError("no decodable frames in span",
                          timestamp=request.local_start)

    pts_list = [m[0] for m in mats]
    out = _new_output(request, out)
    frame_pts = []
    for i, ts in enumerate(timestamps):
        idx = max(0, bisect_right(pts_list, ts) - 1)
        pts, y, u, v = mats[idx]
        t1 = perf_counter()
        ys, us, vs = crop_planes(y, u, v, request.crop)
        rgb = _codec.yuv_to_rgb(ys, us, vs, request.hflip,
                                request.target_w, request.target_h)
        t2 = perf_counter()
        out[i] = rgb.transpose(2, 0, 1)
        spans["crop"] += t2 - t1
        spans["collate"] += perf_counter() - t2
        frame_pts.append(pts)
    if timings is not None:
        timings.update(spans)

    return DecodedClip(
        frames=out, timestamps=timestamps,
        source={"chunk_path": request.chunk_path, "frame_pts": frame_pts,
                "counters": counters, "crop": request.crop,
                "hflip": request.hflip, "path": "reference"})


def crop_planes(y: np.ndarray, u: np.ndarray, v: np.ndarray,
                rect: CropRect) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Crop YUV420 planes by view.

    Chroma rule (must mirror the fused path's pointer arithmetic): offsets
    floor-divide by 2, sizes are ceil(luma/2).
    """
    ys = y[rect.y:rect.y + rect.crop_h, rect.x:rect.x + rect.crop_w]
    cy, cx = rect.y // 2, rect.x // 2
    ch, cw = (rect.crop_h + 1) // 2, (rect.crop_w + 1) // 2
    return (ys, u[cy:cy + ch, cx:cx + cw], v[cy:cy + ch, cx:cx + cw])


def global_frames_decoded() -> int:
    """Process-wide decoded-frame counter (probe instrumentation)."""
    return int(_codec.global_frames_decoded())
