"""Multi-worker clip loader with bounded buffering, plus its benchmark.

Workers are threads rather than processes: the decode extension drops the
GIL inside libav calls, so decode parallelism survives threading, and
clips can be collated zero-copy into shared batch buffers instead of being
pickled across process boundaries. The contract is stated purely in terms
of independent workers exchanging clips through a bounded buffer, so the
choice is swappable.

Scheduling is deterministic: an epoch is a seeded permutation of the
dataset, position p of the permutation goes to worker p mod M and lands in
batch p // B, slot p mod B. Batch buffers form a ring sized to the queue
capacity; a worker may only start position p once the ring slot for its
batch has been released by the consumer, which is what bounds buffered
clips (backpressure). Thread scheduling can reorder execution but never
placement, so iteration order depends only on (epoch_seed, epoch).
"""

from __future__ import annotations

import csv
import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter
from typing import Callable, Iterator

import numpy as np

from .chunking import ChunkRecord, load_manifest
from .decoder import ClipRequest, decode_fused, decode_then_crop
from .errors import (ConfigurationError, DecodeError, InputError,
                     VidpipeError)
from .rrc import (STREAM_WINDOW, FrameGeometry, RrcParams, SampleSeed,
                  make_rng, sample_crop, sample_hflip)

log = logging.getLogger("vidpipe.loader")

PIPELINES = ("fused", "reference")
ERROR_POLICIES = ("fail_fast", "skip")


@dataclass(frozen=True)
class SamplingSpec:
    """What one training sample looks like: a short window of the chunk,
    num_frames draws within it, one crop + flip applied to all frames."""

    num_frames: int = 4
    window_seconds: float = 1.0
    frame_sampling: str = "uniform_random"
    hflip_prob: float = 0.5
    rrc: RrcParams = RrcParams()

    def validate(self) -> None:
        if self.num_frames < 1:
            raise ConfigurationError("num_frames must be >= 1")
        if self.window_seconds <= 0:
            raise ConfigurationError("window_seconds must be > 0")
        if not (0 <= self.hflip_prob <= 1):
            raise ConfigurationError("hflip_prob outside [0, 1]")
        self.rrc.validate()


@dataclass(frozen=True)
class LoaderConfig:
    manifest_path: str
    num_workers: int = 8
    queue_capacity: int = 16
    batch_size: int = 8
    epoch_seed: int = 0
    pipeline: str = "fused"
    sampling: SamplingSpec = SamplingSpec()
    error_policy: str = "fail_fast"
    base_seed: int = 0
    # test instrumentation: called (worker_id, sample_id) before each decode;
    # an exception simulates that worker dying mid-epoch
    fault_hook: Callable[[int, int], None] | None = None

    def validate(self) -> None:
        if self.num_workers < 1:
            raise ConfigurationError("num_workers must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.queue_capacity < self.batch_size:
            raise ConfigurationError(
                f"queue_capacity {self.queue_capacity} < batch_size "
                f"{self.batch_size}")
        if self.pipeline not in PIPELINES:
            raise ConfigurationError(f"unknown pipeline {self.pipeline!r}")
        if self.error_policy not in ERROR_POLICIES:
            raise ConfigurationError(
                f"unknown error_policy {self.error_policy!r}")
        self.sampling.validate()


@dataclass
class Batch:
    """One collated batch.

    frames is a view into a reused ring buffer: it is valid until the next
    batch is requested, then rewritten. Copy it if it must outlive the
    iteration step. When samples were skipped (error policy "skip"),
    frames holds only the surviving samples, in slot order, and is a copy.
    """

    frames: np.ndarray            # [B_eff, T, 3, target_h, target_w] uint8
    sample_ids: list[int]         # manifest indices, permutation order
    timestamps: list[list[float]]
    epoch: int
    batch_index: int
    skipped_ids: list[int] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)   # per surviving sample
    queue_high_water_mark: int = 0


@dataclass
class _Token:
    batch: int
    slot: int
    sample_id: int
    worker_id: int
    ok: bool
    error: BaseException | None = None
    skip_reason: str | None = None
    timestamps: list[float] | None = None
    timing: dict | None = None
    t_begin: float = 0.0
    t_done: float = 0.0


class _Shared:
    def __init__(self, window: int) -> None:
        self.cond = threading.Condition()
        self.tokens: queue.Queue[_Token] = queue.Queue()
        self.window = window
        self.released = 0        # batches whose ring slot may be rewritten
        self.stop = False
        self.buffered = 0        # decoded clips not yet handed to consumer
        self.high_water_mark = 0


def _decode_sample(config: LoaderConfig, record: ChunkRecord, sample_id: int,
                   epoch: int, worker_id: int,
                   out_slot: np.ndarray) -> _Token:
    spec = config.sampling
    seed = SampleSeed(epoch=epoch, worker_id=worker_id,
                      sample_index=sample_id)
    t0 = perf_counter()
    try:
        data = Path(record.chunk_path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"sample {sample_id}: cannot read "
                          f"{record.chunk_path}: {exc}",
                          sample_id=sample_id) from exc
    t_read = perf_counter() - t0

    geometry = FrameGeometry(record.width, record.height)
    crop = sample_crop(geometry, spec.rrc, seed, config.base_seed)
    flip = sample_hflip(seed, config.base_seed, spec.hflip_prob)
    duration = record.end_sec - record.start_sec
    window = min(spec.window_seconds, duration)
    start = 0.0
    if duration - window > 1e-9:
        rng = make_rng(seed, config.base_seed, STREAM_WINDOW)
        start = float(rng.uniform(0.0, duration - window))
    request = ClipRequest(
        chunk_path=record.chunk_path, local_start=start,
        local_end=start + window, num_frames=spec.num_frames, crop=crop,
        hflip=flip, target_h=spec.rrc.target_h, target_w=spec.rrc.target_w,
        frame_sampling=spec.frame_sampling, seed=seed,
        base_seed=config.base_seed)
    decode = decode_fused if config.pipeline == "fused" else decode_then_crop
    timing: dict = {}
    try:
        clip = decode(request, data=data, out=out_slot, timings=timing)
    except VidpipeError as exc:
        # unify probe/decode/range failures: per-clip data errors always
        # carry the sample id
        raise DecodeError(f"sample {sample_id} ({record.source_id}): {exc}",
                          timestamp=getattr(exc, "timestamp", None),
                          sample_id=sample_id) from exc
    timing["read"] = t_read
    timing["counters"] = clip.counters
    return _Token(batch=0, slot=0, sample_id=sample_id, worker_id=worker_id,
                  ok=True, timestamps=clip.timestamps, timing=timing)


def _worker_loop(worker_id: int, config: LoaderConfig,
                 records: list[ChunkRecord], perm: np.ndarray, epoch: int,
                 buffers: list[np.ndarray], shared: _Shared) -> None:
    n, batch = len(perm), config.batch_size
    positions = list(range(worker_id, n, config.num_workers))
    i = 0
    try:
        while i < len(positions):
            p = positions[i]
            b, slot = divmod(p, batch)
            t_wait = perf_counter()
            with shared.cond:
                while not shared.stop and b >= shared.released + shared.window:
                    shared.cond.wait(0.1)
                if shared.stop:
                    return
            sample_id = int(perm[p])
            t_begin = perf_counter()
            if config.fault_hook is not None:
                config.fault_hook(worker_id, sample_id)
            out_slot = buffers[b % shared.window][slot]
            try:
                token = _decode_sample(config, records[sample_id], sample_id,
                                       epoch, worker_id, out_slot)
            except VidpipeError as exc:
                token = _Token(batch=b, slot=slot, sample_id=sample_id,
                               worker_id=worker_id, ok=False)
                if config.error_policy == "fail_fast":
                    token.error = exc
                    shared.tokens.put(token)
                    return
                log.warning("skipping sample %d: %s", sample_id, exc)
                token.skip_reason = str(exc)
                shared.tokens.put(token)
                i += 1
                continue
            token.batch, token.slot = b, slot
            token.t_begin = t_begin
            token.t_done = perf_counter()
            token.timing["wait"] = t_begin - t_wait
            with shared.cond:
                shared.buffered += 1
                shared.high_water_mark = max(shared.high_water_mark,
                                             shared.buffered)
            shared.tokens.put(token)
            i += 1
    except BaseException as exc:  # noqa: BLE001 — a dying worker must report
        log.error("worker %d died: %s", worker_id, exc)
        if not positions:
            return
        if config.error_policy == "fail_fast":
            p = positions[min(i, len(positions) - 1)]
            shared.tokens.put(_Token(
                batch=p // batch, slot=p % batch, sample_id=int(perm[p]),
                worker_id=worker_id, ok=False, error=exc))
            return
        # drain the remaining assignments as skipped so that batch
        # completion counting, and therefore the epoch, still terminates
        for p in positions[i:]:
            shared.tokens.put(_Token(
                batch=p // batch, slot=p % batch, sample_id=int(perm[p]),
                worker_id=worker_id, ok=False,
                skip_reason=f"worker {worker_id} died: {exc}"))


def _shutdown(shared: _Shared, threads: list[threading.Thread]) -> None:
    with shared.cond:
        shared.stop = True
        shared.cond.notify_all()
    for t in threads:
        t.join(timeout=60.0)


def _run_epoch(config: LoaderConfig, records: list[ChunkRecord],
               epoch: int) -> Iterator[Batch]:
    n, batch_size = len(records), config.batch_size
    n_batches = math.ceil(n / batch_size)
    spec = config.sampling
    window = max(1, min(config.queue_capacity // batch_size, n_batches))
    buffers = [np.empty((batch_size, spec.num_frames, 3, spec.rrc.target_h,
                         spec.rrc.target_w), dtype=np.uint8)
               for _ in range(window)]
    seq = np.random.SeedSequence((config.epoch_seed, epoch))
    perm = np.random.Generator(np.random.Philox(seq)).permutation(n)
    shared = _Shared(window)
    threads = [
        threading.Thread(target=_worker_loop, name=f"vidpipe-loader-w{w}",
                         args=(w, config, records, perm, epoch, buffers,
                               shared), daemon=True)
        for w in range(config.num_workers)]
    for t in threads:
        t.start()

    pending: dict[int, list[_Token]] = {b: [] for b in range(n_batches)}
    try:
        for b in range(n_batches):
            expected = min(batch_size, n - b * batch_size)
            while len(pending[b]) < expected:
                try:
                    token = shared.tokens.get(timeout=0.5)
                except queue.Empty:
                    if any(t.is_alive() for t in threads):
                        continue
                    raise RuntimeError(
                        "all workers exited before the epoch completed")
                if token.error is not None:
                    if isinstance(token.error, VidpipeError):
                        raise token.error
                    raise DecodeError(
                        f"worker {token.worker_id} died on sample "
                        f"{token.sample_id}: {token.error}",
                        sample_id=token.sample_id)
                pending[token.batch].append(token)
            tokens = sorted(pending.pop(b), key=lambda t: t.slot)
            ok = [t for t in tokens if t.ok]
            skipped = [t for t in tokens if not t.ok]
            if skipped:
                log.warning("epoch %d batch %d: missing sample ids %s",
                            epoch, b, [t.sample_id for t in skipped])
                frames = buffers[b % window][[t.slot for t in ok]]
            else:
                frames = buffers[b % window][:expected]
            with shared.cond:
                shared.buffered -= len(ok)
                hwm = shared.high_water_mark
            yield Batch(
                frames=frames, sample_ids=[t.sample_id for t in ok],
                timestamps=[t.timestamps for t in ok], epoch=epoch,
                batch_index=b, skipped_ids=[t.sample_id for t in skipped],
                timings=[_token_timing(t) for t in ok],
                queue_high_water_mark=hwm)
            with shared.cond:
                shared.released += 1
                shared.cond.notify_all()
    finally:
        _shutdown(shared, threads)


def _token_timing(token: _Token) -> dict:
    timing = dict(token.timing or {})
    timing.update(worker_id=token.worker_id, t_begin=token.t_begin,
                  t_done=token.t_done,
                  latency=token.t_done - token.t_begin)
    return timing


def run_loader(config: LoaderConfig, epochs: int = 1) -> Iterator[Batch]:
    """Yield collated batches; every sample exactly once per epoch.

    Iteration order is a pure function of (epoch_seed, epoch); at most
    queue_capacity decoded clips are buffered at any time. Closing the
    generator stops all workers within about one clip-decode duration.
    Per-clip decode failures follow config.error_policy: "fail_fast"
    re-raises with the sample id, "skip" logs and yields a thinner batch.
    """
    config.validate()
    if epochs < 1:
        raise ConfigurationError("epochs must be >= 1")
    records = load_manifest(config.manifest_path).records
    if not records:
        raise InputError(f"dataset {config.manifest_path} is empty")
    for epoch in range(epochs):
        yield from _run_epoch(config, records, epoch)


@dataclass
class BenchReport:
    """Steady-state loader measurements (warm-up excluded).

    total_videos_per_sec is measured wall-clock at the consumer;
    per_worker_videos_per_sec is each worker's rate over its own busy
    window, so total <= num_workers * max(per-worker) up to timer jitter.
    Stage means cover read/decode/crop/collate; queueing time appears only
    in wait_ms_mean, so the stages sum to <= latency_ms_mean.
    """

    schema_version: int
    pipeline: str
    num_workers: int
    batch_size: int
    queue_capacity: int
    samples_measured: int
    samples_warmup: int
    wall_time_sec: float
    latency_ms: dict
    stage_ms: dict
    wait_ms_mean: float
    per_worker_videos_per_sec: dict
    per_worker_mean: float
    total_videos_per_sec: float
    decoder_counters: dict
    queue_high_water_mark: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


_CSV_FIELDS = ["seq", "warmup", "epoch", "batch", "worker_id", "sample_id",
               "t_begin_s", "latency_ms", "wait_ms", "read_ms", "decode_ms",
               "crop_ms", "collate_ms", "frames_decoded", "packets_read",
               "bytes_read", "seeks"]


def run_benchmark(config: LoaderConfig, sample_count: int | None = None,
                  duration_sec: float | None = None,
                  warmup_fraction: float = 0.1,
                  dump_csv: str | None = None) -> BenchReport:
    """Measure the loader end to end and aggregate a BenchReport.

    Stops after sample_count samples (default: one epoch) or duration_sec,
    whichever comes first. The first warmup_fraction of completions is
    excluded from every reported statistic but still written to the CSV
    dump (flagged) when dump_csv is given.
    """
    config.validate()
    if not (0 <= warmup_fraction < 1):
        raise ConfigurationError(
            f"warmup_fraction {warmup_fraction} outside [0, 1)")
    n = len(load_manifest(config.manifest_path).records)
    if n == 0:
        raise InputError(f"dataset {config.manifest_path} is empty")
    if sample_count is None:
        sample_count = n
    if sample_count < 1:
        raise ConfigurationError("sample_count must be >= 1")

    rows: list[dict] = []
    hwm = 0
    t_bench = perf_counter()
    stream = run_loader(config, epochs=math.ceil(sample_count / n))
    try:
        for batch in stream:
            hwm = max(hwm, batch.queue_high_water_mark)
            for sid, timing in zip(batch.sample_ids, batch.timings):
                rows.append(dict(timing, sample_id=sid, epoch=batch.epoch,
                                 batch=batch.batch_index))
            if len(rows) >= sample_count:
                break
            if (duration_sec is not None
                    and perf_counter() - t_bench >= duration_sec):
                break
    finally:
        stream.close()

    rows.sort(key=lambda r: r["t_done"])
    rows = rows[:sample_count]
    # warm-up is defined against the requested length, so a run truncated
    # by duration_sec can fail to outlast it
    n_warm = int(sample_count * warmup_fraction)
    steady = rows[n_warm:]
    if not steady:
        raise ConfigurationError(
            f"benchmark collected {len(rows)} samples, shorter than its "
            f"warm-up ({n_warm})")

    lat = np.array([r["latency"] for r in steady]) * 1e3
    stage_ms = {s: float(np.mean([r[s] for r in steady]) * 1e3)
                for s in ("read", "decode", "crop", "collate")}
    per_worker: dict[int, float] = {}
    for w in sorted({r["worker_id"] for r in steady}):
        mine = [r for r in steady if r["worker_id"] == w]
        span = max(r["t_done"] for r in mine) - min(r["t_begin"] for r in mine)
        per_worker[w] = len(mine) / span if span > 0 else float("inf")
    span = (max(r["t_done"] for r in steady)
            - min(r["t_begin"] for r in steady))
    counters: dict[str, int] = {}
    for r in steady:
        for k, v in r.get("counters", {}).items():
            counters[k] = counters.get(k, 0) + int(v)

    if dump_csv:
        _write_csv(dump_csv, rows, n_warm)

    finite = [v for v in per_worker.values() if math.isfinite(v)]
    return BenchReport(
        schema_version=1, pipeline=config.pipeline,
        num_workers=config.num_workers, batch_size=config.batch_size,
        queue_capacity=config.queue_capacity, samples_measured=len(steady),
        samples_warmup=n_warm, wall_time_sec=float(span),
        latency_ms={"p50": float(np.percentile(lat, 50)),
                    "p90": float(np.percentile(lat, 90)),
                    "mean": float(np.mean(lat))},
        stage_ms=stage_ms,
        wait_ms_mean=float(np.mean([r.get("wait", 0.0) for r in steady])
                           * 1e3),
        per_worker_videos_per_sec={str(k): v for k, v in per_worker.items()},
        per_worker_mean=float(np.mean(finite)) if finite else 0.0,
        total_videos_per_sec=len(steady) / span if span > 0 else float("inf"),
        decoder_counters=counters, queue_high_water_mark=hwm)


def _write_csv(path: str, rows: list[dict], n_warm: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for seq, r in enumerate(rows):
            c = r.get("counters", {})
            writer.writerow({
                "seq": seq, "warmup": int(seq < n_warm), "epoch": r["epoch"],
                "batch": r["batch"], "worker_id": r["worker_id"],
                "sample_id": r["sample_id"], "t_begin_s": f"{r['t_begin']:.6f}",
                "latency_ms": f"{r['latency'] * 1e3:.3f}",
                "wait_ms": f"{r.get('wait', 0.0) * 1e3:.3f}",
                "read_ms": f"{r['read'] * 1e3:.3f}",
                "decode_ms": f"{r['decode'] * 1e3:.3f}",
                "crop_ms": f"{r['crop'] * 1e3:.3f}",
                "collate_ms": f"{r['collate'] * 1e3:.3f}",
                "frames_decoded": c.get("frames_decoded", 0),
                "packets_read": c.get("packets_read", 0),
                "bytes_read": c.get("bytes_read", 0),
                "seeks": c.get("seeks", 0)})
