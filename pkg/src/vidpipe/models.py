"""Analytical planners: ViT activation memory and pipeline throughput.

Memory model: symbolic per-layer accounting of the tensors saved for the
backward pass. Per layer of depth L over N tokens of dim D (bytes_per_elem
precision b):

    layernorm  c_ln  * N * D * b
    mlp        c_mlp * mlp_ratio * N * D * b
    mha        c_attn * heads * N^2 * b        (plain attention)
               c_flash * N * (D + heads) * b   (memory-efficient attention)

Coefficients enumerate saved intermediates (defaults documented on
MemoryCoefficients) and are deliberately configurable: published
measurements bundle implementation detail the formulas cannot recover, so
absolute magnitudes are calibrated while scaling laws are exact. Gradient
checkpointing multiplies the per-layer total by sqrt(L) instead of L; this
continuous form reproduces published checkpointed/uncheckpointed ratios
exactly, which an integer segment count does not.

Throughput model: steady state, queueing-free — each stage is a capacity
in videos/sec and the pipeline runs at the min.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError

MB = 1e6  # reports use decimal megabytes


@dataclass(frozen=True)
class VitConfig:
    """Input/patch geometry and transformer shape.

    Token count N = (frames/cube_t) * (height/cube_h) * (width/cube_w)
    + extra_tokens.
    """

    frames: int = 4
    height: int = 224
    width: int = 224
    cube_t: int = 1
    cube_h: int = 16
    cube_w: int = 16
    depth: int = 12
    dim: int = 768
    heads: int = 12
    bytes_per_elem: int = 2
    mlp_ratio: float = 4.0
    extra_tokens: int = 1

    def validate(self) -> None:
        for name in ("frames", "height", "width", "cube_t", "cube_h",
                     "cube_w", "depth", "dim", "heads", "bytes_per_elem"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if (self.frames % self.cube_t or self.height % self.cube_h
                or self.width % self.cube_w):
            raise ConfigurationError(
                f"input {self.frames}x{self.height}x{self.width} not "
                f"divisible by cube {self.cube_t}x{self.cube_h}x"
                f"{self.cube_w}")
        if self.mlp_ratio <= 0:
            raise ConfigurationError("mlp_ratio must be > 0")
        if self.extra_tokens < 0:
            raise ConfigurationError("extra_tokens must be >= 0")

    @property
    def tokens(self) -> int:
        return (self.frames // self.cube_t) * (self.height // self.cube_h) \
            * (self.width // self.cube_w) + self.extra_tokens


@dataclass(frozen=True)
class MemoryCoefficients:
    """How many intermediate tensors each layer type saves for backward.

    ln: normalized output, takes part in two layernorms' backward => 2.
    mlp: both linear outputs plus the activation, counted in units of
        mlp_ratio*N*D => (1 + 1/4 + ... ) * ... = 2.25 with ratio 4.
    attn: pre-softmax logits and softmax output, heads*N^2 each => 2.
    flash: per-row softmax statistics plus the attention output => 1 unit
        of N*(D + heads).
    """

    ln: float = 2.0
    mlp: float = 2.25
    attn: float = 2.0
    flash: float = 1.0

    def validate(self) -> None:
        if min(self.ln, self.mlp, self.attn, self.flash) <= 0:
            raise ConfigurationError("coefficients must be positive")


DEFAULT_COEFFS = MemoryCoefficients()


@dataclass(frozen=True)
class MemoryReport:
    """Per-video activation memory, split by layer type (bytes)."""

    layernorm_bytes: float
    mha_bytes: float
    mlp_bytes: float
    flash_attention: bool
    grad_checkpointing: bool

    @property
    def total_bytes(self) -> float:
        return self.layernorm_bytes + self.mha_bytes + self.mlp_bytes

    def to_dict(self) -> dict:
        return {
            "layernorm_mb": self.layernorm_bytes / MB,
            "mha_mb": self.mha_bytes / MB,
            "mlp_mb": self.mlp_bytes / MB,
            "total_mb": self.total_bytes / MB,
            "flash_attention": self.flash_attention,
            "grad_checkpointing": self.grad_checkpointing,
        }


def activation_memory(config: VitConfig, flash: bool = False,
                      ckpt: bool = False,
                      coeffs: MemoryCoefficients = DEFAULT_COEFFS) \
        -> MemoryReport:
    """Activation bytes per video for one forward/backward pass."""
    config.validate()
    coeffs.validate()
    n, b = config.tokens, config.bytes_per_elem
    ln = coeffs.ln * n * config.dim * b
    mlp = coeffs.mlp * config.mlp_ratio * n * config.dim * b
    if flash:
        mha = coeffs.flash * n * (config.dim + config.heads) * b
    else:
        mha = coeffs.attn * config.heads * n * n * b
    layers = math.sqrt(config.depth) if ckpt else float(config.depth)
    return MemoryReport(
        layernorm_bytes=ln * layers, mha_bytes=mha * layers,
        mlp_bytes=mlp * layers, flash_attention=flash,
        grad_checkpointing=ckpt)


def max_batch_size(config: VitConfig, flash: bool, ckpt: bool,
                   gpu_ram: float, fixed_overhead: float,
                   coeffs: MemoryCoefficients = DEFAULT_COEFFS) -> int:
    """Largest b with b * per_video + fixed_overhead <= gpu_ram.

    Returns 0 when no single video fits — infeasibility is a result, not
    an exception (the CLI maps it to its own exit code).
    """
    if gpu_ram <= fixed_overhead:
        raise ConfigurationError(
            f"gpu_ram {gpu_ram:.0f} B does not exceed fixed overhead "
            f"{fixed_overhead:.0f} B")
    if fixed_overhead < 0:
        raise ConfigurationError("fixed_overhead must be >= 0")
    per_video = activation_memory(config, flash, ckpt, coeffs).total_bytes
    return int((gpu_ram - fixed_overhead) // per_video)


def calibrate_fixed_overhead(config: VitConfig, flash: bool, ckpt: bool,
                             gpu_ram: float, observed_batch: int,
                             coeffs: MemoryCoefficients = DEFAULT_COEFFS) \
        -> float:
    """Back out the constant (weights/optimizer/workspace) term from one
    observed maximum batch size."""
    if observed_batch < 1:
        raise ConfigurationError("observed_batch must be >= 1")
    per_video = activation_memory(config, flash, ckpt, coeffs).total_bytes
    overhead = gpu_ram - observed_batch * per_video
    if overhead < 0:
        raise ConfigurationError(
            f"observed batch {observed_batch} needs more than gpu_ram "
            f"alone: activation model over-estimates per-video bytes")
    return overhead


@dataclass(frozen=True)
class PipelineProfile:
    """Stage capacities of a training pipeline.

    bits_per_clip is the average compressed clip size (bitrate x clip
    seconds); read_speed is bytes/sec of the storage the workers read.
    """

    num_gpus: int
    per_gpu_rate: float
    num_workers: int
    per_worker_rate: float
    read_speed: float
    bits_per_clip: float

    def validate(self) -> None:
        for name in ("num_gpus", "per_gpu_rate", "num_workers",
                     "per_worker_rate", "read_speed", "bits_per_clip"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass(frozen=True)
class ThroughputReport:
    io: float
    cpu: float
    gpu: float
    bottleneck: str
    end_to_end: float
    gpu_utilization: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pipeline_throughput(profile: PipelineProfile) -> ThroughputReport:
    """min() over stage capacities; ties pick the earliest of io, cpu, gpu."""
    profile.validate()
    io = profile.read_speed * 8.0 / profile.bits_per_clip
    cpu = profile.num_workers * profile.per_worker_rate
    gpu = profile.num_gpus * profile.per_gpu_rate
    stages = {"io": io, "cpu": cpu, "gpu": gpu}
    bottleneck = min(stages, key=stages.get)
    end_to_end = stages[bottleneck]
    return ThroughputReport(io=io, cpu=cpu, gpu=gpu, bottleneck=bottleneck,
                            end_to_end=end_to_end,
                            gpu_utilization=end_to_end / gpu)
