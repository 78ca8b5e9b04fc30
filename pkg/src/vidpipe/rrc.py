"""RandomResizedCrop parameter sampling from frame geometry alone.

Crops are sampled from (width, height) metadata so they can be fused into
the decode path; no pixel data is touched here. Area is drawn uniformly
from [scale_min, scale_max] of the frame area and aspect ratio uniformly
from [ratio_min, ratio_max] (uniform, not the log-uniform convention used
by some libraries). All rounding is round-half-even.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

# Sub-stream tags for the per-sample RNG split. Every random decision a
# sample makes draws from its own child stream so adding draws to one
# consumer never shifts another's.
STREAM_CROP = 0
STREAM_TIMESTAMPS = 1
STREAM_FLIP = 2
STREAM_WINDOW = 3


@dataclass(frozen=True)
class RrcParams:
    """Crop sampler configuration.

    scale is the sampled area as a fraction of frame area; ratio is
    width/height of the crop. fallback names the policy used when
    max_attempts draws all fail to fit.
    """

    target_h: int = 224
    target_w: int = 224
    scale_min: float = 0.5
    scale_max: float = 1.0
    ratio_min: float = 3 / 4
    ratio_max: float = 4 / 3
    max_attempts: int = 10
    fallback: str = "center_crop"

    def validate(self) -> None:
        if not (0 < self.scale_min <= self.scale_max <= 1):
            raise ConfigurationError(
                f"scale range ({self.scale_min}, {self.scale_max}) must "
                "satisfy 0 < min <= max <= 1")
        if not (0 < self.ratio_min <= self.ratio_max):
            raise ConfigurationError(
                f"ratio range ({self.ratio_min}, {self.ratio_max}) must "
                "satisfy 0 < min <= max")
        if self.target_h < 1 or self.target_w < 1:
            raise ConfigurationError("target size must be >= 1 pixel")
        if self.max_attempts < 1:
            raise ConfigurationError("max_attempts must be >= 1")
        if self.fallback != "center_crop":
            raise ConfigurationError(f"unknown fallback {self.fallback!r}")


@dataclass(frozen=True)
class FrameGeometry:
    width: int
    height: int

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InputError(
                f"frame geometry {self.width}x{self.height} is degenerate")


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    crop_w: int
    crop_h: int

    def contained_in(self, geometry: FrameGeometry) -> bool:
        return (self.x >= 0 and self.y >= 0 and self.crop_w >= 1
                and self.crop_h >= 1
                and self.x + self.crop_w <= geometry.width
                and self.y + self.crop_h <= geometry.height)


@dataclass(frozen=True)
class SampleSeed:
    """Identifies one sample's RNG streams within an epoch.

    Identical seeds give identical draws on every platform: the tuple keys
    a SeedSequence feeding a counter-based Philox generator.
    """

    epoch: int
    worker_id: int
    sample_index: int


def make_rng(seed: SampleSeed, base_seed: int = 0,
             stream: int = STREAM_CROP) -> np.random.Generator:
    """Portable per-(sample, purpose) generator.

    The split key is (base_seed, epoch, worker_id, sample_index, stream);
    base_seed comes from the run-level config, not from SampleSeed, so the
    same dataset traversal can be re-keyed wholesale.
    """
    ss = np.random.SeedSequence(
        (base_seed, seed.epoch, seed.worker_id, seed.sample_index, stream))
    return np.random.Generator(np.random.Philox(ss))


def _round_half_even(v: float) -> int:
    # Python's round() is banker's rounding on floats, which is the pinned
    # tie rule for every crop-size computation.
    return int(round(v))


def _center_rect(width: int, height: int, crop_w: int, crop_h: int) -> CropRect:
    # floor division biases odd margins to the left/top
    return CropRect(x=(width - crop_w) // 2, y=(height - crop_h) // 2,
                    crop_w=crop_w, crop_h=crop_h)


def _fallback_center_crop(geometry: FrameGeometry,
                          params: RrcParams) -> CropRect:
    """Largest crop within the scale/ratio ranges that fits, centered.

    The aspect ratio is clamped toward the frame's own ratio, then the area
    is capped by both the scale ceiling and the frame edges.
    """
    w, h = geometry.width, geometry.height
    r = min(max(w / h, params.ratio_min), params.ratio_max)
    area = min(params.scale_max * w * h, w * w / r, h * h * r)
    crop_w = min(w, max(1, _round_half_even(math.sqrt(area * r))))
    crop_h = min(h, max(1, _round_half_even(math.sqrt(area / r))))
    return _center_rect(w, h, crop_w, crop_h)


def sample_crop(geometry: FrameGeometry, params: RrcParams, seed: SampleSeed,
                base_seed: int = 0) -> CropRect:
    """Sample one crop rectangle from metadata.

    Draw order per attempt is area, ratio, x, y from a single stream;
    an attempt whose rounded size exceeds the frame is retried, and after
    max_attempts the centered fallback is returned. Pure function of
    (geometry, params, seed, base_seed).
    """
    params.validate()
    geometry.validate()
    w, h = geometry.width, geometry.height
    frame_area = w * h
    rng = make_rng(seed, base_seed, STREAM_CROP)

    for _ in range(params.max_attempts):
        area = rng.uniform(params.scale_min * frame_area,
                           params.scale_max * frame_area)
        ratio = rng.uniform(params.ratio_min, params.ratio_max)
        crop_w = _round_half_even(math.sqrt(area * ratio))
        crop_h = _round_half_even(math.sqrt(area / ratio))
        if 1 <= crop_w <= w and 1 <= crop_h <= h:
            x = _round_half_even(rng.uniform(0, w - crop_w))
            y = _round_half_even(rng.uniform(0, h - crop_h))
            return CropRect(x=x, y=y, crop_w=crop_w, crop_h=crop_h)
    return _fallback_center_crop(geometry, params)


def center_crop(geometry: FrameGeometry, target_h: int,
                target_w: int) -> CropRect:
    """Centered rect of exactly (target_h, target_w); odd margins split with
    the extra pixel on the right/bottom (left/top bias)."""
    geometry.validate()
    if target_w < 1 or target_h < 1:
        raise InputError("center_crop target must be >= 1 pixel")
    if target_w > geometry.width or target_h > geometry.height:
        raise InputError(
            f"center_crop target {target_w}x{target_h} exceeds frame "
            f"{geometry.width}x{geometry.height}")
    return _center_rect(geometry.width, geometry.height, target_w, target_h)


def sample_hflip(seed: SampleSeed, base_seed: int = 0,
                 prob: float = 0.5) -> bool:
    """Horizontal-flip coin with its own sub-stream."""
    if not (0 <= prob <= 1):
        raise ConfigurationError(f"flip probability {prob} outside [0, 1]")
    rng = make_rng(seed, base_seed, STREAM_FLIP)
    return bool(rng.uniform() < prob)
