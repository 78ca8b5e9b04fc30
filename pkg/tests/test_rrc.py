"""Crop sampler tests.

The distribution tests compare against an independent conditional-on-fit
Monte-Carlo oracle (written first, different bit generator): draw area and
ratio uniformly, accept only rects that fit. Frozen value computed from
that oracle before the sampler existed: mean area fraction on a 340x256
frame with scale (0.5, 1.0), ratio (3/4, 4/3) is 0.6717 (std 0.119,
acceptance probability per attempt 0.575).
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from vidpipe.errors import ConfigurationError, InputError
from vidpipe.rrc import (CropRect, FrameGeometry, RrcParams, SampleSeed,
                         center_crop, make_rng, sample_crop, sample_hflip,
                         STREAM_CROP)

# Frozen oracle outputs (see module docstring).
ORACLE_MEAN_340x256 = 0.6717
ORACLE_STD_340x256 = 0.119


def oracle_area_fractions(width: int, height: int, smin: float, smax: float,
                          rmin: float, rmax: float, n: int,
                          seed: int) -> np.ndarray:
    """Independent oracle: joint (area, ratio) draws conditioned on fit.

    Uses PCG64 so agreement with the Philox-based implementation reflects
    the distribution, not shared bit streams. np.round is half-even,
    matching the sampler's pinned rounding.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    frame_area = width * height
    chunks: list[np.ndarray] = []
    have = 0
    while have < n:
        m = max(4 * (n - have), 10_000)
        area = rng.uniform(smin * frame_area, smax * frame_area, m)
        ratio = rng.uniform(rmin, rmax, m)
        cw = np.round(np.sqrt(area * ratio))
        ch = np.round(np.sqrt(area / ratio))
        ok = (cw >= 1) & (cw <= width) & (ch >= 1) & (ch <= height)
        chunks.append((cw[ok] * ch[ok]) / frame_area)
        have += chunks[-1].size
    return np.concatenate(chunks)[:n]


def replay_draws(geometry: FrameGeometry, params: RrcParams, seed: SampleSeed,
                 base_seed: int = 0):
    """Re-run the documented draw sequence (area, ratio, x, y per attempt)
    on the sampler's own stream; returns (area, ratio) of the accepted
    attempt or None if every attempt missed (fallback case)."""
    rng = make_rng(seed, base_seed, STREAM_CROP)
    w, h = geometry.width, geometry.height
    for _ in range(params.max_attempts):
        area = rng.uniform(params.scale_min * w * h, params.scale_max * w * h)
        ratio = rng.uniform(params.ratio_min, params.ratio_max)
        cw = round(math.sqrt(area * ratio))
        ch = round(math.sqrt(area / ratio))
        if 1 <= cw <= w and 1 <= ch <= h:
            return area, ratio
    return None


def collect_samples(geometry: FrameGeometry, params: RrcParams, n: int,
                    base_seed: int = 0):
    """n seeded samples; returns (rects, fracs_of_accepted, n_fallback)."""
    rects, fracs, fallbacks = [], [], 0
    frame_area = geometry.width * geometry.height
    for i in range(n):
        seed = SampleSeed(epoch=0, worker_id=0, sample_index=i)
        rect = sample_crop(geometry, params, seed, base_seed)
        rects.append(rect)
        if replay_draws(geometry, params, seed, base_seed) is None:
            fallbacks += 1
        else:
            fracs.append(rect.crop_w * rect.crop_h / frame_area)
    return rects, np.asarray(fracs), fallbacks


class TestSampleCrop:
    def test_full_frame_forced(self):
        # scale (1,1) and ratio (1,1) on a square frame admit only the frame
        geo = FrameGeometry(100, 100)
        params = RrcParams(scale_min=1.0, scale_max=1.0, ratio_min=1.0,
                           ratio_max=1.0)
        rect = sample_crop(geo, params, SampleSeed(0, 0, 0))
        assert rect == CropRect(x=0, y=0, crop_w=100, crop_h=100)

    def test_default_training_config(self):
        p = RrcParams()
        assert (p.target_h, p.target_w) == (224, 224)
        assert (p.scale_min, p.scale_max) == (0.5, 1.0)
        assert (p.ratio_min, p.ratio_max) == (3 / 4, 4 / 3)
        assert p.max_attempts == 10
        p.validate()

    def test_determinism(self):
        geo = FrameGeometry(340, 256)
        params = RrcParams()
        seed = SampleSeed(epoch=3, worker_id=5, sample_index=77)
        a = sample_crop(geo, params, seed, base_seed=9)
        b = sample_crop(geo, params, seed, base_seed=9)
        assert a == b

    def test_distinct_streams(self):
        geo = FrameGeometry(640, 480)
        params = RrcParams()
        rects = {
            sample_crop(geo, params, SampleSeed(0, 0, i))
            for i in range(50)
        }
        assert len(rects) > 40  # collisions possible but rare

    def test_containment_fuzz(self):
        rng = np.random.Generator(np.random.PCG64(123))
        for i in range(300):
            w = int(rng.integers(1, 1000))
            h = int(rng.integers(1, 1000))
            smin = float(rng.uniform(0.05, 1.0))
            smax = float(rng.uniform(smin, 1.0))
            rmin = float(rng.uniform(0.2, 2.0))
            rmax = float(rng.uniform(rmin, 3.0))
            geo = FrameGeometry(w, h)
            params = RrcParams(scale_min=smin, scale_max=smax,
                               ratio_min=rmin, ratio_max=rmax)
            rect = sample_crop(geo, params, SampleSeed(0, 0, i))
            assert rect.contained_in(geo), (geo, params, rect)

    def test_rounding_bound(self):
        # |W_crop*H_crop - A| <= W_crop + H_crop + 1 for accepted draws
        geo = FrameGeometry(340, 256)
        params = RrcParams()
        checked = 0
        for i in range(500):
            seed = SampleSeed(0, 0, i)
            accepted = replay_draws(geo, params, seed)
            if accepted is None:
                continue
            area, _ = accepted
            rect = sample_crop(geo, params, seed)
            bound = rect.crop_w + rect.crop_h + 1
            assert abs(rect.crop_w * rect.crop_h - area) <= bound
            checked += 1
        assert checked > 400

    def test_fallback_geometry(self):
        # 400x10 with these ranges can never fit: H_crop >= 39 > 10
        geo = FrameGeometry(400, 10)
        params = RrcParams()
        rect = sample_crop(geo, params, SampleSeed(0, 0, 0))
        assert rect.contained_in(geo)
        assert replay_draws(geo, params, SampleSeed(0, 0, 0)) is None
        # centered, ratio clamped to ratio_max: h=10 -> w = round(10*4/3)
        assert rect.crop_h <= 10
        assert rect == sample_crop(geo, params, SampleSeed(0, 0, 1))  # no randomness left

    def test_invalid_params(self):
        geo = FrameGeometry(100, 100)
        with pytest.raises(ConfigurationError):
            sample_crop(geo, RrcParams(scale_min=0.0), SampleSeed(0, 0, 0))
        with pytest.raises(ConfigurationError):
            sample_crop(geo, RrcParams(scale_min=0.9, scale_max=0.5),
                        SampleSeed(0, 0, 0))
        with pytest.raises(ConfigurationError):
            sample_crop(geo, RrcParams(ratio_min=-1.0), SampleSeed(0, 0, 0))
        with pytest.raises(ConfigurationError):
            sample_crop(geo, RrcParams(max_attempts=0), SampleSeed(0, 0, 0))
        with pytest.raises(InputError):
            sample_crop(FrameGeometry(0, 100), RrcParams(), SampleSeed(0, 0, 0))


@pytest.fixture(scope="module")
def samples():
    return collect_samples(FrameGeometry(340, 256), RrcParams(), 10_000)


class TestDistribution:
    """10^4 seeded samples on 340x256 against the frozen oracle."""

    def test_fallback_rare(self, samples):
        _, _, fallbacks = samples
        assert fallbacks / 10_000 < 0.01  # precondition of the KS criterion

    def test_mean_area_fraction(self, samples):
        _, fracs, _ = samples
        assert fracs.mean() == pytest.approx(ORACLE_MEAN_340x256, abs=0.02)

    def test_ks_against_oracle(self, samples):
        _, fracs, _ = samples
        oracle = oracle_area_fractions(340, 256, 0.5, 1.0, 0.75, 4 / 3,
                                       100_000, seed=2024)
        result = stats.ks_2samp(fracs, oracle)
        assert result.pvalue > 0.01, result

    def test_aspect_ratio_coverage(self, samples):
        rects, _, _ = samples
        ratios = np.array([r.crop_w / r.crop_h for r in rects])
        # rounding jitters ratios slightly outside the sampling interval
        assert ratios.min() <= 0.76 and ratios.min() >= 0.73
        assert ratios.max() >= 1.32 and ratios.max() <= 1.36

    def test_all_contained(self, samples):
        rects, _, _ = samples
        geo = FrameGeometry(340, 256)
        assert all(r.contained_in(geo) for r in rects)


class TestCenterCrop:
    def test_symmetric_margins(self):
        rect = center_crop(FrameGeometry(256, 256), 224, 224)
        assert rect == CropRect(x=16, y=16, crop_w=224, crop_h=224)

    def test_odd_margin_left_top_bias(self):
        rect = center_crop(FrameGeometry(225, 225), 224, 224)
        assert rect == CropRect(x=0, y=0, crop_w=224, crop_h=224)

    def test_rectangular_frame(self):
        # arithmetic oracle: x = (320-224)//2 = 48, y = (240-224)//2 = 8
        rect = center_crop(FrameGeometry(320, 240), 224, 224)
        assert rect == CropRect(x=48, y=8, crop_w=224, crop_h=224)

    def test_target_exceeds_frame(self):
        with pytest.raises(InputError):
            center_crop(FrameGeometry(200, 240), 224, 224)
        with pytest.raises(InputError):
            center_crop(FrameGeometry(320, 200), 224, 224)


class TestFlip:
    def test_deterministic(self):
        s = SampleSeed(1, 2, 3)
        assert sample_hflip(s, 7) == sample_hflip(s, 7)

    def test_probability(self):
        flips = [sample_hflip(SampleSeed(0, 0, i)) for i in range(4000)]
        assert abs(np.mean(flips) - 0.5) < 0.03

    def test_edges(self):
        assert not sample_hflip(SampleSeed(0, 0, 0), prob=0.0)
        assert sample_hflip(SampleSeed(0, 0, 0), prob=1.0)
        with pytest.raises(ConfigurationError):
            sample_hflip(SampleSeed(0, 0, 0), prob=1.5)
