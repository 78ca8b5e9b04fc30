"""Declarative pipeline configuration: one YAML file, five sections.

Sections mirror the library modules: rrc (crop sampler), chunking
(hardware profile for the chunk-length inequality), decoder (what one
decoded sample looks like), loader (worker pool), models (ViT shape and
planner inputs). Unknown sections or keys are rejected rather than
ignored — a typo that silently falls back to a default would corrupt
every downstream plan. CLI flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .chunking import HardwareProfile
from .errors import ConfigurationError
from .loader import LoaderConfig, SamplingSpec
from .models import MemoryCoefficients, VitConfig
from .rrc import RrcParams
from .units import parse_bits, parse_bytes, parse_seconds

SCHEMA_VERSION = 1

_SECTIONS: dict[str, set[str]] = {
    "rrc": {"target_h", "target_w", "scale_min", "scale_max", "ratio_min",
            "ratio_max", "max_attempts", "fallback"},
    "chunking": {"batch_size", "avg_bitrate", "read_speed", "step_time",
                 "safety_margin", "mode"},
    "decoder": {"num_frames", "window_seconds", "frame_sampling",
                "thread_count"},
    "loader": {"manifest", "num_workers", "queue_capacity", "batch_size",
               "epoch_seed", "base_seed", "pipeline", "error_policy",
               "hflip_prob"},
    "models": {"frames", "height", "width", "cube_t", "cube_h", "cube_w",
               "depth", "dim", "heads", "bytes_per_elem", "mlp_ratio",
               "extra_tokens", "gpu_ram", "fixed_overhead", "coeff_ln",
               "coeff_mlp", "coeff_attn", "coeff_flash"},
}

# keys whose file values may carry unit suffixes ("1Mb", "500MB", "4s")
_UNIT_PARSERS = {
    ("chunking", "avg_bitrate"): parse_bits,
    ("chunking", "read_speed"): parse_bytes,
    ("chunking", "step_time"): parse_seconds,
    ("decoder", "window_seconds"): parse_seconds,
    ("models", "gpu_ram"): parse_bytes,
    ("models", "fixed_overhead"): parse_bytes,
}


@dataclass
class PipelineConfig:
    """Parsed config: plain per-section dicts plus typed builders."""

    schema_version: int = SCHEMA_VERSION
    rrc: dict = field(default_factory=dict)
    chunking: dict = field(default_factory=dict)
    decoder: dict = field(default_factory=dict)
    loader: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return getattr(self, name)

    def rrc_params(self, **overrides) -> RrcParams:
        return RrcParams(**_merged(self.rrc, overrides))

    def hardware_profile(self, **overrides) -> HardwareProfile:
        values = _merged(self.chunking, overrides)
        values.pop("safety_margin", None)
        values.pop("mode", None)
        missing = {"batch_size", "avg_bitrate", "read_speed",
                   "step_time"} - values.keys()
        if missing:
            raise ConfigurationError(
                f"hardware profile missing {sorted(missing)}; supply them "
                "in [chunking] or as flags")
        return HardwareProfile(**values)

    def sampling_spec(self, **overrides) -> SamplingSpec:
        values = _merged(self.decoder, overrides)
        values.pop("thread_count", None)
        hflip = self.loader.get("hflip_prob")
        if hflip is not None:
            values.setdefault("hflip_prob", hflip)
        return SamplingSpec(rrc=self.rrc_params(), **values)

    def loader_config(self, manifest: str | None = None,
                      sampling: SamplingSpec | None = None,
                      **overrides) -> LoaderConfig:
        values = _merged(self.loader, overrides)
        values.pop("hflip_prob", None)  # folded into the sampling spec
        if manifest is not None:
            values["manifest"] = manifest
        if "manifest" not in values:
            raise ConfigurationError(
                "no dataset manifest: set loader.manifest or --manifest")
        values["manifest_path"] = values.pop("manifest")
        return LoaderConfig(sampling=sampling or self.sampling_spec(),
                            **values)

    def vit_config(self, **overrides) -> VitConfig:
        values = _merged(self.models, overrides)
        for extra in ("gpu_ram", "fixed_overhead", "coeff_ln", "coeff_mlp",
                      "coeff_attn", "coeff_flash"):
            values.pop(extra, None)
        return VitConfig(**values)

    def memory_coefficients(self) -> MemoryCoefficients:
        m = self.models
        kw = {k: m[f"coeff_{k}"] for k in ("ln", "mlp", "attn", "flash")
              if f"coeff_{k}" in m}
        return MemoryCoefficients(**kw)


def _merged(base: dict, overrides: dict) -> dict:
    out = dict(base)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def load_config(path: str | None) -> PipelineConfig:
    """Parse and validate a config file; None gives all defaults."""
    if path is None:
        return PipelineConfig()
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: "
                                 f"{exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must be a mapping")

    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"config {path}: schema_version {version!r} does not match "
            f"supported version {SCHEMA_VERSION}")

    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(
            f"config {path}: unknown sections {sorted(unknown)}")

    config = PipelineConfig(schema_version=version)
    for name, keys in _SECTIONS.items():
        section = raw.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigurationError(
                f"config {path}: section {name!r} must be a mapping")
        bad = set(section) - keys
        if bad:
            raise ConfigurationError(
                f"config {path}: unknown keys {sorted(bad)} in section "
                f"{name!r}")
        for key, value in section.items():
            parser = _UNIT_PARSERS.get((name, key))
            if parser is not None and isinstance(value, str):
                value = parser(value)
            getattr(config, name)[key] = value
    return config
