"""Video training-data pipeline toolkit.

Metadata-driven crop sampling, keyframe-aware chunk planning, a fused
decode-crop path with work counters, a deterministic multi-worker loader
harness, and analytic capacity models for IO, memory, and throughput.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
