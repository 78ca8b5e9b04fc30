"""Shared corpora, built once per session.

Encoding settings trade realism for runtime: module tests use small clean
clips; the acceptance suite builds the full 1,024-clip corpus.
"""

from __future__ import annotations

import pytest

from vidpipe.corpus import make_synthetic_corpus, write_pattern_clip


@pytest.fixture(scope="session")
def pattern_clip(tmp_path_factory) -> dict:
    """15 s noisy 320x256 clip at 1 Mb/s; markers + rate control realism."""
    path = str(tmp_path_factory.mktemp("clip") / "pattern.mp4")
    meta = write_pattern_clip(path, clip_id=37, length_sec=15.0, width=320,
                              height=256, fps=8.0, bit_rate=1_000_000,
                              gop_seconds=1.0, noise=0.6, seed=0)
    return meta


@pytest.fixture(scope="session")
def source_45s(tmp_path_factory) -> dict:
    """Clean 45 s source for chunk round-trip quality checks."""
    path = str(tmp_path_factory.mktemp("src45") / "source45.mp4")
    return write_pattern_clip(path, clip_id=9, length_sec=45.0, width=320,
                              height=240, fps=8.0, crf=18, gop_seconds=1.0,
                              noise=0.0, seed=1)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> str:
    """8 short clips + manifest; loader module tests."""
    out = str(tmp_path_factory.mktemp("corpus8"))
    return make_synthetic_corpus(8, 6.0, (192, 128), 0, out, fps=4.0,
                                 gop_seconds=1.0, noise=0.0, seed=0)


@pytest.fixture(scope="session")
def corpus_1024(tmp_path_factory) -> str:
    """The full benchmark corpus: 1,024 15-second clips."""
    out = str(tmp_path_factory.mktemp("corpus1024"))
    return make_synthetic_corpus(1024, 15.0, (192, 128), 0, out, fps=4.0,
                                 gop_seconds=1.0, noise=0.0, seed=0)
