"""CLI surface: exit codes, JSON payloads, artifacts, stream framing.

Most tests drive ``cli.main(argv)`` in-process and read stdout via capsys;
the binary stream path shells out so stdout stays a clean byte pipe.
"""

from __future__ import annotations

import io
import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from vidpipe import cli
from vidpipe.corpus import write_pattern_clip
from vidpipe.tensorio import read_vpc1

SOLVE = ["solve-chunk-length", "--batch-size", "1024", "--bitrate", "1Mb",
         "--read-speed", "500MB", "--step-time", "4", "--margin", "1.0"]
VPC1_HEADER_BYTES = struct.calcsize("<4sBB4I")


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, err = run_cli(capsys, *argv, "--json")
    return code, json.loads(out), err


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    """Config that keeps loader subcommands cheap on the 192x128 corpus."""
    p = tmp_path_factory.mktemp("cfg") / "tiny.yml"
    p.write_text("schema_version: 1\n"
                 "rrc:\n  target_h: 64\n  target_w: 64\n"
                 "decoder:\n  num_frames: 2\n  window_seconds: 2\n")
    return str(p)


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        assert cli.main(["solve-chunk-length", "--no-such-flag"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command_is_1(self, capsys):
        assert cli.main(["frobnicate"]) == 1

    def test_no_command_is_1(self, capsys):
        assert cli.main([]) == 1

    def test_bad_config_file_is_1(self, tmp_path, capsys):
        bad = tmp_path / "c.yml"
        bad.write_text("schema_version: 1\nbogus_section: {}\n")
        code, _, err = run_cli(capsys, *SOLVE, "--config", str(bad))
        assert code == 1 and "bogus_section" in err

    def test_data_error_is_2(self, tmp_path, capsys):
        junk = tmp_path / "junk.mp4"
        junk.write_bytes(b"\x00" * 4096)
        code, _, err = run_cli(capsys, "decode", "--chunk", str(junk),
                               "--start", "0", "--end", "1", "--out",
                               str(tmp_path / "x.vpc"))
        assert code == 2 and err


class TestSolveChunkLength:
    def test_worked_example_text(self, capsys):
        code, out, _ = run_cli(capsys, *SOLVE)
        assert code == 0
        assert out.strip() == "15.625"

    def test_worked_example_json(self, capsys):
        code, payload, _ = run_json(capsys, *SOLVE)
        assert code == 0
        assert payload["chunk_length_sec"] == pytest.approx(15.625)
        assert payload["integer_bound_sec"] == 16
        assert payload["suggested_sec"] == 15

    def test_flag_beats_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.yml"
        cfg.write_text("schema_version: 1\nchunking:\n  safety_margin: 0.96\n")
        base = SOLVE[:-2]  # drop --margin: config value applies
        _, payload, _ = run_json(capsys, *base, "--config", str(cfg))
        assert payload["chunk_length_sec"] == pytest.approx(15.0)
        _, payload, _ = run_json(capsys, *base, "--margin", "1.0",
                                 "--config", str(cfg))
        assert payload["chunk_length_sec"] == pytest.approx(15.625)


class TestDecode:
    def test_writes_container(self, pattern_clip, tmp_path, capsys):
        out = tmp_path / "clip.vpc"
        code, payload, _ = run_json(
            capsys, "decode", "--chunk", pattern_clip["path"], "--start",
            "0.5", "--end", "6.5", "--frames", "4", "--crop", "16,16,128,96",
            "--target", "64x64", "--out", str(out))
        assert code == 0
        frames = read_vpc1(io.BytesIO(out.read_bytes()))
        assert frames.shape == (4, 3, 64, 64) and frames.dtype == np.uint8
        assert payload["shape"] == [4, 3, 64, 64]
        assert payload["counters"]["frames_decoded"] >= 4
        assert len(payload["timestamps"]) == 4

    def test_seeded_decode_deterministic(self, pattern_clip, tmp_path,
                                         capsys):
        blobs = []
        for name in ("a.vpc", "b.vpc"):
            out = tmp_path / name
            code, _, _ = run_cli(
                capsys, "decode", "--chunk", pattern_clip["path"], "--start",
                "1", "--end", "5", "--frames", "2", "--crop", "rrc",
                "--target", "96x96", "--seed", "7", "--out", str(out))
            assert code == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]

    def test_reference_matches_fused(self, pattern_clip, tmp_path, capsys):
        blobs = []
        for pipeline in ("fused", "reference"):
            out = tmp_path / f"{pipeline}.vpc"
            code, _, _ = run_cli(
                capsys, "decode", "--chunk", pattern_clip["path"], "--start",
                "2", "--end", "8", "--frames", "3", "--crop", "10,20,200,150",
                "--target", "112x112", "--pipeline", pipeline, "--out",
                str(out))
            assert code == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]


@pytest.fixture(scope="module")
def short_source(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("src") / "s.mp4")
    return write_pattern_clip(path, clip_id=3, length_sec=8.0, width=192,
                              height=128, fps=4.0, crf=23, gop_seconds=1.0,
                              noise=0.0, seed=2)


class TestChunk:
    def test_chunks_and_manifest(self, short_source, tmp_path, capsys):
        manifest = tmp_path / "manifest.jsonl"
        code, payload, _ = run_json(
            capsys, "chunk", "--source", short_source["path"],
            "--chunk-length", "4", "--out-dir", str(tmp_path / "chunks"),
            "--manifest", str(manifest))
        assert code == 0
        assert payload["chunks"] == 2 and not payload["failures"]
        lines = manifest.read_text().splitlines()
        assert json.loads(lines[0])["kind"] == "vidpipe-chunk-manifest"
        assert len(lines) - 1 == 2

    def test_corrupt_source_exit_2(self, short_source, tmp_path, capsys):
        bad = tmp_path / "bad.mp4"
        bad.write_bytes(b"not video")
        code, _, err = run_cli(
            capsys, "chunk", "--source", short_source["path"], str(bad),
            "--chunk-length", "4", "--out-dir", str(tmp_path / "o"),
            "--manifest", str(tmp_path / "m.jsonl"))
        assert code == 2
        assert "bad.mp4" in err


class TestLoaderCommands:
    def test_dump_ids_deterministic(self, small_corpus, tiny_cfg, capsys):
        argv = ("run-loader", "--config", tiny_cfg, "--manifest",
                small_corpus, "--workers", "2", "--batch", "4", "--queue",
                "8", "--seed", "11", "--dump-ids")
        code, out1, _ = run_cli(capsys, *argv)
        assert code == 0
        code, out2, _ = run_cli(capsys, *argv)
        assert out1 == out2
        batches = [json.loads(l) for l in out1.splitlines()]
        ids = [s for b in batches for s in b["sample_ids"]]
        assert sorted(ids) == list(range(8))
        assert ids != list(range(8))  # shuffled

    def test_stream_matches_dump_ids(self, small_corpus, tiny_cfg, capsys):
        argv = ["run-loader", "--config", tiny_cfg, "--manifest",
                small_corpus, "--workers", "2", "--batch", "4", "--queue",
                "8", "--seed", "11"]
        code, dump, _ = run_cli(capsys, *argv, "--dump-ids")
        assert code == 0
        want_ids = [json.loads(l)["sample_ids"] for l in dump.splitlines()]

        proc = subprocess.run([sys.executable, "-m", "vidpipe",
                               *argv, "--stream"],
                              input=b"", capture_output=True, timeout=300)
        assert proc.returncode == 0, proc.stderr.decode()
        buf, pos, got = proc.stdout, 0, []
        while pos < len(buf):
            (hlen,) = struct.unpack_from("<I", buf, pos)
            header = json.loads(buf[pos + 4:pos + 4 + hlen])
            pos += 4 + hlen
            assert header["shape"] == [4, 2, 3, 64, 64]
            assert header["dtype"] == "uint8"
            n = VPC1_HEADER_BYTES + int(np.prod(header["shape"]))
            frames = read_vpc1(io.BytesIO(buf[pos:pos + n]))
            pos += n
            assert frames.shape == (8, 3, 64, 64)  # batch/time folded
            got.append(header["sample_ids"])
        assert got == want_ids

    def test_bench_artifacts(self, small_corpus, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "bench.json"
        csv = tmp_path / "bench.csv"
        png = tmp_path / "bench.png"
        code, payload, _ = run_json(
            capsys, "bench-loader", "--config", tiny_cfg, "--manifest",
            small_corpus, "--workers", "2", "--batch", "4", "--queue", "8",
            "--samples", "8", "--out", str(out), "--dump-csv", str(csv),
            "--plot", str(png))
        assert code == 0
        assert payload["samples_measured"] == 8
        assert json.loads(out.read_text()) == payload
        assert len(csv.read_text().splitlines()) == 9  # header + 8 rows
        assert png.stat().st_size > 0


class TestMakeCorpus:
    def test_small(self, tmp_path, capsys):
        code, payload, _ = run_json(
            capsys, "make-corpus", "--clips", "2", "--length", "2",
            "--resolution", "96x64", "--fps", "4", "--noise", "0",
            "--out-dir", str(tmp_path / "c"))
        assert code == 0
        lines = (tmp_path / "c" / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert payload["clips"] == 2
        assert payload["total_bytes"] > 0


class TestModelCommands:
    def test_plan_memory_json(self, capsys):
        code, payload, _ = run_json(capsys, "plan-memory")
        assert code == 0
        modes = payload["modes"]
        assert modes["baseline"]["total_mb"] == pytest.approx(514.10592)
        assert modes["flash"]["mha_mb"] == pytest.approx(14.6952)
        assert payload["tokens"] == 785

    def test_plan_memory_infeasible_is_3(self, capsys):
        code, payload, err = run_json(capsys, "plan-memory", "--gpu-ram",
                                      "13GB", "--fixed-overhead", "12.9GB")
        assert code == 3
        assert payload["modes"]["baseline"]["max_batch_size"] == 0
        assert "no feasible batch size" in err

    def test_calibrate_then_predict(self, capsys):
        code, payload, _ = run_json(capsys, "calibrate-memory", "--gpu-ram",
                                    "24GB", "--observed-batch", "22")
        assert code == 0
        overhead = payload["fixed_overhead_bytes"]
        assert overhead == 12_689_669_760
        code, plan, _ = run_json(capsys, "plan-memory", "--gpu-ram", "24GB",
                                 "--fixed-overhead", str(overhead))
        assert code == 0
        batch = {m: plan["modes"][m]["max_batch_size"]
                 for m in plan["modes"]}
        assert batch["baseline"] == 22
        assert batch["flash"] == 65
        assert batch["flash+ckpt"] == 225

    def test_simulate_throughput(self, capsys):
        code, row, _ = run_json(
            capsys, "simulate-throughput", "--gpus", "8", "--per-gpu",
            "39.4", "--workers", "64", "--per-worker", "1.84",
            "--read-speed", "1.25GB", "--bits-per-clip", "15Mb")
        assert code == 0
        assert row["cpu"] == pytest.approx(117.76)
        assert row["end_to_end"] == pytest.approx(117.76)
        assert row["bottleneck"] == "cpu"
        assert row["gpu_utilization"] == pytest.approx(0.3736, abs=1e-4)

    def test_sweep(self, tmp_path, capsys):
        csv = tmp_path / "sweep.csv"
        code, payload, _ = run_json(
            capsys, "simulate-throughput", "--sweep-gpus", "1,2,4,8",
            "--per-gpu", "39.4", "--workers", "64", "--per-worker", "1.84",
            "--read-speed", "1.25GB", "--bits-per-clip", "15Mb",
            "--csv", str(csv))
        assert code == 0
        ends = [r["end_to_end"] for r in payload["rows"]]
        assert ends == pytest.approx([39.4, 78.8, 117.76, 117.76])
        assert [r["bottleneck"] for r in payload["rows"]] \
            == ["gpu", "gpu", "cpu", "cpu"]
        assert len(csv.read_text().splitlines()) == 5
