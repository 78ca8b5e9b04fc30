"""Report figures. Headless: every plot goes straight to a file.

Each CLI report subcommand pairs its machine-readable output (JSON/CSV)
with one rendered figure so a run leaves both artifacts side by side.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 — backend must be set first

STAGES = ("read", "decode", "crop", "collate")


def plot_bench(report: dict, out_path: str) -> str:
    """Stage breakdown + per-worker and total throughput panels."""
    fig, (ax_lat, ax_thr) = plt.subplots(1, 2, figsize=(9, 3.6))

    stage_ms = report["stage_ms"]
    ax_lat.bar(range(len(STAGES)), [stage_ms[s] for s in STAGES],
               color="#4878d0")
    ax_lat.set_xticks(range(len(STAGES)), STAGES)
    ax_lat.set_ylabel("ms / video")
    ax_lat.set_title(f"stage means ({report['pipeline']}, "
                     f"M={report['num_workers']})")
    ax_lat.axhline(report["latency_ms"]["mean"], ls="--", c="k", lw=0.8,
                   label=f"latency mean {report['latency_ms']['mean']:.1f}")
    ax_lat.legend(fontsize=8)

    per_worker = report["per_worker_videos_per_sec"]
    workers = sorted(per_worker, key=int)
    ax_thr.bar(range(len(workers)), [per_worker[w] for w in workers],
               color="#ee854a")
    ax_thr.set_xticks(range(len(workers)), workers)
    ax_thr.set_xlabel("worker")
    ax_thr.set_ylabel("videos / s")
    ax_thr.set_title(f"total {report['total_videos_per_sec']:.1f} videos/s")

    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_memory(modes: dict[str, dict], out_path: str) -> str:
    """Grouped per-layer-type bars, one group per mode, log scale."""
    parts = ("layernorm_mb", "mha_mb", "mlp_mb")
    labels = list(modes)
    fig, ax = plt.subplots(figsize=(7, 3.6))
    width = 0.25
    for j, part in enumerate(parts):
        xs = [i + (j - 1) * width for i in range(len(labels))]
        ax.bar(xs, [modes[m][part] for m in labels], width,
               label=part.removesuffix("_mb"))
    ax.set_yscale("log")
    ax.set_xticks(range(len(labels)), labels)
    ax.set_ylabel("MB / video")
    ax.set_title("activation memory by layer type")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_throughput(rows: list[dict], out_path: str) -> str:
    """Stage capacities and the resulting end-to-end rate per profile."""
    fig, ax = plt.subplots(figsize=(7, 3.6))
    width = 0.22
    stages = ("io", "cpu", "gpu")
    for j, stage in enumerate(stages):
        xs = [i + (j - 1) * width for i in range(len(rows))]
        ax.bar(xs, [r[stage] for r in rows], width, label=stage)
    ax.plot(range(len(rows)), [r["end_to_end"] for r in rows], "ko-",
            ms=4, label="end to end")
    ax.set_xticks(range(len(rows)),
                  [r.get("label", str(i)) for i, r in enumerate(rows)])
    ax.set_ylabel("videos / s")
    ax.set_title("pipeline stage capacities")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
