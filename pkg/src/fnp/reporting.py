"""Report artifacts: metrics CSV, text summary, and raster plots."""
from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import EvaluationResult
from .grids import GridError
from .metrics import MetricsReport, read_summary_json, write_csv, write_summary_json


def save_result(result: EvaluationResult, out_dir) -> Path:
    """Persist one evaluation (metrics JSON + example-field arrays)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp_id = result.analysis.metadata["experiment_id"]
    write_summary_json([result.analysis, result.background], out / f"{exp_id}.metrics.json")
    ex = result.example
    np.savez(
        out / f"{exp_id}.fields.npz",
        truth=ex.truth, background=ex.background,
        analysis_mean=ex.analysis_mean, analysis_variance=ex.analysis_variance,
        channel_names=np.array(ex.channel_names),
    )
    return out / f"{exp_id}.metrics.json"


def collect_reports(in_dir) -> list[MetricsReport]:
    reports = []
    for path in sorted(Path(in_dir).glob("*.metrics.json")):
        reports.extend(read_summary_json(path))
    if not reports:
        raise GridError(f"no *.metrics.json reports found in {in_dir}")
    return reports


def _check_unique(reports: list[MetricsReport]) -> None:
    seen = set()
    for rep in reports:
        key = (rep.metadata.get("experiment_id"), rep.metadata.get("variant"))
        if key in seen:
            raise GridError(f"duplicate report for experiment/variant {key}")
        seen.add(key)


def write_summary_text(reports: list[MetricsReport], path) -> None:
    lines = ["experiment summary", "=" * 60]
    for rep in reports:
        m = rep.metadata
        lines.append(
            f"{m.get('experiment_id', '?'):40s} variant={m.get('variant', '?'):12s} "
            f"mse={rep.mse:.5f} mae={rep.mae:.5f} n={rep.sample_count}"
        )
        for name, rmse in rep.rmse_per_channel.items():
            lines.append(f"    rmse[{name}] = {rmse:.5f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def plot_case(fields_npz_path, out_dir, channel: int = 0) -> list[Path]:
    """Truth / background / analysis / increment / error / variance panels."""
    data = np.load(fields_npz_path, allow_pickle=False)
    names = [str(n) for n in data["channel_names"]]
    if not 0 <= channel < len(names):
        raise GridError(f"channel index {channel} outside 0..{len(names) - 1}")
    truth = data["truth"][channel]
    background = data["background"][channel]
    mean = data["analysis_mean"][channel]
    var = data["analysis_variance"][channel]
    panels = {
        "truth": truth,
        "background": background,
        "analysis": mean,
        "increment": mean - background,
        "error": mean - truth,
        "variance": var,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(fields_npz_path).stem.replace(".fields", "")
    written = []
    fig, axes = plt.subplots(2, 3, figsize=(12, 5.5))
    for ax, (title, img) in zip(axes.ravel(), panels.items()):
        if title in ("increment", "error"):
            lim = max(float(np.abs(img).max()), 1e-12)
            im = ax.imshow(img, cmap="RdBu_r", vmin=-lim, vmax=lim)
        else:
            im = ax.imshow(img, cmap="viridis")
        ax.set_title(f"{title} [{names[channel]}]", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.035)
    fig.tight_layout()
    target = out / f"{stem}_{names[channel]}.png"
    fig.savefig(target, dpi=110)
    plt.close(fig)
    written.append(target)
    return written


def report(in_dir, out_dir, channel: int = 0) -> dict[str, list[Path]]:
    """Aggregate saved evaluations into CSV + summary + plots."""
    reports = collect_reports(in_dir)
    _check_unique(reports)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(reports, out / "metrics.csv")
    write_summary_text(reports, out / "summary.txt")
    plots = []
    for npz in sorted(Path(in_dir).glob("*.fields.npz")):
        plots.extend(plot_case(npz, out, channel))
    return {
        "csv": [out / "metrics.csv"],
        "summary": [out / "summary.txt"],
        "plots": plots,
    }
