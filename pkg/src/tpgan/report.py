"""Cross-experiment report: gradient-norm curves, metric bars, a consolidated CSV and a text summary."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ValidationError  # noqa: E402
from .experiment import METRIC_COLUMNS, RunManifest, read_metrics_csv, read_run_manifest  # noqa: E402

FID_NOTE = ("FID features come from the penultimate layer of a fixed reference classifier trained on the "
            "prepared data, not from an Inception network; values are comparable within this report only.")


@dataclass
class LoadedRun:
    manifest: RunManifest
    root: Path

    @property
    def label(self) -> str:
        return f"{self.manifest.method} (ratio {self.manifest.balanced_ratio:g})"

    def grad_norm_series(self) -> list[np.ndarray]:
        out = []
        for run in self.manifest.runs:
            with open(self.root / run.training_log, newline="") as fh:
                rows = list(csv.DictReader(fh))
            out.append(np.array([float(r["grad_norm_G"]) if r["grad_norm_G"] else math.nan for r in rows]))
        return out

    def metric_rows(self) -> list[dict]:
        return read_metrics_csv(self.root / self.manifest.metrics_csv)


@dataclass
class ReportPaths:
    grad_norms: Path
    metric_bars: Path
    consolidated: Path
    summary: Path
    curves: int = 0


def load(paths) -> list[LoadedRun]:
    return [LoadedRun(read_run_manifest(p), Path(p).parent) for p in paths]


def plot_grad_norms(runs: list[LoadedRun], path: Path) -> int:
    """Per-epoch generator gradient norm, averaged over seeds, on a log axis; returns the curve count."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for run in runs:
        series = [s for s in run.grad_norm_series() if len(s)]
        if not series or all(np.isnan(s).all() for s in series):
            continue
        n = min(len(s) for s in series)
        curve = np.nanmean(np.stack([s[:n] for s in series]), axis=0)
        ax.plot(np.arange(1, n + 1), curve, label=run.label)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("generator gradient norm")
    curves = len(ax.lines)
    if curves:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return curves


def _macro_means(run: LoadedRun) -> dict[str, float]:
    rows = [r for r in run.metric_rows() if r["seed"] == "mean" and r["class"] == "macro"]
    if not rows:
        return {}
    return {k: float(rows[0][k]) if rows[0][k] else math.nan for k in ("precision", "recall", "f_score", "fid")}


def plot_metric_bars(runs: list[LoadedRun], path: Path) -> Path:
    """Macro F, P and R per method, grouped by balanced ratio."""
    ratios = sorted({r.manifest.balanced_ratio for r in runs})
    methods = list(dict.fromkeys(r.manifest.method for r in runs))
    fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharey=True)
    width = 0.8 / max(len(methods), 1)
    for ax, metric in zip(axes, ("f_score", "precision", "recall")):
        for j, method in enumerate(methods):
            heights = []
            for ratio in ratios:
                match = [r for r in runs if r.manifest.method == method and r.manifest.balanced_ratio == ratio]
                heights.append(_macro_means(match[0]).get(metric, math.nan) if match else math.nan)
            ax.bar(np.arange(len(ratios)) + j * width, heights, width, label=method)
        ax.set_xticks(np.arange(len(ratios)) + width * (len(methods) - 1) / 2)
        ax.set_xticklabels([f"{r:g}" for r in ratios])
        ax.set_xlabel("balanced ratio")
        ax.set_title(metric)
    axes[0].set_ylim(0, 1)
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_consolidated(runs: list[LoadedRun], path: Path) -> Path:
    """One row per run and class; macro and mean rows are left out."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for run in runs:
            for row in run.metric_rows():
                if row["seed"] != "mean" and row["class"] != "macro":
                    writer.writerow([row[c] for c in METRIC_COLUMNS])
    return path


def summary_text(runs: list[LoadedRun]) -> str:
    lines = [FID_NOTE, "", "method\tratio\truns\tF\tP\tR\tFID\tgrad_norm_p90"]
    for run in runs:
        m = run.manifest
        f = np.array([r.macro_f for r in m.runs])
        p = np.array([r.macro_precision for r in m.runs])
        rec = np.array([r.macro_recall for r in m.runs])
        fids = [r.mean_fid for r in m.runs if r.mean_fid is not None]
        norms = np.concatenate(run.grad_norm_series() or [np.array([])])
        norms = norms[np.isfinite(norms)]
        lines.append("\t".join([
            m.method, f"{m.balanced_ratio:g}", str(len(m.runs)),
            f"{f.mean():.4f}+-{f.std():.4f}", f"{p.mean():.4f}", f"{rec.mean():.4f}",
            f"{np.mean(fids):.2f}" if fids else "-",
            f"{np.percentile(norms, 90):.4g}" if len(norms) else "-",
        ]))
    lines += ["", "per-class F (mean over runs)"]
    for run in runs:
        per_class = [r for r in run.metric_rows() if r["seed"] == "mean" and r["class"] != "macro"]
        cells = ", ".join(f"{r['class']}={float(r['f_score']):.4f}" for r in per_class)
        lines.append(f"{run.label}: {cells}")
    lines += ["", "macro F is the mean of per-class F, not the harmonic mean of macro P and macro R."]
    return "\n".join(lines) + "\n"


def build_report(manifest_paths, out_dir: str | Path) -> ReportPaths:
    if not manifest_paths:
        raise ValidationError("at least one run manifest is required")
    runs = load(manifest_paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = ReportPaths(out / "grad_norms.png", out / "metric_bars.png", out / "consolidated.csv", out / "summary.txt")
    paths.curves = plot_grad_norms(runs, paths.grad_norms)
    plot_metric_bars(runs, paths.metric_bars)
    write_consolidated(runs, paths.consolidated)
    paths.summary.write_text(summary_text(runs))
    return paths
