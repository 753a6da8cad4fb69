"""Split evaluation: per-category metrics, report tables, optional plots.

The same code path feeds the training loop's validation column and the eval
command, so the two always agree on a given model and split.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from viewfill.errors import InvalidInputError
from viewfill.geometry import PointCloud
from viewfill.metrics import MetricReport, fscore
from viewfill.model import CompletionModel


@dataclass(frozen=True)
class SampleResult:
    category: str
    report: MetricReport


@dataclass(frozen=True)
class CategorySummary:
    category: str
    count: int
    mean_cd: float
    mean_f1: float


def _batched(samples, batch_size):
    for start in range(0, len(samples), batch_size):
        yield samples[start : start + batch_size]


def predict_batch(model: CompletionModel, batch):
    """Forward a list of TrainSamples; returns the ModelOutput."""
    dtype = next(model.parameters()).dtype
    images = torch.stack(
        [torch.from_numpy(s.image.transpose(2, 0, 1)).to(dtype) for s in batch]
    )
    partials = torch.stack(
        [torch.from_numpy(s.partial.points).to(dtype) for s in batch]
    )
    seeds = [s.seed for s in batch]
    return model(images, partials, seeds)


def evaluate_samples(
    model: CompletionModel, samples, tau: float, batch_size: int = 16
) -> list:
    """Per-sample metric reports of the refined output against ground truth."""
    if not samples:
        raise InvalidInputError("empty evaluation split")
    model.eval()
    results = []
    with torch.no_grad():
        for batch in _batched(samples, batch_size):
            out = predict_batch(model, batch)
            refined = out.refined.cpu().numpy().astype(np.float64)
            for i, sample in enumerate(batch):
                report = fscore(PointCloud(refined[i]), sample.gt, tau)
                results.append(SampleResult(sample.category, report))
    return results


def evaluate_self(samples, tau: float) -> list:
    """Debug oracle: score every ground truth against itself."""
    if not samples:
        raise InvalidInputError("empty evaluation split")
    return [
        SampleResult(s.category, fscore(s.gt, s.gt, tau)) for s in samples
    ]


def stage_chamfers(model: CompletionModel, samples, batch_size: int = 16) -> list:
    """Mean Chamfer distance per refinement stage (P^(0)..P^(L)) over a split."""
    model.eval()
    sums = None
    with torch.no_grad():
        for batch in _batched(samples, batch_size):
            out = predict_batch(model, batch)
            if sums is None:
                sums = [0.0] * len(out.trace.stages)
            for level, stage in enumerate(out.trace.stages):
                pts = stage.cpu().numpy().astype(np.float64)
                for i, sample in enumerate(batch):
                    from viewfill.metrics import chamfer_distance

                    sums[level] += chamfer_distance(PointCloud(pts[i]), sample.gt)
    return [s / len(samples) for s in sums]


def summarize(results) -> list:
    """Per-category means plus a sample-weighted 'average' row (last)."""
    by_cat = {}
    for r in results:
        by_cat.setdefault(r.category, []).append(r.report)
    rows = []
    for category in sorted(by_cat):
        reports = by_cat[category]
        rows.append(
            CategorySummary(
                category=category,
                count=len(reports),
                mean_cd=float(np.mean([r.chamfer for r in reports])),
                mean_f1=float(np.mean([r.f1 for r in reports])),
            )
        )
    rows.append(
        CategorySummary(
            category="average",
            count=len(results),
            mean_cd=float(np.mean([r.report.chamfer for r in results])),
            mean_f1=float(np.mean([r.report.f1 for r in results])),
        )
    )
    return rows


def mean_cd(results) -> float:
    return float(np.mean([r.report.chamfer for r in results]))


def mean_f1(results) -> float:
    return float(np.mean([r.report.f1 for r in results]))


def render_table(rows, tau: float) -> str:
    """Aligned text table; CD reported x10^3, F1 at the given threshold."""
    header = f"{'category':<12} {'count':>5} {'CDx1e3':>10} {'F1@' + format(tau, 'g'):>10}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.category:<12} {row.count:>5} "
            f"{row.mean_cd * 1e3:>10.4f} {row.mean_f1:>10.4f}"
        )
    return "\n".join(lines)


def write_report(path, rows, tau: float) -> None:
    """Machine-readable tab-separated report."""
    with open(path, "w") as f:
        f.write(f"# tau={tau:g}\n")
        f.write("category\tcount\tcd\tf1\n")
        for row in rows:
            f.write(
                f"{row.category}\t{row.count}\t{row.mean_cd:.12g}\t{row.mean_f1:.12g}\n"
            )


def plot_category_cd(path, rows) -> None:
    """Bar chart of per-category CDx10^3 (excludes the average row)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cats = [r.category for r in rows if r.category != "average"]
    values = [r.mean_cd * 1e3 for r in rows if r.category != "average"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(cats, values)
    ax.set_ylabel("CD x 1e3")
    ax.set_title("Chamfer distance per category")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_stage_cd(path, stage_cds) -> None:
    """Refinement-progress curve: mean CD after each refinement stage."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(stage_cds)), [v * 1e3 for v in stage_cds], marker="o")
    ax.set_xlabel("refinement stage")
    ax.set_ylabel("CD x 1e3")
    ax.set_title("Chamfer distance across refinement stages")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
