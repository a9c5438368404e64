"""Dataset-level runs: evaluation, ablation grids, and stability studies."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .attention import cosine_similarity
from .config import RunConfig
from .embeddings import EmbeddingBackend
from .errors import EvaluationError
from .evaluation import EvalReport, GroundTruth, evaluate
from .grounding import detections_to_coco
from .images import Raster
from .pipeline import detect
from .regions import SegmentationBackend
from .synthetic import SyntheticBenchmark

log = logging.getLogger(__name__)

ABLATIONS: dict[str, dict] = {
    "full": {},
    "positives_only": {"use_negatives": False},
    "no_heatmap": {"use_heatmap": False},
    "mean_pooling": {"pooling": "mean"},
}

ExemplarProvider = Callable[[str], tuple[list[Raster], list[Raster]]]
ImageLoader = Callable[[int], Raster]


@dataclass
class DatasetRun:
    report: EvalReport
    detections: list[dict]
    errors: dict[int, str] = field(default_factory=dict)
    incomplete: bool = False


def evaluate_dataset(
    gt: GroundTruth,
    image_loader: ImageLoader,
    exemplar_provider: ExemplarProvider,
    embedder: EmbeddingBackend,
    segmenter: SegmentationBackend,
    config: RunConfig,
    include_masks: bool = False,
) -> DatasetRun:
    """Detect every category on every image and score against ground truth.

    One bad image does not abort the run: its error is recorded and it
    contributes zero detections. Ctrl-C stops cleanly with the partial
    result marked incomplete.
    """
    exemplar_cache: dict[int, tuple[list[Raster], list[Raster]]] = {}
    detections: list[dict] = []
    errors: dict[int, str] = {}
    incomplete = False
    try:
        for image_id in sorted(gt.images):
            try:
                image = image_loader(image_id)
                for cid, name in sorted(gt.categories.items()):
                    if cid not in exemplar_cache:
                        exemplar_cache[cid] = exemplar_provider(name)
                    positives, negatives = exemplar_cache[cid]
                    result = detect(image, name, positives, negatives, embedder, segmenter, config)
                    detections.extend(
                        detections_to_coco(
                            result.detections, image_id, cid, include_masks=include_masks
                        )
                    )
            except KeyboardInterrupt:
                raise
            except Exception as exc:
                log.warning("image %s failed: %s", image_id, exc)
                errors[image_id] = str(exc)
    except KeyboardInterrupt:
        incomplete = True
    report = evaluate(detections, gt)
    return DatasetRun(report=report, detections=detections, errors=errors, incomplete=incomplete)


def run_benchmark(
    bench: SyntheticBenchmark,
    config: RunConfig,
    exemplars: tuple[list[Raster], list[Raster]] | None = None,
) -> DatasetRun:
    """Evaluate a synthetic benchmark world under one configuration."""
    positives, negatives = exemplars if exemplars is not None else (bench.positives, bench.negatives)
    scenes = {i: spec.image for i, spec in enumerate(bench.scenes)}
    return evaluate_dataset(
        bench.gt,
        image_loader=lambda i: scenes[i],
        exemplar_provider=lambda _label: (positives, negatives),
        embedder=bench.embedder,
        segmenter=bench.segmenter,
        config=config,
    )


def ablation_run(
    gt: GroundTruth,
    image_loader: ImageLoader,
    exemplar_provider: ExemplarProvider,
    embedder: EmbeddingBackend,
    segmenter: SegmentationBackend,
    base_config: RunConfig,
    ablations: dict[str, dict] | None = None,
) -> dict[str, EvalReport]:
    """Run the pipeline once per ablation and collect the reports."""
    reports: dict[str, EvalReport] = {}
    for name, overrides in (ablations or ABLATIONS).items():
        run = evaluate_dataset(
            gt, image_loader, exemplar_provider, embedder, segmenter,
            base_config.replace(**overrides),
        )
        reports[name] = run.report
    return reports


def ablation_table(reports: dict[str, EvalReport]) -> str:
    width = max(len(n) for n in reports)
    lines = [f"{'ablation'.ljust(width)}  map50   map5095"]
    for name, rep in reports.items():
        lines.append(f"{name.ljust(width)}  {rep.map50:.4f}  {rep.map5095:.4f}")
    return "\n".join(lines)


@dataclass
class StabilityReport:
    counts: list[int]
    map50_by_count: dict[int, list[float]]  # count -> per-repeat values
    mean_curve: dict[int, float]
    spearman_rho: float
    similarity_matrix: np.ndarray | None = None

    def to_dict(self) -> dict:
        doc = {
            "counts": self.counts,
            "map50_by_count": {str(k): v for k, v in self.map50_by_count.items()},
            "mean_curve": {str(k): v for k, v in self.mean_curve.items()},
            "spearman_rho": self.spearman_rho,
        }
        if self.similarity_matrix is not None:
            doc["similarity_matrix"] = self.similarity_matrix.tolist()
        return doc


def exemplar_similarity_matrix(
    embedder: EmbeddingBackend,
    exemplar_sets: list[tuple[list[Raster], list[Raster]]],
) -> np.ndarray:
    """Cosine similarities among [positives | negatives], averaged over labels.

    All sets must share the same counts; the (2k)x(2k) result shows how
    tightly positives cluster with positives and negatives with negatives.
    """
    if not exemplar_sets:
        raise EvaluationError("at least one exemplar set is required")
    mats = []
    for positives, negatives in exemplar_sets:
        vecs = [embedder.embed_global(r).values for r in positives + negatives]
        n = len(vecs)
        mat = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                mat[i, j] = cosine_similarity(vecs[i], vecs[j])
        mats.append(mat)
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise EvaluationError(f"exemplar sets have differing sizes: {shapes}")
    return np.mean(mats, axis=0)


def stability_study(
    bench: SyntheticBenchmark,
    config: RunConfig,
    counts=range(1, 11),
    repeats: int = 5,
    base_seed: int = 0,
    with_similarity: bool = True,
) -> StabilityReport:
    """mAP as a function of exemplar count, repeated over fresh draws."""
    from scipy.stats import spearmanr

    counts = list(counts)
    by_count: dict[int, list[float]] = {k: [] for k in counts}
    for k in counts:
        for r in range(repeats):
            exemplars = bench.sample_exemplars(k, k, seed=base_seed + 1000 * k + r)
            run = run_benchmark(bench, config.replace(n_pos=k, n_neg=k), exemplars=exemplars)
            by_count[k].append(run.report.map50)
    mean_curve = {k: float(np.mean(v)) for k, v in by_count.items()}
    rho = float(spearmanr(counts, [mean_curve[k] for k in counts]).statistic)

    sim = None
    if with_similarity:
        k = max(counts)
        sets = [
            bench.sample_exemplars(k, k, seed=base_seed + 7000 + r) for r in range(min(repeats, 3))
        ]
        sim = exemplar_similarity_matrix(bench.embedder, sets)
    return StabilityReport(
        counts=counts,
        map50_by_count=by_count,
        mean_curve=mean_curve,
        spearman_rho=rho,
        similarity_matrix=sim,
    )


# ---------------------------------------------------------------- plotting


def _agg_pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_pr_curves(report: EvalReport, gt: GroundTruth, path: str | Path, iou: float = 0.5) -> None:
    plt = _agg_pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for cid, curves in sorted(report.pr_curves.items()):
        if iou not in curves:
            continue
        recalls, precisions = curves[iou]
        ax.plot([0.0, *recalls], [1.0, *precisions], label=gt.categories.get(cid, str(cid)))
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.set_title(f"PR @ IoU {iou}")
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)


def plot_stability_curve(report: StabilityReport, path: str | Path) -> None:
    plt = _agg_pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    counts = report.counts
    means = [report.mean_curve[k] for k in counts]
    ax.plot(counts, means, marker="o")
    for k in counts:
        ax.scatter([k] * len(report.map50_by_count[k]), report.map50_by_count[k],
                   s=8, alpha=0.4, color="gray")
    ax.set_xlabel("exemplars per side")
    ax.set_ylabel("mAP@0.5")
    ax.set_title(f"stability (spearman rho={report.spearman_rho:.3f})")
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)


def plot_similarity_matrix(matrix: np.ndarray, path: str | Path) -> None:
    plt = _agg_pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(matrix, vmin=-1, vmax=1, cmap="viridis")
    half = matrix.shape[0] // 2
    ax.axhline(half - 0.5, color="white", lw=1)
    ax.axvline(half - 0.5, color="white", lw=1)
    ax.set_title("exemplar cosine similarity (pos | neg)")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)


def save_json(doc, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
