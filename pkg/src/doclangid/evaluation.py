"""Metrics, evaluation loops, inference timing, and report emission.

Metric conventions: the confusion matrix has rows = true classes and
columns = predictions; accuracy is trace over sample count; per-class
precision/recall/F1 use the zero-when-undefined convention; macro values
are unweighted means over the evaluated label set (classes with no
predicted instances contribute precision 0). Reports carry these
conventions in their header so tables stay self-describing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from doclangid.corpus import ImageDataset
from doclangid.errors import DataError
from doclangid.model import LanguageClassifier
from doclangid.patching import PatchConfig, extract_patches, fuse_distributions
from doclangid.training import PreparedDataset


@dataclass
class MetricsReport:
    """Per-class and macro classification metrics over one evaluation run."""

    classes: tuple[str, ...]
    eval_classes: tuple[str, ...]
    confusion: np.ndarray  # (k, k), rows = true, cols = predicted
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, dict[str, float]]
    sample_count: int
    variant: str = ""
    seeds: dict = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, confusion: np.ndarray, classes, eval_classes=None,
                       variant: str = "", seeds: dict | None = None) -> "MetricsReport":
        confusion = np.asarray(confusion, dtype=np.int64)
        classes = tuple(classes)
        k = len(classes)
        if confusion.shape != (k, k):
            raise ValueError(f"confusion matrix shape {confusion.shape} does not match "
                             f"{k} classes")
        eval_classes = tuple(eval_classes) if eval_classes is not None else classes
        total = int(confusion.sum())
        accuracy = float(np.trace(confusion) / total) if total else 0.0
        per_class: dict[str, dict[str, float]] = {}
        for i, code in enumerate(classes):
            col = int(confusion[:, i].sum())
            row = int(confusion[i, :].sum())
            tp = int(confusion[i, i])
            precision = tp / col if col else 0.0
            recall = tp / row if row else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            per_class[code] = {"precision": precision, "recall": recall, "f1": f1}
        sel = [per_class[c] for c in eval_classes]
        return cls(
            classes=classes,
            eval_classes=eval_classes,
            confusion=confusion,
            accuracy=accuracy,
            macro_precision=float(np.mean([m["precision"] for m in sel])) if sel else 0.0,
            macro_recall=float(np.mean([m["recall"] for m in sel])) if sel else 0.0,
            macro_f1=float(np.mean([m["f1"] for m in sel])) if sel else 0.0,
            per_class=per_class,
            sample_count=total,
            variant=variant,
            seeds=dict(seeds or {}),
        )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seeds": self.seeds,
            "classes": list(self.classes),
            "eval_classes": list(self.eval_classes),
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "sample_count": self.sample_count,
        }


@dataclass(frozen=True)
class TimingRecord:
    """Mean per-image inference seconds with and without preprocessing."""

    method: str
    dataset_tag: str
    mean_with_preprocessing: float
    mean_without_preprocessing: float
    image_count: int

    def __post_init__(self) -> None:
        if self.image_count < 1:
            raise ValueError("image_count must be >= 1")
        if self.mean_with_preprocessing < self.mean_without_preprocessing:
            raise ValueError("with-preprocessing mean cannot be below without-preprocessing mean")


def fused_predictions(clf: LanguageClassifier, prepared: PreparedDataset,
                      patch_cfg: PatchConfig | None = None,
                      batch_images: int = 8) -> list[tuple[str, int, int]]:
    """(image_id, true class index, predicted class index) per image.

    Batches several images through one forward pass; fusion is an
    order-independent mean, so batching does not change results.
    """
    cfg = patch_cfg or clf.patch_config
    results: list[tuple[str, int, int]] = []
    items = prepared.items
    for start in range(0, len(items), batch_images):
        chunk = items[start:start + batch_images]
        blocks = []
        for image_id, _ in chunk:
            patch_set = extract_patches(prepared.working_image(image_id), cfg)
            blocks.append(patch_set.patches)
        counts = [len(b) for b in blocks]
        probs = clf.patch_probabilities(np.concatenate(blocks))
        offset = 0
        for (image_id, true_idx), count in zip(chunk, counts):
            fused = fuse_distributions(probs[offset:offset + count])
            offset += count
            results.append((image_id, true_idx, int(np.argmax(fused))))
    return results


def evaluate(clf: LanguageClassifier, dataset: ImageDataset,
             patch_cfg: PatchConfig | None = None,
             prepared: PreparedDataset | None = None) -> MetricsReport:
    """Patch-fused evaluation of a checkpoint over a labeled dataset.

    Macro averaging runs over the dataset's label set. A label outside
    the checkpoint's label space raises DataError.
    """
    for e in dataset.entries:
        if e.label not in clf.label_space:
            raise DataError(f"evaluation label {e.label!r} outside checkpoint label space")
    if prepared is None:
        prepared = PreparedDataset(dataset, clf.label_space, clf.patch_config, clf.binarization)
    k = clf.label_space.k
    confusion = np.zeros((k, k), dtype=np.int64)
    for _, true_idx, pred_idx in fused_predictions(clf, prepared, patch_cfg):
        confusion[true_idx, pred_idx] += 1
    eval_classes = tuple(c for c in clf.label_space.classes if c in set(dataset.labels()))
    return MetricsReport.from_confusion(
        confusion, clf.label_space.classes, eval_classes=eval_classes,
        variant=str(clf.metadata.get("variant", "")),
        seeds={"train": clf.metadata.get("train_config", {}).get("seed")},
    )


def time_inference(preprocess_fn, predict_fn, images, repetitions: int = 1,
                   method: str = "doclangid", dataset_tag: str = "",
                   warmup: int = 3) -> TimingRecord:
    """Wall-clock timing of the two pipeline stages on a monotonic clock.

    Per image, the preprocessing stage and the prediction stage are
    timed separately; the with-preprocessing mean is the sum of both
    stage means, so the with >= without invariant holds by construction.
    The first `warmup` images of the first repetition are excluded.
    Timing runs single-threaded; do not parallelize callers.
    """
    images = list(images)
    if not images:
        raise DataError("time_inference needs at least one image")
    if repetitions < 1:
        raise DataError("repetitions must be >= 1")
    pre_times: list[float] = []
    pred_times: list[float] = []
    for rep in range(repetitions):
        for i, image in enumerate(images):
            t0 = time.perf_counter()
            prepped = preprocess_fn(image)
            t1 = time.perf_counter()
            predict_fn(prepped)
            t2 = time.perf_counter()
            if rep == 0 and i < warmup and len(images) * repetitions > warmup:
                continue
            pre_times.append(t1 - t0)
            pred_times.append(t2 - t1)
    mean_pre = float(np.mean(pre_times))
    mean_pred = float(np.mean(pred_times))
    return TimingRecord(
        method=method, dataset_tag=dataset_tag,
        mean_with_preprocessing=mean_pre + mean_pred,
        mean_without_preprocessing=mean_pred,
        image_count=len(pred_times),
    )


METRIC_TABLE_HEADER = "method\taccuracy\tprecision\trecall\tf1"


def metrics_table(reports: list[MetricsReport]) -> str:
    """Delimited table (macro metrics, 4 decimals), one row per report."""
    if not reports:
        raise ValueError("no reports to render")
    lines = ["# macro-averaged metrics; zero-division -> 0", METRIC_TABLE_HEADER]
    for r in reports:
        lines.append(f"{r.variant or 'unknown'}\t{r.accuracy:.4f}\t{r.macro_precision:.4f}"
                     f"\t{r.macro_recall:.4f}\t{r.macro_f1:.4f}")
    return "\n".join(lines) + "\n"


def timing_table(records: list[TimingRecord]) -> str:
    if not records:
        raise ValueError("no timing records to render")
    lines = ["dataset\tmethod\tseconds_with_preprocessing\tseconds_without_preprocessing\timages"]
    for t in records:
        lines.append(f"{t.dataset_tag}\t{t.method}\t{t.mean_with_preprocessing:.6f}"
                     f"\t{t.mean_without_preprocessing:.6f}\t{t.image_count}")
    return "\n".join(lines) + "\n"


def emit_report(reports: list[MetricsReport], out_dir: Path, stem: str = "metrics",
                formats: tuple[str, ...] = ("structured-text", "delimited-table")) -> list[Path]:
    """Write reports in the requested formats; returns the created files.

    Non-plot outputs are deterministic byte-for-byte. The plot format
    renders a per-class bar chart per report.
    """
    if not reports:
        raise ValueError("emit_report needs at least one report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for fmt in formats:
        if fmt == "structured-text":
            path = out_dir / f"{stem}.json"
            payload = [r.to_dict() for r in reports]
            path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
            written.append(path)
        elif fmt == "delimited-table":
            path = out_dir / f"{stem}.tsv"
            path.write_text(metrics_table(reports), encoding="utf-8")
            written.append(path)
        elif fmt == "plot":
            written.append(_plot_per_class(reports, out_dir / f"{stem}_per_class.png"))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    return written


def _plot_per_class(reports: list[MetricsReport], path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(reports), figsize=(5 * len(reports), 4), squeeze=False)
    for ax, report in zip(axes[0], reports):
        labels = list(report.eval_classes)
        x = np.arange(len(labels))
        width = 0.25
        for j, metric in enumerate(("precision", "recall", "f1")):
            values = [report.per_class[c][metric] for c in labels]
            ax.bar(x + (j - 1) * width, values, width, label=metric)
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("language")
        ax.set_ylabel("score")
        ax.set_title(report.variant or "per-class metrics")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
