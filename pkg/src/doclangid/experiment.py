"""End-to-end experiment orchestration and reproducible run directories.

``run_reproduction`` executes the full pipeline at a named scale:
generate the synthetic corpus, split the source domain, select few-shot
samples, train the three variants over several seeds, evaluate on the
held-out target pool, run the few-shot-count and patch-count sweeps,
benchmark inference timing, and emit all tables plus a machine-readable
summary. Every run directory is self-describing: a resolved config
snapshot, a command transcript, and a manifest of produced files. All
non-timing outputs are byte-identical across runs with equal seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from doclangid import __version__
from doclangid.corpus import (
    CorpusSpec,
    FewShotSet,
    ImageDataset,
    LabelSpace,
    build_joint_dataset,
    fewshot_eval_pool,
    generate_synthetic_corpus,
    load_manifest,
    select_fewshot,
    split_source,
)
from doclangid.errors import DataError
from doclangid.evaluation import (
    MetricsReport,
    TimingRecord,
    evaluate,
    metrics_table,
    time_inference,
    timing_table,
)
from doclangid.model import (
    ARCH_RESNET18,
    ARCH_TINY,
    LanguageClassifier,
    load_checkpoint,
    save_checkpoint,
)
from doclangid.pagegen import DegradationLevels
from doclangid.patching import PatchConfig, extract_patches, fuse_distributions, resize_to_working
from doclangid.preprocess import BinarizationParams, preprocess_pipeline
from doclangid.training import (
    VARIANT_DOCLANGID,
    VARIANT_FEWSHOT,
    VARIANT_META,
    PreparedDataset,
    TrainConfig,
    train_fewshot_only,
    train_stage1_meta,
    train_stage2_fewshot,
)

DESK_DEGRADATION = DegradationLevels(
    noise_prob=0.01, blur_radius=(0.3, 0.8), contrast_jitter=(-0.15, 0.1))


@dataclass(frozen=True)
class ExperimentScale:
    """All sizes and hyper-parameters of one end-to-end reproduction."""

    name: str
    corpus: CorpusSpec
    train_per_language: int
    fewshot_n: int
    fewshot_seed: int
    split_seed: int
    train_seeds: tuple[int, ...]
    patch_config: PatchConfig
    binarization: BinarizationParams
    arch: str
    feature_dim: int | None
    stage1_config: TrainConfig
    stage2_config: TrainConfig
    fewshot_only_config: TrainConfig
    sweep_counts: tuple[int, ...]
    patch_sweep_counts: tuple[int, ...]
    timing_images: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "corpus": self.corpus.to_dict(),
            "train_per_language": self.train_per_language,
            "fewshot_n": self.fewshot_n,
            "fewshot_seed": self.fewshot_seed,
            "split_seed": self.split_seed,
            "train_seeds": list(self.train_seeds),
            "patch_config": {
                "patch_height": self.patch_config.patch_height,
                "patch_width": self.patch_config.patch_width,
                "max_patches": self.patch_config.max_patches,
                "image_height": self.patch_config.image_height,
                "image_width": self.patch_config.image_width,
            },
            "binarization": {"window": self.binarization.window,
                             "offset": self.binarization.offset},
            "arch": self.arch,
            "feature_dim": self.feature_dim,
            "stage1_config": self.stage1_config.to_dict(),
            "stage2_config": self.stage2_config.to_dict(),
            "fewshot_only_config": self.fewshot_only_config.to_dict(),
            "sweep_counts": list(self.sweep_counts),
            "patch_sweep_counts": list(self.patch_sweep_counts),
            "timing_images": self.timing_images,
            "version": __version__,
        }


def desk_scale(seed: int = 7) -> ExperimentScale:
    """The desk-scale setup: small pages, tiny backbone, ~minutes per run."""
    return ExperimentScale(
        name="desk",
        corpus=CorpusSpec(
            source_languages=("nl", "fr", "es", "cs", "bg", "da"),
            target_languages=("en", "de", "it", "nl"),
            pages_per_source_language=100,
            pages_per_target_language=200,
            page_height=192,
            page_width=192,
            degradation=DESK_DEGRADATION,
            seed=seed,
        ),
        train_per_language=70,
        fewshot_n=50,
        fewshot_seed=13,
        split_seed=11,
        train_seeds=(1, 2, 3),
        patch_config=PatchConfig(patch_height=24, patch_width=24, max_patches=16,
                                 image_height=96, image_width=96),
        binarization=BinarizationParams(window=31, offset=10),
        arch=ARCH_TINY,
        feature_dim=128,
        stage1_config=TrainConfig(epochs=6, learning_rate=1e-3, batch_size=8,
                                  patches_per_image=8, random_patches=True),
        stage2_config=TrainConfig(epochs=100, learning_rate=1e-2, batch_size=16,
                                  patches_per_image=8, random_patches=True),
        fewshot_only_config=TrainConfig(epochs=20, learning_rate=1e-3, batch_size=8,
                                        patches_per_image=8, random_patches=True),
        sweep_counts=(5, 50),
        patch_sweep_counts=(1, 2, 4, 8, 16),
        timing_images=12,
    )


def mini_scale(seed: int = 3) -> ExperimentScale:
    """A seconds-scale smoke setup for integration tests."""
    return ExperimentScale(
        name="mini",
        corpus=CorpusSpec(
            source_languages=("fr", "nl"),
            target_languages=("en", "nl"),
            pages_per_source_language=8,
            pages_per_target_language=10,
            page_height=96,
            page_width=96,
            degradation=DegradationLevels(),
            seed=seed,
        ),
        train_per_language=6,
        fewshot_n=3,
        fewshot_seed=13,
        split_seed=11,
        train_seeds=(1,),
        patch_config=PatchConfig(patch_height=24, patch_width=24, max_patches=4,
                                 image_height=48, image_width=48),
        binarization=BinarizationParams(window=15, offset=10),
        arch=ARCH_TINY,
        feature_dim=32,
        stage1_config=TrainConfig(epochs=1, batch_size=4, patches_per_image=4),
        stage2_config=TrainConfig(epochs=2, batch_size=4, patches_per_image=4),
        fewshot_only_config=TrainConfig(epochs=1, batch_size=4, patches_per_image=4),
        sweep_counts=(2, 3),
        patch_sweep_counts=(1, 4),
        timing_images=4,
    )


def full_scale(seed: int = 7) -> ExperimentScale:
    """Paper-sized corpus and backbone; hours of CPU time, not used in tests."""
    return ExperimentScale(
        name="full",
        corpus=CorpusSpec(
            source_languages=("nl", "fr", "es", "cs", "bg", "da"),
            target_languages=("en", "de", "it", "nl"),
            pages_per_source_language=500,
            pages_per_target_language=1000,
            page_height=2048,
            page_width=2048,
            degradation=DESK_DEGRADATION,
            seed=seed,
        ),
        train_per_language=350,
        fewshot_n=50,
        fewshot_seed=13,
        split_seed=11,
        train_seeds=(1, 2, 3),
        patch_config=PatchConfig(),  # (256, 256) patches on (1024, 1024) images
        binarization=BinarizationParams(),
        arch=ARCH_RESNET18,
        feature_dim=None,
        stage1_config=TrainConfig(epochs=30, batch_size=8, patches_per_image=16),
        stage2_config=TrainConfig(epochs=100, batch_size=8, patches_per_image=16),
        fewshot_only_config=TrainConfig(epochs=60, batch_size=8, patches_per_image=16),
        sweep_counts=(5, 10, 25, 50),
        patch_sweep_counts=(1, 2, 4, 8, 16),
        timing_images=100,
    )


SCALES = {"desk": desk_scale, "mini": mini_scale, "full": full_scale}


@dataclass
class SweepRow:
    """One (sweep value, variant, seed) evaluation result."""

    parameter: str
    value: int
    variant: str
    seed: int
    report: MetricsReport


def sweep_table(rows: list[SweepRow]) -> str:
    lines = ["parameter\tvalue\tvariant\tseed\taccuracy\tprecision\trecall\tf1"]
    for r in rows:
        m = r.report
        lines.append(f"{r.parameter}\t{r.value}\t{r.variant}\t{r.seed}\t{m.accuracy:.4f}"
                     f"\t{m.macro_precision:.4f}\t{m.macro_recall:.4f}\t{m.macro_f1:.4f}")
    return "\n".join(lines) + "\n"


@dataclass
class PipelineContext:
    """Shared state for sweeps: corpus, splits, and evaluation pools."""

    scale: ExperimentScale
    dataset: ImageDataset
    source_train: ImageDataset
    source_eval: ImageDataset
    target: ImageDataset
    label_space: LabelSpace
    eval_pool: ImageDataset
    eval_prepared_cache: dict = field(default_factory=dict)

    def eval_prepared(self, label_space: LabelSpace) -> PreparedDataset:
        """Preprocessed eval pool per label space (reused across variants)."""
        key = label_space.classes
        if key not in self.eval_prepared_cache:
            self.eval_prepared_cache[key] = PreparedDataset(
                self.eval_pool.subset([e.image_id for e in self.eval_pool.entries
                                       if e.label in label_space]),
                label_space, self.scale.patch_config, self.scale.binarization)
        return self.eval_prepared_cache[key]


def build_context(scale: ExperimentScale, corpus_dir: Path) -> PipelineContext:
    """Generate (or reuse) the corpus and derive splits and eval pools.

    The evaluation pool is fixed to the complement of the largest
    few-shot selection, so accuracies at different shot counts are
    comparable on identical images (selections are nested prefixes).
    """
    manifest_path = Path(corpus_dir) / "manifest.tsv"
    if not manifest_path.is_file():
        generate_synthetic_corpus(scale.corpus, corpus_dir)
    manifest, dataset = load_manifest(manifest_path)
    source = dataset.filter_domain("source")
    target = dataset.filter_domain("target")
    source_train, source_eval = split_source(source, scale.train_per_language,
                                             None, scale.split_seed)
    label_space = scale.corpus.label_space()
    max_fewshot = select_fewshot(target, scale.fewshot_n, scale.fewshot_seed)
    eval_pool = fewshot_eval_pool(target, max_fewshot)
    return PipelineContext(scale=scale, dataset=dataset, source_train=source_train,
                           source_eval=source_eval, target=target,
                           label_space=label_space, eval_pool=eval_pool)


def train_variants(ctx: PipelineContext, n_shots: int, seed: int,
                   variants: tuple[str, ...] = (VARIANT_FEWSHOT, VARIANT_META,
                                                VARIANT_DOCLANGID),
                   ) -> dict[str, LanguageClassifier]:
    """Train the requested variants for one (shot count, seed) cell.

    ResNet-Meta and DocLangID share the stage-1 run; ResNet-FewShot is
    trained from scratch on the few-shot samples alone.
    """
    scale = ctx.scale
    fewshot = select_fewshot(ctx.target, n_shots, scale.fewshot_seed)
    out: dict[str, LanguageClassifier] = {}
    if VARIANT_META in variants or VARIANT_DOCLANGID in variants:
        joint = build_joint_dataset(ctx.source_train, fewshot, ctx.target, ctx.label_space)
        stage1_cfg = replace(scale.stage1_config, seed=seed)
        meta_clf, _ = train_stage1_meta(joint, ctx.label_space, stage1_cfg,
                                        scale.patch_config, scale.binarization,
                                        arch=scale.arch, feature_dim=scale.feature_dim)
        if VARIANT_META in variants:
            out[VARIANT_META] = meta_clf
        if VARIANT_DOCLANGID in variants:
            stage2_cfg = replace(scale.stage2_config, seed=seed)
            doclangid_clf, _ = train_stage2_fewshot(meta_clf, fewshot, ctx.target, stage2_cfg)
            out[VARIANT_DOCLANGID] = doclangid_clf
    if VARIANT_FEWSHOT in variants:
        fs_cfg = replace(scale.fewshot_only_config, seed=seed)
        fs_clf, _ = train_fewshot_only(fewshot, ctx.target, fs_cfg,
                                       scale.patch_config, scale.binarization,
                                       arch=scale.arch, feature_dim=scale.feature_dim)
        out[VARIANT_FEWSHOT] = fs_clf
    return out


def sweep_fewshot(counts, ctx: PipelineContext,
                  seeds: tuple[int, ...] | None = None,
                  checkpoint_dir: Path | None = None) -> list[SweepRow]:
    """Train and evaluate every variant at each few-shot count.

    Counts must be unique and feasible for the target pool; seeds
    default to the scale's train seeds.
    """
    counts = list(counts)
    if len(set(counts)) != len(counts):
        raise DataError(f"duplicated few-shot counts: {counts}")
    for n in counts:
        if n < 1 or n > ctx.scale.fewshot_n:
            raise DataError(f"few-shot count {n} outside feasible range "
                            f"[1, {ctx.scale.fewshot_n}] (eval pool is fixed by the "
                            f"largest selection)")
    seeds = seeds or ctx.scale.train_seeds
    rows: list[SweepRow] = []
    for n in counts:
        for seed in seeds:
            classifiers = train_variants(ctx, n, seed)
            for variant, clf in classifiers.items():
                prepared = ctx.eval_prepared(clf.label_space)
                report = evaluate(clf, prepared.dataset, prepared=prepared)
                report.variant = variant
                report.seeds = {"train": seed, "fewshot": ctx.scale.fewshot_seed,
                                "corpus": ctx.scale.corpus.seed}
                rows.append(SweepRow(parameter="fewshot_n", value=n, variant=variant,
                                     seed=seed, report=report))
                if checkpoint_dir is not None:
                    checkpoint_dir.mkdir(parents=True, exist_ok=True)
                    save_checkpoint(clf, checkpoint_dir /
                                    f"{variant}_n{n}_seed{seed}.ckpt")
    return rows


def sweep_patches(patch_counts, classifiers: dict[str, LanguageClassifier],
                  ctx: PipelineContext, seed: int) -> list[SweepRow]:
    """Evaluation-only sweep over max_patches; trains nothing."""
    grid_max = ctx.scale.patch_config.grid_size
    rows: list[SweepRow] = []
    for count in patch_counts:
        if count < 1 or count > grid_max:
            raise DataError(f"patch count {count} exceeds the {grid_max}-patch grid")
    for count in patch_counts:
        cfg = ctx.scale.patch_config.with_max_patches(count)
        for variant, clf in classifiers.items():
            prepared = ctx.eval_prepared(clf.label_space)
            report = evaluate(clf, prepared.dataset, patch_cfg=cfg, prepared=prepared)
            report.variant = variant
            rows.append(SweepRow(parameter="max_patches", value=count, variant=variant,
                                 seed=seed, report=report))
    return rows


def bench_doclangid(clf: LanguageClassifier, dataset: ImageDataset, image_ids,
                    repetitions: int = 1, dataset_tag: str = "target") -> TimingRecord:
    """Table-2-style timing of the classifier on raw images."""
    raw_images = [dataset.load(i) for i in image_ids]

    def preprocess_fn(image):
        return resize_to_working(preprocess_pipeline(image, clf.binarization),
                                 clf.patch_config)

    def predict_fn(working):
        patches = extract_patches(working, clf.patch_config).patches
        fused = fuse_distributions(clf.patch_probabilities(patches))
        return clf.label_space.classes[int(np.argmax(fused))]

    return time_inference(preprocess_fn, predict_fn, raw_images, repetitions,
                          method="doclangid", dataset_tag=dataset_tag)


def _mean_accuracy(rows: list[SweepRow], variant: str, value: int) -> float:
    accs = [r.report.accuracy for r in rows if r.variant == variant and r.value == value]
    return float(np.mean(accs)) if accs else float("nan")


def run_reproduction(scale_name: str, out_dir: Path, argv_line: str = "",
                     plots: bool = False, seed_override: int | None = None) -> dict:
    """Execute the full experiment pipeline at the named scale.

    Returns the summary dict; writes tables, reports, checkpoints, the
    config snapshot, a command transcript, and a file manifest under
    out_dir. Timing values live only in tables/timing.tsv so every other
    output is byte-stable across reruns.
    """
    if scale_name not in SCALES:
        raise DataError(f"unknown scale {scale_name!r}; choose from {sorted(SCALES)}")
    scale = SCALES[scale_name]() if seed_override is None else SCALES[scale_name](seed_override)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "tables").mkdir(exist_ok=True)
    (out_dir / "reports").mkdir(exist_ok=True)

    (out_dir / "config.json").write_text(
        json.dumps(scale.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "repro.sh").write_text(
        "#!/bin/sh\n# command transcript for this run\n"
        f"{argv_line or f'doclangid reproduce-paper --scale {scale_name} --out {out_dir}'}\n",
        encoding="utf-8")

    ctx = build_context(scale, out_dir / "corpus")

    # Few-shot sweep covers the headline grid: the largest count feeds
    # the variant-ordering table, the full grid feeds the trend table.
    sweep_rows = sweep_fewshot(scale.sweep_counts, ctx,
                               checkpoint_dir=out_dir / "checkpoints")
    (out_dir / "tables" / "fewshot_sweep.tsv").write_text(sweep_table(sweep_rows),
                                                          encoding="utf-8")

    headline = [r for r in sweep_rows if r.value == max(scale.sweep_counts)]
    variant_means: dict[str, float] = {
        v: _mean_accuracy(sweep_rows, v, max(scale.sweep_counts))
        for v in (VARIANT_FEWSHOT, VARIANT_META, VARIANT_DOCLANGID)
    }
    mean_reports = []
    for variant in (VARIANT_FEWSHOT, VARIANT_META, VARIANT_DOCLANGID):
        per_seed = [r.report for r in headline if r.variant == variant]
        merged = MetricsReport.from_confusion(
            np.sum([r.confusion for r in per_seed], axis=0),
            per_seed[0].classes, per_seed[0].eval_classes, variant=variant,
            seeds={"train_seeds": list(scale.train_seeds)})
        mean_reports.append(merged)
    (out_dir / "tables" / "table1.tsv").write_text(metrics_table(mean_reports),
                                                   encoding="utf-8")
    (out_dir / "reports" / "headline.json").write_text(
        json.dumps([r.to_dict() for r in mean_reports], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")

    # Patch sweep on the first seed's saved checkpoints, evaluation only.
    first_seed = scale.train_seeds[0]
    patch_classifiers = {
        variant: load_checkpoint(out_dir / "checkpoints" /
                                 f"{variant}_n{max(scale.sweep_counts)}_seed{first_seed}.ckpt")
        for variant in (VARIANT_FEWSHOT, VARIANT_META, VARIANT_DOCLANGID)
    }
    patch_rows = sweep_patches(scale.patch_sweep_counts, patch_classifiers, ctx, first_seed)
    (out_dir / "tables" / "patch_sweep.tsv").write_text(sweep_table(patch_rows),
                                                        encoding="utf-8")

    # Timing (wall-clock; excluded from determinism comparisons).
    doclangid_clf = patch_classifiers[VARIANT_DOCLANGID]
    timing_ids = [e.image_id for e in ctx.eval_pool.entries[: scale.timing_images]]
    timing = bench_doclangid(doclangid_clf, ctx.dataset, timing_ids,
                             dataset_tag=f"synthetic-{scale.name}")
    (out_dir / "tables" / "timing.tsv").write_text(timing_table([timing]), encoding="utf-8")

    if plots:
        _emit_plots(out_dir, mean_reports, sweep_rows, patch_rows)

    summary = {
        "scale": scale.name,
        "version": __version__,
        "variant_mean_accuracy": variant_means,
        "fewshot_counts": list(scale.sweep_counts),
        "doclangid_accuracy_by_count": {
            str(n): _mean_accuracy(sweep_rows, VARIANT_DOCLANGID, n)
            for n in scale.sweep_counts
        },
        "patch_counts": list(scale.patch_sweep_counts),
        "doclangid_accuracy_by_patches": {
            str(n): _mean_accuracy(patch_rows, VARIANT_DOCLANGID, n)
            for n in scale.patch_sweep_counts
        },
        "eval_pool_size": len(ctx.eval_pool),
        "notes": "timing values are in tables/timing.tsv only; the OCR baseline "
                 "needs an external engine and is benchmarked via `doclangid bench`",
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")

    produced = sorted(str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file())
    (out_dir / "FILES.txt").write_text("\n".join(produced) + "\n", encoding="utf-8")
    return summary


def _emit_plots(out_dir: Path, mean_reports, sweep_rows, patch_rows) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir = out_dir / "plots"
    plot_dir.mkdir(exist_ok=True)

    from doclangid.evaluation import _plot_per_class
    _plot_per_class(mean_reports, plot_dir / "per_class.png")

    for rows, name, xlabel in ((sweep_rows, "fewshot_sweep.png", "few-shot samples per language"),
                               (patch_rows, "patch_sweep.png", "patches per image")):
        fig, ax = plt.subplots(figsize=(6, 4))
        variants = sorted({r.variant for r in rows})
        values = sorted({r.value for r in rows})
        for variant in variants:
            ys = [_mean_accuracy(rows, variant, v) for v in values]
            ax.plot(values, ys, marker="o", label=variant)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.0)
        ax.legend()
        fig.tight_layout()
        fig.savefig(plot_dir / name)
        plt.close(fig)
