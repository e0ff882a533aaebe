"""Command-line entry point for the full pipeline.

Sub-commands: corpus (generate/split/fewshot), preprocess, train
(meta/fewshot-adapt/fewshot-only), predict, eval, sweep
(fewshot/patches), bench, baseline identify, and reproduce-paper.
Every run writes a resolved-config snapshot plus a repro.sh command
transcript into its output directory. Exit codes: 0 success, 1 usage
error, 2 data error, 3 external-engine error. Failures additionally
print one machine-parseable line: ``doclangid-error<TAB>code<TAB>message``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np

from doclangid import __version__
from doclangid.baseline import (
    CommandEngine,
    baseline_identify,
    default_script_groups,
    train_bundled_ngram_model,
)
from doclangid.corpus import (
    CorpusSpec,
    load_manifest,
    generate_synthetic_corpus,
    select_fewshot,
    fewshot_eval_pool,
    split_source,
    build_joint_dataset,
)
from doclangid.errors import DataError, EngineError, UsageError
from doclangid.evaluation import evaluate, metrics_table, time_inference, timing_table
from doclangid.experiment import (
    SCALES,
    bench_doclangid,
    build_context,
    run_reproduction,
    sweep_fewshot,
    sweep_patches,
    sweep_table,
)
from doclangid.model import load_checkpoint, save_checkpoint
from doclangid.patching import PatchConfig, predict_image
from doclangid.preprocess import BinarizationParams, preprocess_pipeline
from doclangid.training import (
    TrainConfig,
    train_fewshot_only,
    train_stage1_meta,
    train_stage2_fewshot,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENGINE = 3


def _default_out(subcommand: str) -> Path:
    root = os.environ.get("DOCLANGID_OUT_ROOT", "runs")
    return Path(root) / subcommand


def _write_provenance(out_dir: Path, argv: list[str], config: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps({"version": __version__, **config}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    (out_dir / "repro.sh").write_text(
        "#!/bin/sh\n# command transcript for this run\n"
        f"doclangid {' '.join(argv)}\n", encoding="utf-8")


def _read_image(path: str) -> np.ndarray:
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise DataError(f"cannot read image: {path}")
    if image.ndim == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    return image


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from None


def _patch_config_from(raw: dict | None) -> PatchConfig:
    return PatchConfig(**raw) if raw else PatchConfig()


def _binarization_from(raw: dict | None) -> BinarizationParams:
    return BinarizationParams(**raw) if raw else BinarizationParams()


def cmd_corpus_generate(args, argv) -> int:
    if args.spec:
        spec = CorpusSpec.from_dict(_load_json(args.spec))
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        spec = CorpusSpec(seed=args.seed if args.seed is not None else 0)
    out_dir = Path(args.out)
    manifest = generate_synthetic_corpus(spec, out_dir)
    _write_provenance(out_dir, argv, {"spec": spec.to_dict()})
    print(f"generated {len(manifest.entries)} pages under {out_dir}")
    return EXIT_OK


def cmd_corpus_split(args, argv) -> int:
    _, dataset = load_manifest(args.manifest)
    source = dataset.filter_domain("source")
    train, eval_split = split_source(source, args.train_per_language,
                                     args.eval_per_language, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train_ids.txt").write_text(
        "\n".join(e.image_id for e in train.entries) + "\n", encoding="utf-8")
    (out_dir / "eval_ids.txt").write_text(
        "\n".join(e.image_id for e in eval_split.entries) + "\n", encoding="utf-8")
    _write_provenance(out_dir, argv, {
        "manifest": args.manifest, "train_per_language": args.train_per_language,
        "eval_per_language": args.eval_per_language, "seed": args.seed})
    print(f"split: {len(train)} train / {len(eval_split)} eval ids under {out_dir}")
    return EXIT_OK


def cmd_corpus_fewshot(args, argv) -> int:
    _, dataset = load_manifest(args.manifest)
    target = dataset.filter_domain("target")
    fewshot = select_fewshot(target, args.n, args.seed)
    pool = fewshot_eval_pool(target, fewshot)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"n_per_language": fewshot.n_per_language, "seed": fewshot.seed,
               "samples": {lang: list(ids) for lang, ids in sorted(fewshot.samples.items())}}
    (out_dir / "fewshot.json").write_text(json.dumps(payload, indent=2) + "\n",
                                          encoding="utf-8")
    (out_dir / "eval_pool_ids.txt").write_text(
        "\n".join(e.image_id for e in pool.entries) + "\n", encoding="utf-8")
    _write_provenance(out_dir, argv, {"manifest": args.manifest, "n": args.n,
                                      "seed": args.seed})
    print(f"selected {len(fewshot)} few-shot ids; eval pool {len(pool)} under {out_dir}")
    return EXIT_OK


def cmd_preprocess(args, argv) -> int:
    params = BinarizationParams(window=args.window, offset=args.offset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    in_path = Path(args.in_path)
    if in_path.is_file() and in_path.suffix == ".tsv":
        _, dataset = load_manifest(in_path)
        sources = [(e.image_id + ".png", dataset.load(e.image_id)) for e in dataset.entries]
    elif in_path.is_dir():
        sources = [(p.name, _read_image(str(p)))
                   for p in sorted(in_path.iterdir())
                   if p.suffix.lower() in (".png", ".pgm", ".bmp", ".tif", ".tiff")]
    else:
        raise DataError(f"--in must be a directory or a manifest .tsv, got {in_path}")
    if not sources:
        raise DataError(f"no images found under {in_path}")
    for name, image in sources:
        cv2.imwrite(str(out_dir / name), preprocess_pipeline(image, params))
    _write_provenance(out_dir, argv, {"in": str(in_path), "window": args.window,
                                      "offset": args.offset})
    print(f"preprocessed {len(sources)} images into {out_dir}")
    return EXIT_OK


def _train_common(config: dict):
    manifest_path = config.get("manifest")
    if not manifest_path:
        raise DataError("train config needs a 'manifest' path")
    _, dataset = load_manifest(manifest_path)
    patch_cfg = _patch_config_from(config.get("patch_config"))
    binarization = _binarization_from(config.get("binarization"))
    train_cfg = TrainConfig.from_dict(config.get("train", {}))
    return dataset, patch_cfg, binarization, train_cfg


def cmd_train(args, argv) -> int:
    config = _load_json(args.config)
    dataset, patch_cfg, binarization, train_cfg = _train_common(config)
    target = dataset.filter_domain("target")
    arch = config.get("arch", "tiny_resnet")
    feature_dim = config.get("feature_dim")

    if args.mode == "meta":
        source = dataset.filter_domain("source")
        train_split, _ = split_source(source, config["train_per_language"],
                                      config.get("eval_per_language"),
                                      config.get("split_seed", 0))
        fewshot = select_fewshot(target, config["fewshot_n"], config.get("fewshot_seed", 0))
        from doclangid.corpus import LabelSpace
        label_space = LabelSpace.from_domains(
            tuple(dict.fromkeys(e.label for e in source.entries)),
            tuple(sorted(fewshot.samples)))
        joint = build_joint_dataset(train_split, fewshot, target, label_space)
        clf, log = train_stage1_meta(joint, label_space, train_cfg, patch_cfg, binarization,
                                     arch=arch, feature_dim=feature_dim)
    elif args.mode == "fewshot-adapt":
        stage1_path = config.get("stage1_checkpoint")
        if not stage1_path:
            raise DataError("fewshot-adapt config needs 'stage1_checkpoint'")
        stage1 = load_checkpoint(stage1_path)
        fewshot = select_fewshot(target, config["fewshot_n"], config.get("fewshot_seed", 0))
        clf, log = train_stage2_fewshot(stage1, fewshot, target, train_cfg)
    elif args.mode == "fewshot-only":
        fewshot = select_fewshot(target, config["fewshot_n"], config.get("fewshot_seed", 0))
        clf, log = train_fewshot_only(fewshot, target, train_cfg, patch_cfg, binarization,
                                      arch=arch, feature_dim=feature_dim)
    else:
        raise UsageError(f"unknown train mode {args.mode!r}")

    ckpt_path = Path(args.out)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(clf, ckpt_path)
    log_path = ckpt_path.with_suffix(".trainlog.tsv")
    log_path.write_text("\n".join(log.lines()) + "\n", encoding="utf-8")
    _write_provenance(ckpt_path.parent, argv, {"train_config": config, "mode": args.mode})
    final = log.records[-1]
    print(f"trained {clf.metadata['variant']}: final loss {final.loss:.4f}, "
          f"train accuracy {final.accuracy:.3f}; checkpoint at {ckpt_path}")
    return EXIT_OK


def cmd_predict(args, argv) -> int:
    clf = load_checkpoint(args.checkpoint)
    image = _read_image(args.image)
    cfg = clf.patch_config
    if args.patches is not None:
        cfg = cfg.with_max_patches(args.patches)
    language, fused = predict_image(clf, image, cfg)
    print(f"language\t{language}")
    for code, p in zip(clf.label_space.classes, fused):
        print(f"probability\t{code}\t{p:.6f}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    clf = load_checkpoint(args.checkpoint)
    _, dataset = load_manifest(args.manifest)
    if args.domain:
        dataset = dataset.filter_domain(args.domain)
    if args.ids:
        wanted = [line.strip() for line in Path(args.ids).read_text(encoding="utf-8").splitlines()
                  if line.strip()]
        dataset = dataset.subset(wanted)
    dataset = dataset.subset([e.image_id for e in dataset.entries
                              if e.label in clf.label_space])
    cfg = clf.patch_config.with_max_patches(args.patches) if args.patches else None
    report = evaluate(clf, dataset, patch_cfg=cfg)
    out_dir = Path(args.out) if args.out else _default_out("eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.tsv").write_text(metrics_table([report]), encoding="utf-8")
    (out_dir / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_provenance(out_dir, argv, {"checkpoint": args.checkpoint,
                                      "manifest": args.manifest, "patches": args.patches})
    print(metrics_table([report]), end="")
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    out_dir = Path(args.out) if args.out else _default_out(f"sweep-{args.kind}")
    scale = SCALES[args.scale]()
    ctx = build_context(scale, out_dir / "corpus")
    if args.kind == "fewshot":
        counts = [int(c) for c in args.counts.split(",")] if args.counts else scale.sweep_counts
        rows = sweep_fewshot(counts, ctx)
        table_name = "fewshot_sweep.tsv"
    else:
        counts = [int(c) for c in args.counts.split(",")] if args.counts \
            else scale.patch_sweep_counts
        if not args.checkpoint:
            raise UsageError("sweep patches needs at least one --checkpoint")
        classifiers = {}
        for path in args.checkpoint:
            clf = load_checkpoint(path)
            classifiers[str(clf.metadata.get("variant", Path(path).stem))] = clf
        rows = sweep_patches(counts, classifiers, ctx, seed=scale.train_seeds[0])
        table_name = "patch_sweep.tsv"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / table_name).write_text(sweep_table(rows), encoding="utf-8")
    _write_provenance(out_dir, argv, {"kind": args.kind, "scale": args.scale,
                                      "counts": list(counts)})
    print(sweep_table(rows), end="")
    return EXIT_OK


def cmd_bench(args, argv) -> int:
    methods = args.methods.split(",")
    records = []
    out_dir = Path(args.out) if args.out else _default_out("bench")
    out_dir.mkdir(parents=True, exist_ok=True)
    _, dataset = load_manifest(args.manifest)
    ids = [e.image_id for e in dataset.entries[: args.images]]
    for method in methods:
        if method == "doclangid":
            if not args.checkpoint:
                raise UsageError("bench doclangid needs --checkpoint")
            clf = load_checkpoint(args.checkpoint)
            records.append(bench_doclangid(clf, dataset, ids, repetitions=args.repetitions,
                                           dataset_tag=Path(args.manifest).parent.name))
        elif method == "baseline":
            if not args.engine_cmd:
                raise EngineError("bench baseline needs --engine-cmd (no engine configured)")
            engine = CommandEngine(args.engine_cmd, timeout=args.engine_timeout)
            groups = default_script_groups()
            model = train_bundled_ngram_model()
            images = [dataset.load(i) for i in ids]

            def preprocess_fn(image):
                return preprocess_pipeline(image)

            def predict_fn(binary):
                return baseline_identify(binary, groups, engine, model).language

            records.append(time_inference(preprocess_fn, predict_fn, images,
                                          repetitions=args.repetitions, method="baseline",
                                          dataset_tag=Path(args.manifest).parent.name))
        else:
            raise UsageError(f"unknown bench method {method!r}")
    (out_dir / "timing.tsv").write_text(timing_table(records), encoding="utf-8")
    _write_provenance(out_dir, argv, {"methods": methods, "manifest": args.manifest,
                                      "images": args.images})
    print(timing_table(records), end="")
    return EXIT_OK


def cmd_baseline_identify(args, argv) -> int:
    if not args.engine_cmd:
        raise EngineError("baseline identify needs --engine-cmd (no engine configured)")
    engine = CommandEngine(args.engine_cmd, timeout=args.engine_timeout)
    model = train_bundled_ngram_model()
    result = baseline_identify(args.image, default_script_groups(), engine, model)
    print(f"language\t{result.language}")
    print(f"score\t{result.score:.4f}")
    print(f"script_group\t{result.ocr.script_group}")
    print(f"mean_confidence\t{result.ocr.mean_confidence:.2f}")
    return EXIT_OK


def cmd_reproduce(args, argv) -> int:
    out_dir = Path(args.out) if args.out else _default_out(f"reproduce-{args.scale}")
    summary = run_reproduction(args.scale, out_dir, argv_line="doclangid " + " ".join(argv),
                               plots=args.plots)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doclangid",
        description="Few-shot language identification for document images")
    parser.add_argument("--version", action="version", version=f"doclangid {__version__}")
    sub = parser.add_subparsers(dest="command")

    corpus = sub.add_parser("corpus", help="generate and manage the synthetic corpus")
    corpus_sub = corpus.add_subparsers(dest="corpus_command")
    gen = corpus_sub.add_parser("generate", help="render the synthetic two-domain corpus")
    gen.add_argument("--spec", help="corpus spec JSON file (defaults built in)")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None)
    split = corpus_sub.add_parser("split", help="split the source domain per language")
    split.add_argument("--manifest", required=True)
    split.add_argument("--train-per-language", type=int, required=True)
    split.add_argument("--eval-per-language", type=int, default=None)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--out", required=True)
    fewshot = corpus_sub.add_parser("fewshot", help="select few-shot target samples")
    fewshot.add_argument("--manifest", required=True)
    fewshot.add_argument("--n", type=int, required=True)
    fewshot.add_argument("--seed", type=int, default=0)
    fewshot.add_argument("--out", required=True)

    pre = sub.add_parser("preprocess", help="grayscale + adaptive binarization")
    pre.add_argument("--in", dest="in_path", required=True,
                     help="image directory or manifest .tsv")
    pre.add_argument("--out", required=True)
    pre.add_argument("--window", type=int, default=31)
    pre.add_argument("--offset", type=int, default=10)

    train = sub.add_parser("train", help="train one variant")
    train.add_argument("mode", choices=["meta", "fewshot-adapt", "fewshot-only"])
    train.add_argument("--config", required=True, help="training config JSON")
    train.add_argument("--out", required=True, help="checkpoint output path")

    predict = sub.add_parser("predict", help="classify one image")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--image", required=True)
    predict.add_argument("--patches", type=int, default=None)

    evalp = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    evalp.add_argument("--checkpoint", required=True)
    evalp.add_argument("--manifest", required=True)
    evalp.add_argument("--patches", type=int, default=None)
    evalp.add_argument("--domain", choices=["source", "target"], default=None)
    evalp.add_argument("--ids", help="file with one image id per line")
    evalp.add_argument("--out", default=None)

    sweep = sub.add_parser("sweep", help="few-shot-count or patch-count sweeps")
    sweep.add_argument("kind", choices=["fewshot", "patches"])
    sweep.add_argument("--scale", choices=sorted(SCALES), default="desk")
    sweep.add_argument("--counts", help="comma-separated values")
    sweep.add_argument("--checkpoint", action="append",
                       help="checkpoint(s) for the patches sweep")
    sweep.add_argument("--out", default=None)

    bench = sub.add_parser("bench", help="inference timing comparison")
    bench.add_argument("--methods", default="doclangid")
    bench.add_argument("--manifest", required=True)
    bench.add_argument("--checkpoint", default=None)
    bench.add_argument("--images", type=int, default=20)
    bench.add_argument("--repetitions", type=int, default=1)
    bench.add_argument("--engine-cmd", default=None)
    bench.add_argument("--engine-timeout", type=float, default=60.0)
    bench.add_argument("--out", default=None)

    baseline = sub.add_parser("baseline", help="OCR + trigram baseline")
    baseline_sub = baseline.add_subparsers(dest="baseline_command")
    ident = baseline_sub.add_parser("identify", help="identify one image's language")
    ident.add_argument("--image", required=True)
    ident.add_argument("--engine-cmd", default=None)
    ident.add_argument("--engine-timeout", type=float, default=60.0)

    repro = sub.add_parser("reproduce-paper", help="run the full experiment pipeline")
    repro.add_argument("--scale", choices=sorted(SCALES), default="desk")
    repro.add_argument("--out", default=None)
    repro.add_argument("--plots", action="store_true")

    return parser


def _dispatch(args, argv) -> int:
    if args.command == "corpus":
        if args.corpus_command == "generate":
            return cmd_corpus_generate(args, argv)
        if args.corpus_command == "split":
            return cmd_corpus_split(args, argv)
        if args.corpus_command == "fewshot":
            return cmd_corpus_fewshot(args, argv)
        raise UsageError("corpus needs a sub-command (generate/split/fewshot)")
    if args.command == "preprocess":
        return cmd_preprocess(args, argv)
    if args.command == "train":
        return cmd_train(args, argv)
    if args.command == "predict":
        return cmd_predict(args, argv)
    if args.command == "eval":
        return cmd_eval(args, argv)
    if args.command == "sweep":
        return cmd_sweep(args, argv)
    if args.command == "bench":
        return cmd_bench(args, argv)
    if args.command == "baseline":
        if args.baseline_command == "identify":
            return cmd_baseline_identify(args, argv)
        raise UsageError("baseline needs a sub-command (identify)")
    if args.command == "reproduce-paper":
        return cmd_reproduce(args, argv)
    raise UsageError("no sub-command given")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        print("doclangid-error\tusage\tno sub-command given", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed the message; normalize unknown flags to 1
        return EXIT_USAGE if exc.code != 0 else EXIT_OK
    try:
        return _dispatch(args, argv)
    except UsageError as exc:
        print(f"doclangid-error\tusage\t{exc}", file=sys.stderr)
        return EXIT_USAGE
    except EngineError as exc:
        print(f"doclangid-error\tengine\t{exc}", file=sys.stderr)
        return EXIT_ENGINE
    except DataError as exc:
        print(f"doclangid-error\tdata\t{exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
