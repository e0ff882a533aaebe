"""Synthetic two-domain corpus generation, manifests, splits, and few-shot selection.

The corpus mirrors the experimental setup: a text-rich labeled source
domain and a picture-heavy target domain that share at least one
language while the target also contains languages unseen in the source.
Everything is a pure function of the corpus seed: per-page RNG streams
are derived from (seed, domain, language, page index), so regeneration
is byte-identical and generation may parallelize across pages.

Manifests are line-oriented tab-separated text with an explicit schema
version (see MANIFEST_FORMAT below), diff-friendly and language-neutral.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import cv2
import numpy as np

from doclangid.errors import DataError
from doclangid.pagegen import (
    LAYOUT_PICTURE_HEAVY,
    LAYOUT_TEXT_RICH,
    LAYOUTS,
    DegradationLevels,
    degrade_page,
    render_page,
)

MANIFEST_FORMAT = "doclangid-manifest"
MANIFEST_VERSION = 1

DOMAIN_SOURCE = "source"
DOMAIN_TARGET = "target"
DOMAINS = (DOMAIN_SOURCE, DOMAIN_TARGET)

#: Languages with bundled seed-sentence files.
BUNDLED_LANGUAGES = ("en", "fr", "de", "nl", "es", "cs", "bg", "da", "pl", "it")


def _lang_key(code: str) -> int:
    """Stable integer for seed derivation, independent of Python hashing."""
    return int.from_bytes(hashlib.sha256(code.encode("utf-8")).digest()[:4], "big")


def load_seed_sentences(code: str) -> list[str]:
    """Bundled public-domain-style sentences for one language, one per line."""
    ref = resources.files("doclangid").joinpath(f"seed_texts/{code}.txt")
    if not ref.is_file():
        raise DataError(f"no bundled seed text for language {code!r}")
    lines = [line.strip() for line in ref.read_text(encoding="utf-8").splitlines()]
    return [line for line in lines if line]


@dataclass(frozen=True)
class LabelSpace:
    """Ordered union of source and target languages with index mapping.

    Classes keep source order first, then target languages unseen in the
    source. With ``strict_sum=True`` shared languages additionally get a
    separate ``<code>@target`` class (compatibility mode; not the
    default because one language is one class regardless of domain).
    """

    source_languages: tuple[str, ...]
    target_languages: tuple[str, ...]
    classes: tuple[str, ...]

    @classmethod
    def from_domains(cls, source_languages, target_languages, strict_sum: bool = False) -> "LabelSpace":
        source = tuple(source_languages)
        target = tuple(target_languages)
        for name, langs in (("source", source), ("target", target)):
            if len(set(langs)) != len(langs):
                raise DataError(f"duplicate language codes in {name} domain: {langs}")
        if strict_sum:
            classes = source + tuple(
                f"{code}@target" if code in source else code for code in target
            )
        else:
            classes = source + tuple(code for code in target if code not in source)
        return cls(source_languages=source, target_languages=target, classes=classes)

    @property
    def k(self) -> int:
        return len(self.classes)

    def index(self, code: str) -> int:
        try:
            return self.classes.index(code)
        except ValueError:
            raise DataError(f"language {code!r} not in label space {self.classes}") from None

    def __contains__(self, code: str) -> bool:
        return code in self.classes


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str
    label: str
    domain: str


@dataclass(frozen=True)
class Manifest:
    version: int
    seed: int
    counts: dict[tuple[str, str], int]  # (domain, language) -> declared page count
    entries: tuple[ManifestEntry, ...]

    def languages(self, domain: str) -> tuple[str, ...]:
        return tuple(lang for dom, lang in self.counts if dom == domain)


@dataclass(frozen=True)
class CorpusSpec:
    """Declarative description of the synthetic corpus."""

    source_languages: tuple[str, ...] = ("nl", "fr", "es", "cs", "bg", "da")
    target_languages: tuple[str, ...] = ("en", "de", "it", "nl")
    pages_per_source_language: int = 100
    pages_per_target_language: int = 200
    page_height: int = 192
    page_width: int = 192
    source_layout: str = LAYOUT_TEXT_RICH
    target_layout: str = LAYOUT_PICTURE_HEAVY
    degradation: DegradationLevels = field(default_factory=DegradationLevels)
    seed: int = 0

    def __post_init__(self) -> None:
        if not set(self.source_languages) & set(self.target_languages):
            raise DataError("domains must share at least one language")
        if not set(self.target_languages) - set(self.source_languages):
            raise DataError("at least one target language must be absent from the source")
        for layout in (self.source_layout, self.target_layout):
            if layout not in LAYOUTS:
                raise DataError(f"unknown layout {layout!r}")
        if self.pages_per_source_language < 1 or self.pages_per_target_language < 1:
            raise DataError("page counts must be positive")
        if self.page_height < 32 or self.page_width < 32:
            raise DataError("page size must be at least 32x32")

    def label_space(self, strict_sum: bool = False) -> LabelSpace:
        return LabelSpace.from_domains(self.source_languages, self.target_languages, strict_sum)

    def to_dict(self) -> dict:
        return {
            "source_languages": list(self.source_languages),
            "target_languages": list(self.target_languages),
            "pages_per_source_language": self.pages_per_source_language,
            "pages_per_target_language": self.pages_per_target_language,
            "page_height": self.page_height,
            "page_width": self.page_width,
            "source_layout": self.source_layout,
            "target_layout": self.target_layout,
            "degradation": {
                "noise_prob": self.degradation.noise_prob,
                "blur_radius": list(self.degradation.blur_radius),
                "contrast_jitter": list(self.degradation.contrast_jitter),
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CorpusSpec":
        degradation = raw.get("degradation", {})
        return cls(
            source_languages=tuple(raw["source_languages"]),
            target_languages=tuple(raw["target_languages"]),
            pages_per_source_language=int(raw["pages_per_source_language"]),
            pages_per_target_language=int(raw["pages_per_target_language"]),
            page_height=int(raw["page_height"]),
            page_width=int(raw["page_width"]),
            source_layout=raw.get("source_layout", LAYOUT_TEXT_RICH),
            target_layout=raw.get("target_layout", LAYOUT_PICTURE_HEAVY),
            degradation=DegradationLevels(
                noise_prob=float(degradation.get("noise_prob", 0.0)),
                blur_radius=tuple(degradation.get("blur_radius", (0.0, 0.0))),
                contrast_jitter=tuple(degradation.get("contrast_jitter", (0.0, 0.0))),
            ),
            seed=int(raw["seed"]),
        )


@dataclass(frozen=True)
class FewShotSet:
    """Seeded selection of n target-domain samples per target language."""

    n_per_language: int
    seed: int
    samples: dict[str, tuple[str, ...]]

    def all_ids(self) -> frozenset[str]:
        return frozenset(i for ids in self.samples.values() for i in ids)

    def __len__(self) -> int:
        return sum(len(ids) for ids in self.samples.values())


class ImageDataset:
    """Lazy, cached access to the images behind a set of manifest entries.

    Subsets share the parent's decode cache, so the same page is read
    from disk at most once per process. Entries are immutable; instances
    are safe to share across threads once constructed.
    """

    def __init__(self, root: Path, entries, _cache: dict | None = None):
        self.root = Path(root)
        self.entries: tuple[ManifestEntry, ...] = tuple(entries)
        self._by_id = {e.image_id: e for e in self.entries}
        self._cache = _cache if _cache is not None else {}

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, image_id: str) -> ManifestEntry:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise DataError(f"unknown image id {image_id!r}") from None

    def load(self, image_id: str) -> np.ndarray:
        entry = self.entry(image_id)
        cached = self._cache.get(image_id)
        if cached is None:
            path = self.root / entry.path
            cached = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
            if cached is None:
                raise DataError(f"image {image_id!r} at {path} is missing or undecodable")
            self._cache[image_id] = cached
        return cached

    def subset(self, ids) -> "ImageDataset":
        wanted = set(ids)
        entries = [e for e in self.entries if e.image_id in wanted]
        missing = wanted - {e.image_id for e in entries}
        if missing:
            raise DataError(f"ids not in dataset: {sorted(missing)[:5]}")
        return ImageDataset(self.root, entries, _cache=self._cache)

    def filter_domain(self, domain: str) -> "ImageDataset":
        return ImageDataset(self.root, [e for e in self.entries if e.domain == domain],
                            _cache=self._cache)

    def by_language(self) -> dict[str, list[ManifestEntry]]:
        grouped: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            grouped.setdefault(e.label, []).append(e)
        return grouped

    def labels(self) -> tuple[str, ...]:
        seen: list[str] = []
        for e in self.entries:
            if e.label not in seen:
                seen.append(e.label)
        return tuple(seen)


def _page_rng(seed: int, domain: str, lang: str, page: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed, DOMAINS.index(domain), _lang_key(lang), page])
    return np.random.Generator(np.random.PCG64(ss))


def sample_passage(sentences: list[str], rng: np.random.Generator, min_chars: int) -> str:
    """Consecutive sentences starting at a random index, cyclically, >= min_chars."""
    start = int(rng.integers(0, len(sentences)))
    parts: list[str] = []
    total = 0
    i = start
    while total < min_chars:
        s = sentences[i % len(sentences)]
        parts.append(s)
        total += len(s) + 1
        i += 1
    return " ".join(parts)


def render_corpus_page(spec: CorpusSpec, domain: str, lang: str, page: int,
                       sentences: list[str]) -> np.ndarray:
    """Render one degraded page; pure function of (spec, domain, lang, page)."""
    rng = _page_rng(spec.seed, domain, lang, page)
    layout = spec.source_layout if domain == DOMAIN_SOURCE else spec.target_layout
    # Text-rich pages get enough text to fill the page; picture-heavy
    # pages only carry a few caption lines.
    budget = (spec.page_height * spec.page_width) // 100 if layout == LAYOUT_TEXT_RICH else 60
    text = sample_passage(sentences, rng, budget)
    clean = render_page(spec.page_height, spec.page_width, text, layout, rng)
    return degrade_page(clean, spec.degradation, rng)


def generate_synthetic_corpus(spec: CorpusSpec, out_dir: Path) -> Manifest:
    """Write page images plus a manifest; byte-identical across runs.

    Raises DataError when a requested language has no bundled seed text
    and OSErrors propagate for unwritable output directories.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    plan = [(DOMAIN_SOURCE, lang, spec.pages_per_source_language) for lang in spec.source_languages]
    plan += [(DOMAIN_TARGET, lang, spec.pages_per_target_language) for lang in spec.target_languages]

    sentences = {lang: load_seed_sentences(lang)
                 for lang in dict.fromkeys(spec.source_languages + spec.target_languages)}

    entries: list[ManifestEntry] = []
    counts: dict[tuple[str, str], int] = {}
    for domain, lang, pages in plan:
        counts[(domain, lang)] = pages
        for page in range(pages):
            image_id = f"{domain}-{lang}-{page:05d}"
            rel = f"images/{image_id}.png"
            pixels = render_corpus_page(spec, domain, lang, page, sentences[lang])
            if not cv2.imwrite(str(out_dir / rel), pixels):
                raise OSError(f"could not write {out_dir / rel}")
            entries.append(ManifestEntry(image_id=image_id, path=rel, label=lang, domain=domain))

    manifest = Manifest(version=MANIFEST_VERSION, seed=spec.seed, counts=counts,
                        entries=tuple(entries))
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


def write_manifest(manifest: Manifest, path: Path) -> None:
    lines = [f"{MANIFEST_FORMAT}\t{manifest.version}", f"seed\t{manifest.seed}"]
    for (domain, lang), count in manifest.counts.items():
        lines.append(f"count\t{domain}\t{lang}\t{count}")
    for e in manifest.entries:
        lines.append(f"entry\t{e.image_id}\t{e.path}\t{e.label}\t{e.domain}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: Path) -> tuple[Manifest, ImageDataset]:
    """Parse and validate a manifest; returns it plus a lazy dataset handle.

    Validates the schema version, id uniqueness, per-(domain, language)
    counts, and that every referenced file exists. Image decodability is
    enforced lazily on first access, with the offending id named.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataError(f"empty manifest: {path}")
    head = lines[0].split("\t")
    if len(head) != 2 or head[0] != MANIFEST_FORMAT:
        raise DataError(f"not a {MANIFEST_FORMAT} file: {path}")
    version = int(head[1])
    if version != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {version} (supported: {MANIFEST_VERSION})")

    seed = 0
    counts: dict[tuple[str, str], int] = {}
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        kind = fields[0]
        if kind == "seed":
            seed = int(fields[1])
        elif kind == "count":
            counts[(fields[1], fields[2])] = int(fields[3])
        elif kind == "entry":
            if len(fields) != 5:
                raise DataError(f"{path}:{lineno}: malformed entry line")
            image_id, rel, label, domain = fields[1:]
            if domain not in DOMAINS:
                raise DataError(f"{path}:{lineno}: unknown domain {domain!r}")
            entries.append(ManifestEntry(image_id=image_id, path=rel, label=label, domain=domain))
        else:
            raise DataError(f"{path}:{lineno}: unknown record kind {kind!r}")

    seen: set[str] = set()
    for e in entries:
        if e.image_id in seen:
            raise DataError(f"duplicate image id {e.image_id!r} in {path}")
        seen.add(e.image_id)

    root = path.parent
    for e in entries:
        if not (root / e.path).is_file():
            raise DataError(f"missing image file for id {e.image_id!r}: {root / e.path}")

    actual: dict[tuple[str, str], int] = {}
    for e in entries:
        actual[(e.domain, e.label)] = actual.get((e.domain, e.label), 0) + 1
    if counts and actual != counts:
        raise DataError(
            f"entry counts do not match declared counts in {path}: "
            f"declared={counts} actual={actual}"
        )

    manifest = Manifest(version=version, seed=seed, counts=counts or actual, entries=tuple(entries))
    return manifest, ImageDataset(root, entries)


def split_source(dataset: ImageDataset, train_per_language: int,
                 eval_per_language: int | None, seed: int) -> tuple[ImageDataset, ImageDataset]:
    """Disjoint per-language train/eval splits of the source domain.

    ``eval_per_language=None`` puts every non-train image in the eval
    split. Deterministic for a fixed seed via per-language shuffles.
    """
    if train_per_language < 0:
        raise DataError("train_per_language must be >= 0")
    train_ids: list[str] = []
    eval_ids: list[str] = []
    for lang, lang_entries in sorted(dataset.by_language().items()):
        ids = sorted(e.image_id for e in lang_entries)
        need = train_per_language + (eval_per_language or 0)
        if len(ids) < need:
            raise DataError(
                f"language {lang!r} has {len(ids)} images, need {need} for the requested split"
            )
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _lang_key(lang)])))
        perm = rng.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        train_ids.extend(shuffled[:train_per_language])
        stop = None if eval_per_language is None else train_per_language + eval_per_language
        eval_ids.extend(shuffled[train_per_language:stop])
    return dataset.subset(train_ids), dataset.subset(eval_ids)


def select_fewshot(target_dataset: ImageDataset, n_per_language: int, seed: int) -> FewShotSet:
    """Seeded per-language selection with nested prefixes across n values.

    For one seed, the n-sample selection is a prefix of the m-sample
    selection whenever n <= m, so few-shot sweeps reuse consistent
    subsets. Raises when any language has fewer than n images.
    """
    if n_per_language < 1:
        raise DataError("n_per_language must be >= 1")
    samples: dict[str, tuple[str, ...]] = {}
    for lang, lang_entries in sorted(target_dataset.by_language().items()):
        ids = sorted(e.image_id for e in lang_entries)
        if len(ids) < n_per_language:
            raise DataError(
                f"language {lang!r} has only {len(ids)} images, cannot select {n_per_language}"
            )
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _lang_key(lang)])))
        perm = rng.permutation(len(ids))
        samples[lang] = tuple(ids[i] for i in perm[:n_per_language])
    return FewShotSet(n_per_language=n_per_language, seed=seed, samples=samples)


def fewshot_eval_pool(target_dataset: ImageDataset, fewshot: FewShotSet) -> ImageDataset:
    """Target images outside the few-shot selection: the evaluation pool."""
    excluded = fewshot.all_ids()
    keep = [e.image_id for e in target_dataset.entries if e.image_id not in excluded]
    return target_dataset.subset(keep)


def build_joint_dataset(source_train: ImageDataset, fewshot: FewShotSet,
                        target_dataset: ImageDataset, label_space: LabelSpace) -> ImageDataset:
    """Concatenate the source train split with the few-shot target samples.

    Every label must resolve in the label space; the result has
    len(source_train) + len(fewshot) entries and shares decode caches
    with its parents when they share a root.
    """
    for lang in fewshot.samples:
        if lang not in label_space:
            raise DataError(f"few-shot language {lang!r} missing from label space")
    for e in source_train.entries:
        if e.label not in label_space:
            raise DataError(f"source language {e.label!r} missing from label space")
    fewshot_subset = target_dataset.subset(fewshot.all_ids())
    if source_train.root != target_dataset.root:
        raise DataError("joint dataset requires source and target under one corpus root")
    entries = source_train.entries + fewshot_subset.entries
    return ImageDataset(source_train.root, entries, _cache=source_train._cache)
