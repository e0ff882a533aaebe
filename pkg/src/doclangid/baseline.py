"""OCR comparison pipeline: script-grouped engine runs, confidence-based
output selection, and a character-trigram text-language detector.

The OCR engine stays external and pluggable: a command-template adapter
invokes it once per script group (so at least one run uses the right
script) and parses a simple word<TAB>confidence format. The test suite
and hermetic deployments use a fake adapter instead, and language
detection on the recognized text is handled by an in-repo trigram
profile model trained on the bundled seed sentences.
"""

from __future__ import annotations

import hashlib
import math
import shlex
import subprocess
import tempfile
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from doclangid.corpus import BUNDLED_LANGUAGES, load_seed_sentences
from doclangid.errors import DataError, EngineError

DEFAULT_SCRIPT_GROUPS = (
    ("latin", ("en", "fr", "de", "nl", "es", "cs", "da", "pl", "it")),
    ("cyrillic", ("bg",)),
)

NGRAM_ORDER = 3
MIN_DETECT_CHARS = 20
MIN_TRAIN_CHARS = 1000


@dataclass(frozen=True)
class ScriptGroup:
    """Languages sharing one writing system, passed together to the engine."""

    name: str
    languages: tuple[str, ...]


def default_script_groups() -> list[ScriptGroup]:
    return [ScriptGroup(name, langs) for name, langs in DEFAULT_SCRIPT_GROUPS]


@dataclass(frozen=True)
class OcrOutput:
    """One engine run: recognized text plus per-word confidences in [0, 100]."""

    text: str
    word_confidences: tuple[float, ...]
    script_group: str
    error: str | None = None

    @property
    def mean_confidence(self) -> float:
        if not self.word_confidences:
            return 0.0
        return float(sum(self.word_confidences) / len(self.word_confidences))


class CommandEngine:
    """Adapter invoking an external OCR command per script group.

    The template contains ``{image}`` and ``{langs}`` placeholders; the
    command must print one ``word<TAB>confidence`` line per recognized
    word to stdout (an engine-specific wrapper script translates native
    output into this format). Non-zero exits and timeouts raise
    EngineError.
    """

    def __init__(self, command_template: str, timeout: float = 60.0, lang_sep: str = "+"):
        self.command_template = command_template
        self.timeout = timeout
        self.lang_sep = lang_sep

    def recognize(self, image_path: str, languages: tuple[str, ...]) -> tuple[str, tuple[float, ...]]:
        command = self.command_template.format(
            image=shlex.quote(image_path), langs=self.lang_sep.join(languages))
        try:
            proc = subprocess.run(command, shell=True, capture_output=True, text=True,
                                  timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            raise EngineError(f"engine timed out after {self.timeout}s: {command}") from exc
        if proc.returncode != 0:
            raise EngineError(f"engine exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        words: list[str] = []
        confidences: list[float] = []
        for line in proc.stdout.splitlines():
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise EngineError(f"malformed engine output line: {line!r}")
            conf = float(parts[1])
            if not 0.0 <= conf <= 100.0:
                raise EngineError(f"word confidence {conf} outside [0, 100]")
            words.append(parts[0])
            confidences.append(conf)
        return " ".join(words), tuple(confidences)


class FakeEngine:
    """Deterministic in-process adapter for tests and hermetic runs.

    Responds with a fixed (text, confidence) per script-group name;
    unknown groups get empty output.
    """

    def __init__(self, responses: dict[str, tuple[str, float]]):
        self.responses = dict(responses)
        self.calls: list[tuple[str, tuple[str, ...]]] = []

    def recognize(self, image_path: str, languages: tuple[str, ...]) -> tuple[str, tuple[float, ...]]:
        self.calls.append((image_path, tuple(languages)))
        for group_name, (text, confidence) in self.responses.items():
            if set(languages) == set(self._group_langs(group_name)):
                words = text.split()
                return text, tuple([confidence] * len(words))
        return "", ()

    @staticmethod
    def _group_langs(group_name: str) -> tuple[str, ...]:
        for name, langs in DEFAULT_SCRIPT_GROUPS:
            if name == group_name:
                return langs
        return ()


def run_ocr_by_script(image: np.ndarray | str | Path, groups: list[ScriptGroup],
                      engine) -> list[OcrOutput]:
    """One engine run per script group; failures become per-group error
    results instead of silent drops. ``engine=None`` marks every group
    as engine-unavailable."""
    if not groups:
        raise DataError("need at least one script group")
    image_path: str | None = None
    tmp = None
    if isinstance(image, (str, Path)):
        image_path = str(image)
    elif engine is not None:
        tmp = tempfile.NamedTemporaryFile(suffix=".png", delete=False)
        cv2.imwrite(tmp.name, np.asarray(image))
        image_path = tmp.name
    outputs: list[OcrOutput] = []
    try:
        for group in groups:
            if engine is None:
                outputs.append(OcrOutput(text="", word_confidences=(),
                                         script_group=group.name,
                                         error="engine unavailable: no adapter configured"))
                continue
            try:
                text, confidences = engine.recognize(image_path, group.languages)
            except EngineError as exc:
                outputs.append(OcrOutput(text="", word_confidences=(),
                                         script_group=group.name, error=str(exc)))
                continue
            outputs.append(OcrOutput(text=text, word_confidences=confidences,
                                     script_group=group.name))
    finally:
        if tmp is not None:
            Path(tmp.name).unlink(missing_ok=True)
    return outputs


def select_best_output(outputs: list[OcrOutput]) -> OcrOutput:
    """The output with maximal mean word confidence; ties keep group order.

    Errored runs are skipped; if every run errored, raises EngineError
    naming the per-group failures.
    """
    if not outputs:
        raise DataError("select_best_output needs a non-empty list")
    usable = [o for o in outputs if o.error is None]
    if not usable:
        details = "; ".join(f"{o.script_group}: {o.error}" for o in outputs)
        raise EngineError(f"all OCR runs failed ({details})")
    best = usable[0]
    for candidate in usable[1:]:
        if candidate.mean_confidence > best.mean_confidence:
            best = candidate
    return best


def normalize_text(text: str) -> str:
    """Documented normalization: NFC, casefold, collapse whitespace."""
    text = unicodedata.normalize("NFC", text).casefold()
    return " ".join(text.split())


@dataclass(frozen=True)
class NgramModel:
    """Per-language smoothed character-trigram log-probability profiles.

    For each language the trigram distribution (with add-one smoothing
    over the union vocabulary plus an unseen bucket) sums to 1 in
    probability space; detection scores a text by summed log-likelihood.
    """

    languages: tuple[str, ...]
    log_profiles: dict[str, dict[str, float]]
    unseen_log: dict[str, float]
    fingerprint: str

    def score(self, text: str) -> dict[str, float]:
        grams = character_ngrams(normalize_text(text), NGRAM_ORDER)
        if not grams:
            raise DataError("text produced no trigrams after normalization")
        scores: dict[str, float] = {}
        for lang in self.languages:
            profile = self.log_profiles[lang]
            fallback = self.unseen_log[lang]
            scores[lang] = sum(profile.get(g, fallback) for g in grams)
        return scores


def character_ngrams(text: str, n: int) -> list[str]:
    return [text[i:i + n] for i in range(len(text) - n + 1)]


def train_ngram_model(texts_by_language: dict[str, str],
                      smoothing: float = 1.0) -> NgramModel:
    """Fit smoothed trigram profiles; deterministic for identical texts."""
    if not texts_by_language:
        raise DataError("no training texts given")
    normalized = {lang: normalize_text(text) for lang, text in texts_by_language.items()}
    for lang, text in normalized.items():
        if len(text) < MIN_TRAIN_CHARS:
            raise DataError(f"language {lang!r} has {len(text)} chars of seed text, "
                            f"need >= {MIN_TRAIN_CHARS}")
    counts = {lang: Counter(character_ngrams(text, NGRAM_ORDER))
              for lang, text in normalized.items()}
    vocabulary = sorted(set().union(*[set(c) for c in counts.values()]))
    vocab_size = len(vocabulary) + 1  # plus one shared unseen bucket
    log_profiles: dict[str, dict[str, float]] = {}
    unseen_log: dict[str, float] = {}
    for lang in sorted(normalized):
        total = sum(counts[lang].values()) + smoothing * vocab_size
        log_profiles[lang] = {
            gram: math.log((counts[lang].get(gram, 0) + smoothing) / total)
            for gram in vocabulary
        }
        unseen_log[lang] = math.log(smoothing / total)
    fingerprint = hashlib.sha256(
        "\n".join(f"{lang}:{len(normalized[lang])}" for lang in sorted(normalized)).encode()
    ).hexdigest()[:16]
    return NgramModel(languages=tuple(sorted(normalized)), log_profiles=log_profiles,
                      unseen_log=unseen_log, fingerprint=fingerprint)


def train_bundled_ngram_model(languages=BUNDLED_LANGUAGES,
                              holdout_every: int | None = None) -> NgramModel:
    """Train on the bundled seed sentences; optionally hold out every
    n-th sentence (used by the held-out quality checks)."""
    texts: dict[str, str] = {}
    for lang in languages:
        sentences = load_seed_sentences(lang)
        if holdout_every:
            sentences = [s for i, s in enumerate(sentences) if i % holdout_every != 0]
        texts[lang] = " ".join(sentences)
    return train_ngram_model(texts)


def detect_language_text(text: str, model: NgramModel) -> tuple[str, float]:
    """Most likely language for a text by trigram log-likelihood.

    Requires >= 20 characters after whitespace normalization; ties break
    by the model's language order. The score is the mean per-trigram
    log-likelihood of the winning language.
    """
    normalized = normalize_text(text)
    if len(normalized) < MIN_DETECT_CHARS:
        raise DataError(f"text too short for detection: {len(normalized)} chars "
                        f"(need >= {MIN_DETECT_CHARS})")
    scores = model.score(normalized)
    best_lang = max(model.languages, key=lambda lang: scores[lang])
    n_grams = max(len(normalized) - NGRAM_ORDER + 1, 1)
    return best_lang, scores[best_lang] / n_grams


@dataclass(frozen=True)
class BaselineResult:
    language: str
    score: float
    ocr: OcrOutput


def baseline_identify(image, groups: list[ScriptGroup], engine,
                      model: NgramModel) -> BaselineResult:
    """Full OCR baseline: script-grouped runs, best-confidence selection,
    trigram detection. Errors carry the failing stage in their message."""
    outputs = run_ocr_by_script(image, groups, engine)
    try:
        best = select_best_output(outputs)
    except EngineError as exc:
        raise EngineError(f"ocr stage: {exc}") from exc
    try:
        language, score = detect_language_text(best.text, model)
    except DataError as exc:
        raise DataError(f"detect stage: {exc}") from exc
    return BaselineResult(language=language, score=score, ocr=best)
