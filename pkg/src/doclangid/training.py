"""Training recipes: joint meta-training, frozen-backbone few-shot
adaptation, and the few-shot-only baseline.

Three variants share the machinery:

* ``ResNetMeta``    — stage 1: extractor + linear head trained with
  cross-entropy on the joint dataset (source train split plus the
  few-shot target samples).
* ``DocLangID``     — stage 2 on top of stage 1: extractor frozen, the
  linear head discarded, and a cosine-similarity head retrained on the
  same few-shot samples only. Prototype rows of source-only classes
  receive no gradient and stay at their random initialization.
* ``ResNetFewShot`` — extractor + linear head trained from scratch on
  the few-shot samples alone, label space restricted to target
  languages.

Every run is a pure function of (data, config, seed): parameter init,
batch order, and patch selection all derive from the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from doclangid.corpus import FewShotSet, ImageDataset, LabelSpace
from doclangid.errors import DataError
from doclangid.model import (
    ARCH_TINY,
    CosineHead,
    LanguageClassifier,
    LinearHead,
    build_extractor,
    patches_to_tensor,
)
from doclangid.patching import PatchConfig, extract_patches, resize_to_working
from doclangid.preprocess import BinarizationParams, preprocess_pipeline

VARIANT_FEWSHOT = "ResNetFewShot"
VARIANT_META = "ResNetMeta"
VARIANT_DOCLANGID = "DocLangID"
VARIANTS = (VARIANT_FEWSHOT, VARIANT_META, VARIANT_DOCLANGID)

OPTIMIZER_ADAPTIVE = "adaptive"
OPTIMIZER_SGD = "sgd_momentum"

LOSS_PER_PATCH = "per_patch"
LOSS_FUSED = "fused"


def cross_entropy(logits, true_index: int) -> float:
    """Reference cross-entropy: -log softmax(logits)[true_index].

    Numerically stable log-sum-exp form; this is the definition the
    torch training path must agree with.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D logit vector")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if not 0 <= true_index < logits.shape[0]:
        raise ValueError(f"class index {true_index} out of range [0, {logits.shape[0]})")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[true_index])


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for one training run; defaults are artifact
    defaults, not values taken from any reference setup."""

    optimizer: str = OPTIMIZER_ADAPTIVE
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    patches_per_image: int = 16
    random_patches: bool = False
    loss: str = LOSS_PER_PATCH
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.patches_per_image < 1:
            raise ValueError("patches_per_image must be >= 1")
        if self.optimizer not in (OPTIMIZER_ADAPTIVE, OPTIMIZER_SGD):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in (LOSS_PER_PATCH, LOSS_FUSED):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "patches_per_image": self.patches_per_image,
            "random_patches": self.random_patches,
            "loss": self.loss,
            "momentum": self.momentum,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        return cls(**{k: raw[k] for k in raw})


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    probe_loss: float


@dataclass
class TrainingLog:
    variant: str
    records: list[EpochRecord] = field(default_factory=list)
    initial_probe_loss: float = float("nan")

    def lines(self) -> list[str]:
        out = [f"variant\t{self.variant}", f"probe_initial\t{self.initial_probe_loss:.6f}"]
        for r in self.records:
            out.append(f"epoch\t{r.epoch}\tloss\t{r.loss:.6f}\taccuracy\t{r.accuracy:.4f}"
                       f"\tprobe_loss\t{r.probe_loss:.6f}")
        return out


class PreparedDataset:
    """Images preprocessed and resized to the working resolution, cached.

    Items are (image_id, class_index) pairs; the working-resolution
    binary image for an id is computed once and reused across epochs and
    patch-count sweeps.
    """

    def __init__(self, dataset: ImageDataset, label_space: LabelSpace,
                 patch_config: PatchConfig, binarization: BinarizationParams):
        self.dataset = dataset
        self.label_space = label_space
        self.patch_config = patch_config
        self.binarization = binarization
        self.items: list[tuple[str, int]] = [
            (e.image_id, label_space.index(e.label)) for e in dataset.entries
        ]
        self._working: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.items)

    def working_image(self, image_id: str) -> np.ndarray:
        cached = self._working.get(image_id)
        if cached is None:
            raw = self.dataset.load(image_id)
            cached = resize_to_working(preprocess_pipeline(raw, self.binarization),
                                       self.patch_config)
            self._working[image_id] = cached
        return cached


def _select_patch_indices(grid: int, wanted: int, random_patches: bool,
                          rng: np.random.Generator) -> np.ndarray:
    if wanted >= grid or not random_patches:
        return np.arange(min(wanted, grid))
    return np.sort(rng.choice(grid, size=wanted, replace=False))


def _image_patches(prepared: PreparedDataset, image_id: str, indices: np.ndarray) -> np.ndarray:
    cfg = prepared.patch_config
    full = extract_patches(prepared.working_image(image_id),
                           cfg.with_max_patches(cfg.grid_size))
    return full.patches[indices]


def _iter_batches(prepared: PreparedDataset, cfg: TrainConfig,
                  epoch: int) -> Iterator[tuple[torch.Tensor, torch.Tensor, int]]:
    """Yields (patch tensor, per-patch labels, patches per image).

    Order and patch choice are pure functions of (cfg.seed, epoch).
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, epoch])))
    order = rng.permutation(len(prepared.items))
    grid = prepared.patch_config.grid_size
    ppi = min(cfg.patches_per_image, grid)
    for start in range(0, len(order), cfg.batch_size):
        chunk = order[start:start + cfg.batch_size]
        blocks = []
        labels = []
        for idx in chunk:
            image_id, class_idx = prepared.items[idx]
            indices = _select_patch_indices(grid, ppi, cfg.random_patches, rng)
            blocks.append(_image_patches(prepared, image_id, indices))
            labels.extend([class_idx] * len(indices))
        patches = patches_to_tensor(np.concatenate(blocks))
        yield patches, torch.tensor(labels, dtype=torch.long), ppi


def _batch_loss(extractor: nn.Module, head: nn.Module, patches: torch.Tensor,
                labels: torch.Tensor, ppi: int, loss_kind: str) -> tuple[torch.Tensor, torch.Tensor]:
    logits = head(extractor(patches))
    if loss_kind == LOSS_PER_PATCH:
        loss = F.cross_entropy(logits, labels)
    else:
        probs = torch.softmax(logits, dim=1).reshape(-1, ppi, logits.shape[1])
        fused = probs.mean(dim=1).clamp_min(1e-12)
        image_labels = labels.reshape(-1, ppi)[:, 0]
        loss = F.nll_loss(torch.log(fused), image_labels)
    return loss, logits


def _make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == OPTIMIZER_ADAPTIVE:
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum)


@torch.no_grad()
def _probe_loss(extractor: nn.Module, head: nn.Module, probe: tuple, loss_kind: str) -> float:
    was_training = extractor.training
    extractor.eval()
    head.eval()
    patches, labels, ppi = probe
    loss, _ = _batch_loss(extractor, head, patches, labels, ppi, loss_kind)
    if was_training:
        extractor.train()
        head.train()
    return float(loss)


def _train_extractor_and_head(prepared: PreparedDataset, extractor: nn.Module,
                              head: nn.Module, cfg: TrainConfig,
                              variant: str) -> TrainingLog:
    if len(prepared) == 0:
        raise DataError("training dataset is empty")
    torch.use_deterministic_algorithms(True)
    log = TrainingLog(variant=variant)
    probe = next(_iter_batches(prepared, cfg, epoch=0))
    log.initial_probe_loss = _probe_loss(extractor, head, probe, cfg.loss)
    optimizer = _make_optimizer(list(extractor.parameters()) + list(head.parameters()), cfg)
    for epoch in range(cfg.epochs):
        extractor.train()
        head.train()
        total_loss = 0.0
        correct = 0
        seen = 0
        for patches, labels, ppi in _iter_batches(prepared, cfg, epoch):
            optimizer.zero_grad()
            loss, logits = _batch_loss(extractor, head, patches, labels, ppi, cfg.loss)
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(labels)
            correct += int((logits.argmax(dim=1) == labels).sum())
            seen += len(labels)
        log.records.append(EpochRecord(
            epoch=epoch,
            loss=total_loss / max(seen, 1),
            accuracy=correct / max(seen, 1),
            probe_loss=_probe_loss(extractor, head, probe, cfg.loss),
        ))
    extractor.eval()
    head.eval()
    return log


def train_stage1_meta(joint: ImageDataset, label_space: LabelSpace, cfg: TrainConfig,
                      patch_config: PatchConfig, binarization: BinarizationParams,
                      arch: str = ARCH_TINY, feature_dim: int | None = None,
                      ) -> tuple[LanguageClassifier, TrainingLog]:
    """Stage 1: train extractor plus linear head on the joint dataset."""
    if len(joint) == 0:
        raise DataError("joint dataset is empty")
    for e in joint.entries:
        if e.label not in label_space:
            raise DataError(f"label {e.label!r} outside the label space")
    torch.manual_seed(cfg.seed)
    extractor = build_extractor(arch, feature_dim, seed=cfg.seed)
    feature_dim = getattr(extractor, "feature_dim")
    head = LinearHead(feature_dim, label_space.k)
    prepared = PreparedDataset(joint, label_space, patch_config, binarization)
    log = _train_extractor_and_head(prepared, extractor, head, cfg, VARIANT_META)
    clf = LanguageClassifier(
        extractor=extractor, head=head, label_space=label_space,
        patch_config=patch_config, binarization=binarization,
        arch=arch, feature_dim=feature_dim,
        metadata={"stage": 1, "variant": VARIANT_META, "train_config": cfg.to_dict(),
                  "epochs_run": cfg.epochs},
    )
    return clf.eval_mode(), log


def train_stage2_fewshot(stage1: LanguageClassifier, fewshot: FewShotSet,
                         target_dataset: ImageDataset, cfg: TrainConfig,
                         ) -> tuple[LanguageClassifier, TrainingLog]:
    """Stage 2: freeze the extractor, retrain a cosine head on the few-shot set.

    The returned classifier's extractor parameters are bit-identical to
    the stage-1 input. Source-only prototype rows receive no gradient.
    """
    if stage1.stage != 1:
        raise DataError(f"stage-2 training requires a stage-1 checkpoint, got stage "
                        f"{stage1.stage}")
    if len(fewshot) == 0:
        raise DataError("few-shot set is empty")
    label_space = stage1.label_space
    fewshot_data = target_dataset.subset(fewshot.all_ids())
    prepared = PreparedDataset(fewshot_data, label_space, stage1.patch_config,
                               stage1.binarization)

    torch.use_deterministic_algorithms(True)
    # Bit-exact private copy of the frozen extractor, detached from the
    # stage-1 module.
    extractor = build_extractor(stage1.arch, stage1.feature_dim, seed=0)
    extractor.load_state_dict(stage1.extractor.state_dict())
    extractor.eval()
    for p in extractor.parameters():
        p.requires_grad_(False)
    torch.manual_seed(cfg.seed)
    head = CosineHead(stage1.feature_dim, label_space.k)

    # Cache frozen features per (image, patch subset) once; head-only
    # epochs then cost almost nothing.
    grid = stage1.patch_config.grid_size
    ppi = min(cfg.patches_per_image, grid)
    feature_rows: list[torch.Tensor] = []
    feature_labels: list[int] = []
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 997])))
    with torch.no_grad():
        for image_id, class_idx in prepared.items:
            indices = _select_patch_indices(grid, ppi, cfg.random_patches, rng)
            patches = patches_to_tensor(_image_patches(prepared, image_id, indices))
            feature_rows.append(extractor(patches))
            feature_labels.extend([class_idx] * len(indices))
    features = torch.cat(feature_rows)
    labels = torch.tensor(feature_labels, dtype=torch.long)

    source_only = torch.tensor([c not in label_space.target_languages
                                for c in label_space.classes])
    optimizer = _make_optimizer(head.parameters(), cfg)
    log = TrainingLog(variant=VARIANT_DOCLANGID)

    def head_loss(rows: torch.Tensor, row_labels: torch.Tensor):
        logits = head(rows)
        if cfg.loss == LOSS_PER_PATCH:
            return F.cross_entropy(logits, row_labels), logits
        probs = torch.softmax(logits, dim=1).reshape(-1, ppi, logits.shape[1])
        fused = probs.mean(dim=1).clamp_min(1e-12)
        image_labels = row_labels.reshape(-1, ppi)[:, 0]
        return F.nll_loss(torch.log(fused), image_labels), logits

    probe_rows = features[: cfg.batch_size * ppi]
    probe_labels = labels[: cfg.batch_size * ppi]
    with torch.no_grad():
        log.initial_probe_loss = float(head_loss(probe_rows, probe_labels)[0])
    order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 998])))
    n_images = len(prepared.items)
    for epoch in range(cfg.epochs):
        head.train()
        # shuffle whole images so fused grouping stays intact
        image_order = order_rng.permutation(n_images)
        total_loss = 0.0
        correct = 0
        for start in range(0, n_images, cfg.batch_size):
            img_chunk = image_order[start:start + cfg.batch_size]
            row_idx = np.concatenate([np.arange(i * ppi, (i + 1) * ppi) for i in img_chunk])
            chunk = torch.from_numpy(row_idx)
            optimizer.zero_grad()
            loss, logits = head_loss(features[chunk], labels[chunk])
            loss.backward()
            head.weight.grad[source_only] = 0.0
            optimizer.step()
            total_loss += float(loss.detach()) * len(chunk)
            correct += int((logits.argmax(dim=1) == labels[chunk]).sum())
        with torch.no_grad():
            head.eval()
            probe = float(head_loss(probe_rows, probe_labels)[0])
        log.records.append(EpochRecord(epoch=epoch, loss=total_loss / len(labels),
                                       accuracy=correct / len(labels), probe_loss=probe))

    clf = LanguageClassifier(
        extractor=extractor, head=head, label_space=label_space,
        patch_config=stage1.patch_config, binarization=stage1.binarization,
        arch=stage1.arch, feature_dim=stage1.feature_dim,
        metadata={"stage": 2, "variant": VARIANT_DOCLANGID,
                  "train_config": cfg.to_dict(), "epochs_run": cfg.epochs,
                  "stage1": stage1.metadata},
    )
    return clf.eval_mode(), log


def train_fewshot_only(fewshot: FewShotSet, target_dataset: ImageDataset, cfg: TrainConfig,
                       patch_config: PatchConfig, binarization: BinarizationParams,
                       arch: str = ARCH_TINY, feature_dim: int | None = None,
                       ) -> tuple[LanguageClassifier, TrainingLog]:
    """Train extractor + linear head from scratch on the few-shot samples only."""
    if len(fewshot) == 0:
        raise DataError("few-shot set is empty")
    label_space = LabelSpace.from_domains((), tuple(sorted(fewshot.samples)))
    fewshot_data = target_dataset.subset(fewshot.all_ids())
    torch.manual_seed(cfg.seed)
    extractor = build_extractor(arch, feature_dim, seed=cfg.seed)
    feature_dim = getattr(extractor, "feature_dim")
    head = LinearHead(feature_dim, label_space.k)
    prepared = PreparedDataset(fewshot_data, label_space, patch_config, binarization)
    log = _train_extractor_and_head(prepared, extractor, head, cfg, VARIANT_FEWSHOT)
    clf = LanguageClassifier(
        extractor=extractor, head=head, label_space=label_space,
        patch_config=patch_config, binarization=binarization,
        arch=arch, feature_dim=feature_dim,
        metadata={"stage": 1, "variant": VARIANT_FEWSHOT, "train_config": cfg.to_dict(),
                  "epochs_run": cfg.epochs},
    )
    return clf.eval_mode(), log


def stage2_config(cfg: TrainConfig, epochs: int = 100) -> TrainConfig:
    """Head-only training is cheap; default to more epochs than stage 1."""
    return replace(cfg, epochs=epochs)
