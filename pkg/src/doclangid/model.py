"""Residual feature extractors, classification heads, and checkpoint files.

Two backbones share one code path: ``resnet18_like`` (the faithful
4-stage, ~11M-parameter network) and ``tiny_resnet`` (2 residual stages,
feature dim 128 by default) for desk-scale runs. Heads are a plain
linear layer (stage 1) and a temperature-scaled cosine-similarity layer
whose rows act as class prototypes (stage 2).

Checkpoints are single files: magic + format version + JSON header
(metadata, label space, configs, tensor index) + raw little-endian
tensor payload + SHA-256 checksum. Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from doclangid.corpus import LabelSpace
from doclangid.errors import DataError
from doclangid.patching import PatchConfig
from doclangid.preprocess import BinarizationParams

CHECKPOINT_MAGIC = b"DLCK"
CHECKPOINT_VERSION = 1

ARCH_TINY = "tiny_resnet"
ARCH_RESNET18 = "resnet18_like"

NORM_EPS = 1e-8


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with a skip connection (basic block)."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        out = out + self.shortcut(x)
        return F.relu(out)


def _make_stage(in_channels: int, out_channels: int, blocks: int, stride: int) -> nn.Sequential:
    layers = [ResidualBlock(in_channels, out_channels, stride)]
    layers += [ResidualBlock(out_channels, out_channels, 1) for _ in range(blocks - 1)]
    return nn.Sequential(*layers)


class TinyResNet(nn.Module):
    """Small residual extractor: stem plus two downsampling stages."""

    def __init__(self, feature_dim: int = 128):
        super().__init__()
        if feature_dim % 4 != 0:
            raise ValueError("tiny_resnet feature_dim must be divisible by 4")
        self.feature_dim = feature_dim
        base = feature_dim // 4
        self.conv1 = nn.Conv2d(1, base, 3, stride=1, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(base)
        self.stage1 = _make_stage(base, feature_dim // 2, blocks=2, stride=2)
        self.stage2 = _make_stage(feature_dim // 2, feature_dim, blocks=2, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.stage1(out)
        out = self.stage2(out)
        return torch.flatten(self.pool(out), 1)


class ResNet18Like(nn.Module):
    """18-layer residual extractor, randomly initialized, 1-channel input."""

    feature_dim = 512

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 64, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.stage1 = _make_stage(64, 64, blocks=2, stride=1)
        self.stage2 = _make_stage(64, 128, blocks=2, stride=2)
        self.stage3 = _make_stage(128, 256, blocks=2, stride=2)
        self.stage4 = _make_stage(256, 512, blocks=2, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.maxpool(out)
        out = self.stage1(out)
        out = self.stage2(out)
        out = self.stage3(out)
        out = self.stage4(out)
        return torch.flatten(self.pool(out), 1)


class LinearHead(nn.Module):
    """Plain affine projection of features to class logits."""

    def __init__(self, feature_dim: int, num_classes: int):
        super().__init__()
        self.fc = nn.Linear(feature_dim, num_classes)

    def forward(self, features):
        return self.fc(features)


class CosineHead(nn.Module):
    """Temperature-scaled cosine similarities to per-class prototypes.

    logits_i = s * cos(f, w_i), with feature and prototype norms clamped
    below at NORM_EPS, so each logit lies in [-s, s] and positive
    rescaling of the feature leaves the logits unchanged. An exactly
    zero feature yields all-zero logits rather than an error.
    """

    def __init__(self, feature_dim: int, num_classes: int, temperature: float = 10.0):
        super().__init__()
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.weight = nn.Parameter(torch.empty(num_classes, feature_dim))
        nn.init.normal_(self.weight, std=0.01)
        self.register_buffer("temperature", torch.tensor(float(temperature)))

    def forward(self, features):
        f = features / features.norm(dim=1, keepdim=True).clamp_min(NORM_EPS)
        w = self.weight / self.weight.norm(dim=1, keepdim=True).clamp_min(NORM_EPS)
        return self.temperature * (f @ w.t())


def build_extractor(arch: str, feature_dim: int | None = None, seed: int = 0) -> nn.Module:
    """Seeded construction; identical seeds give bit-identical parameters."""
    torch.manual_seed(seed)
    if arch == ARCH_TINY:
        return TinyResNet(feature_dim or 128)
    if arch == ARCH_RESNET18:
        if feature_dim not in (None, 512):
            raise ValueError("resnet18_like has a fixed feature dim of 512")
        return ResNet18Like()
    raise ValueError(f"unknown architecture {arch!r}")


def patches_to_tensor(patches: np.ndarray) -> torch.Tensor:
    """(n, h, w) uint8 patches -> (n, 1, h, w) float32 in [0, 1]."""
    arr = np.asarray(patches)
    if arr.ndim != 3:
        raise DataError(f"expected (n, h, w) patches, got shape {arr.shape}")
    return torch.from_numpy(arr.astype(np.float32) / 255.0).unsqueeze(1)


@dataclass
class LanguageClassifier:
    """A trained extractor+head bound to its label space and input configs."""

    extractor: nn.Module
    head: nn.Module
    label_space: LabelSpace
    patch_config: PatchConfig
    binarization: BinarizationParams
    arch: str
    feature_dim: int
    metadata: dict = field(default_factory=dict)

    def eval_mode(self) -> "LanguageClassifier":
        self.extractor.eval()
        self.head.eval()
        return self

    @torch.no_grad()
    def features(self, patches: np.ndarray) -> torch.Tensor:
        self.eval_mode()
        return self.extractor(patches_to_tensor(patches))

    @torch.no_grad()
    def patch_probabilities(self, patches: np.ndarray) -> np.ndarray:
        """Softmax class distributions for a batch of uint8 patches."""
        self.eval_mode()
        logits = self.head(self.extractor(patches_to_tensor(patches)))
        return torch.softmax(logits, dim=1).numpy().astype(np.float64)

    @property
    def head_kind(self) -> str:
        return "cosine" if isinstance(self.head, CosineHead) else "linear"

    @property
    def stage(self) -> int:
        return int(self.metadata.get("stage", 0))


def _state_tensors(clf: LanguageClassifier) -> list[tuple[str, torch.Tensor]]:
    named = [(f"extractor.{k}", v) for k, v in clf.extractor.state_dict().items()]
    named += [(f"head.{k}", v) for k, v in clf.head.state_dict().items()]
    return named


def save_checkpoint(clf: LanguageClassifier, path: Path) -> None:
    """Write the versioned single-file container with trailing checksum."""
    tensors = _state_tensors(clf)
    index = []
    payload = bytearray()
    for name, tensor in tensors:
        arr = tensor.detach().cpu().numpy()
        data = np.ascontiguousarray(arr).tobytes()
        index.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
                      "nbytes": len(data)})
        payload.extend(data)

    header = {
        "metadata": clf.metadata,
        "arch": clf.arch,
        "feature_dim": clf.feature_dim,
        "head": {"kind": clf.head_kind, "num_classes": clf.label_space.k},
        "label_space": {
            "source_languages": list(clf.label_space.source_languages),
            "target_languages": list(clf.label_space.target_languages),
            "classes": list(clf.label_space.classes),
        },
        "patch_config": {
            "patch_height": clf.patch_config.patch_height,
            "patch_width": clf.patch_config.patch_width,
            "max_patches": clf.patch_config.max_patches,
            "image_height": clf.patch_config.image_height,
            "image_width": clf.patch_config.image_width,
        },
        "binarization": {"window": clf.binarization.window, "offset": clf.binarization.offset},
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob.extend(CHECKPOINT_MAGIC)
    blob.extend(struct.pack("<I", CHECKPOINT_VERSION))
    blob.extend(struct.pack("<Q", len(header_bytes)))
    blob.extend(header_bytes)
    blob.extend(payload)
    blob.extend(hashlib.sha256(blob).digest())
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: Path) -> LanguageClassifier:
    """Read, verify, and rebuild a classifier from a checkpoint file."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 + 8 + 32:
        raise DataError(f"checkpoint too short / truncated: {path}")
    body, checksum = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise DataError(f"checkpoint checksum mismatch (corrupted or truncated): {path}")
    if body[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    version = struct.unpack("<I", body[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version} "
                        f"(supported: {CHECKPOINT_VERSION})")
    header_len = struct.unpack("<Q", body[8:16])[0]
    header = json.loads(body[16:16 + header_len].decode("utf-8"))
    payload = body[16 + header_len:]

    label_space = LabelSpace(
        source_languages=tuple(header["label_space"]["source_languages"]),
        target_languages=tuple(header["label_space"]["target_languages"]),
        classes=tuple(header["label_space"]["classes"]),
    )
    patch_config = PatchConfig(**header["patch_config"])
    binarization = BinarizationParams(**header["binarization"])
    extractor = build_extractor(header["arch"], header["feature_dim"], seed=0)
    k = header["head"]["num_classes"]
    if header["head"]["kind"] == "cosine":
        head: nn.Module = CosineHead(header["feature_dim"], k)
    else:
        head = LinearHead(header["feature_dim"], k)

    state: dict[str, torch.Tensor] = {}
    offset = 0
    for item in header["tensors"]:
        data = payload[offset:offset + item["nbytes"]]
        offset += item["nbytes"]
        arr = np.frombuffer(data, dtype=np.dtype(item["dtype"])).reshape(item["shape"]).copy()
        state[item["name"]] = torch.from_numpy(arr)
    extractor.load_state_dict({k[len("extractor."):]: v for k, v in state.items()
                               if k.startswith("extractor.")})
    head.load_state_dict({k[len("head."):]: v for k, v in state.items()
                          if k.startswith("head.")})

    clf = LanguageClassifier(
        extractor=extractor, head=head, label_space=label_space,
        patch_config=patch_config, binarization=binarization,
        arch=header["arch"], feature_dim=header["feature_dim"],
        metadata=header["metadata"],
    )
    return clf.eval_mode()


def extractor_state_bytes(clf: LanguageClassifier) -> bytes:
    """Canonical byte serialization of extractor parameters, for freeze checks."""
    chunks = []
    for name, tensor in sorted(clf.extractor.state_dict().items()):
        chunks.append(name.encode())
        chunks.append(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return b"".join(chunks)
