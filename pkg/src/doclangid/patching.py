"""Fixed-grid patch extraction and fused whole-image prediction.

Images are resized to a square working resolution, cut into a row-major
grid of fixed-size non-overlapping patches starting at the top-left
corner, classified in one batched forward pass, and the per-patch
probability distributions are averaged into a single fused distribution
whose argmax is the predicted language. Ties break to the lowest class
index.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from doclangid.errors import DataError


@dataclass(frozen=True)
class PatchConfig:
    """Patch grid geometry and the inference patch budget."""

    patch_height: int = 256
    patch_width: int = 256
    max_patches: int = 16
    image_height: int = 1024
    image_width: int = 1024

    def __post_init__(self) -> None:
        if self.patch_height < 1 or self.patch_width < 1:
            raise ValueError("patch dimensions must be positive")
        if self.patch_height > self.image_height or self.patch_width > self.image_width:
            raise ValueError("patch dimensions must not exceed image dimensions")
        if self.max_patches < 1:
            raise ValueError("max_patches must be >= 1")

    @property
    def grid_size(self) -> int:
        """Number of full patches in the grid before truncation."""
        return (self.image_height // self.patch_height) * (self.image_width // self.patch_width)

    def with_max_patches(self, max_patches: int) -> "PatchConfig":
        return PatchConfig(
            patch_height=self.patch_height,
            patch_width=self.patch_width,
            max_patches=max_patches,
            image_height=self.image_height,
            image_width=self.image_width,
        )


@dataclass(frozen=True)
class PatchSet:
    """Ordered row-major patches plus their origins, for one image."""

    origins: tuple[tuple[int, int], ...]
    patches: np.ndarray  # (count, patch_height, patch_width) uint8
    image_id: str = ""

    def __len__(self) -> int:
        return len(self.origins)


def resize_to_working(binary: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Resize a binarized image to the working resolution, staying binary.

    Area averaging for downscale, bilinear for upscale, then rebinarize
    with threshold 128 (values >= 128 become 255) so patch pixels stay
    in {0, 255}. Identity when the image already has the target size.
    """
    if binary.ndim != 2:
        raise DataError(f"expected a single-channel image, got shape {binary.shape}")
    th, tw = cfg.image_height, cfg.image_width
    if binary.shape == (th, tw):
        return binary
    shrinking = th <= binary.shape[0] and tw <= binary.shape[1]
    interp = cv2.INTER_AREA if shrinking else cv2.INTER_LINEAR
    resized = cv2.resize(binary, (tw, th), interpolation=interp)
    return np.where(resized >= 128, 255, 0).astype(np.uint8)


def extract_patches(image: np.ndarray, cfg: PatchConfig, image_id: str = "") -> PatchSet:
    """Cut the row-major grid of patch_height x patch_width patches.

    The image must already be at the working resolution. The grid holds
    floor(H/h) * floor(W/w) patches; truncation to max_patches keeps the
    row-major prefix starting at origin (0, 0).
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError(f"expected a single-channel image, got shape {image.shape}")
    h, w = image.shape
    ph, pw = cfg.patch_height, cfg.patch_width
    if ph > h or pw > w:
        raise DataError(f"patch ({ph}, {pw}) larger than image ({h}, {w})")
    rows = h // ph
    cols = w // pw
    count = min(cfg.max_patches, rows * cols)
    origins = []
    blocks = []
    for idx in range(count):
        r, c = divmod(idx, cols)
        top, left = r * ph, c * pw
        origins.append((top, left))
        blocks.append(image[top:top + ph, left:left + pw])
    return PatchSet(origins=tuple(origins), patches=np.stack(blocks), image_id=image_id)


def fuse_distributions(per_patch: np.ndarray) -> np.ndarray:
    """Average per-patch class distributions into one fused distribution.

    Input is a (num_patches, k) array of probability vectors; each row
    must be non-negative and sum to 1 within 1e-6.
    """
    per_patch = np.asarray(per_patch, dtype=np.float64)
    if per_patch.ndim != 2 or per_patch.shape[0] == 0:
        raise ValueError("fuse_distributions needs a non-empty (n, k) array")
    if np.any(per_patch < 0):
        raise ValueError("probabilities must be non-negative")
    sums = per_patch.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("each distribution must sum to 1 within 1e-6")
    return per_patch.mean(axis=0)


def predict_image(model, image: np.ndarray, cfg: PatchConfig | None = None) -> tuple[str, np.ndarray]:
    """Classify a raw document image; returns (language code, fused distribution).

    Runs the full path: preprocess -> resize to the working resolution ->
    extract patches -> one batched forward pass -> average -> argmax with
    lowest-index tie-breaking. `model` is a LanguageClassifier.
    """
    from doclangid.preprocess import preprocess_pipeline

    cfg = cfg or model.patch_config
    binary = preprocess_pipeline(image, model.binarization)
    working = resize_to_working(binary, cfg)
    patch_set = extract_patches(working, cfg)
    probs = model.patch_probabilities(patch_set.patches)
    fused = fuse_distributions(probs)
    return model.label_space.classes[int(np.argmax(fused))], fused
