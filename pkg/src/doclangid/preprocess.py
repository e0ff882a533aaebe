"""Input normalization: grayscale conversion and adaptive binarization.

Both steps are pure functions on uint8 arrays. Grayscale uses the fixed
luma weights (0.299, 0.587, 0.114) with round-half-even. Binarization
thresholds each pixel against the arithmetic mean of its local window
(edge-replicated) minus a constant offset; a pixel becomes foreground
(255) iff it is strictly brighter than that local threshold, so dark ink
maps to 0 and paper to 255.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from doclangid.errors import DataError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class BinarizationParams:
    """Parameters of the local-mean threshold rule."""

    window: int = 31
    offset: int = 10

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.offset < 0:
            raise ValueError(f"offset must be >= 0, got {self.offset}")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Convert an image to single-channel uint8.

    Single-channel inputs are returned unchanged. Three-channel inputs
    are combined with the fixed luma weights and rounded half-even.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(np.uint8, copy=False)
    if image.ndim == 3 and image.shape[2] == 1:
        return image[:, :, 0].astype(np.uint8, copy=False)
    if image.ndim == 3 and image.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        gray = r * image[:, :, 0].astype(np.float64) \
            + g * image[:, :, 1].astype(np.float64) \
            + b * image[:, :, 2].astype(np.float64)
        return np.round(gray).astype(np.uint8)
    raise DataError(f"unsupported channel layout: shape {image.shape}")


def adaptive_binarize(gray: np.ndarray, params: BinarizationParams | None = None) -> np.ndarray:
    """Binarize a grayscale image against its local mean.

    Output pixel is 255 iff intensity > (window mean, edges replicated)
    - offset, else 0. The comparison is carried out in exact integer
    arithmetic: px > sum/n - offset  <=>  (px + offset) * n > sum.
    """
    params = params or BinarizationParams()
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise DataError(f"adaptive_binarize expects a single-channel image, got shape {gray.shape}")
    h, w = gray.shape
    if h < 1 or w < 1:
        raise DataError("empty image")
    win = params.window
    if win > h and win > w:
        raise DataError(f"window {win} larger than both image dimensions ({h}, {w})")

    half = win // 2
    padded = np.pad(gray.astype(np.int64), half, mode="edge")
    # Windowed sums via a summed-area table; exact in int64.
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    np.cumsum(padded, axis=0, out=integral[1:, 1:])
    np.cumsum(integral[1:, 1:], axis=1, out=integral[1:, 1:])
    sums = (
        integral[win:, win:]
        - integral[:-win, win:]
        - integral[win:, :-win]
        + integral[:-win, :-win]
    )
    n = win * win
    bright = (gray.astype(np.int64) + params.offset) * n > sums
    return np.where(bright, 255, 0).astype(np.uint8)


def preprocess_pipeline(image: np.ndarray, params: BinarizationParams | None = None) -> np.ndarray:
    """Grayscale then adaptive binarization; the standard input pipeline."""
    return adaptive_binarize(to_grayscale(image), params)
