"""Independent brute-force oracles used by the unit and acceptance tests.

Everything here is deliberately naive (nested loops, direct formulas)
and shares no code with the implementation under test.
"""

from __future__ import annotations

import numpy as np


def binarize_oracle(gray: np.ndarray, window: int, offset: int) -> np.ndarray:
    """Per-pixel local-mean threshold with replicated edges, nested loops."""
    h, w = gray.shape
    half = window // 2
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            total = 0.0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    total += float(gray[yy, xx])
            mean = total / (window * window)
            out[y, x] = 255 if float(gray[y, x]) > mean - offset else 0
    return out


def patch_grid_oracle(height: int, width: int, patch_h: int, patch_w: int,
                      max_patches: int) -> list[tuple[int, int]]:
    """Row-major grid origins of non-overlapping full patches, truncated."""
    origins = []
    top = 0
    while top + patch_h <= height:
        left = 0
        while left + patch_w <= width:
            origins.append((top, left))
            left += patch_w
        top += patch_h
    return origins[:max_patches]


def fuse_oracle(distributions: list[list[float]]) -> list[float]:
    """Element-wise arithmetic mean via explicit accumulation."""
    n = len(distributions)
    k = len(distributions[0])
    out = [0.0] * k
    for dist in distributions:
        for i in range(k):
            out[i] += dist[i]
    return [v / n for v in out]


def metrics_oracle(confusion: np.ndarray) -> dict:
    """Accuracy, per-class precision/recall/F1, and macro means (zero-division -> 0)."""
    confusion = np.asarray(confusion)
    k = confusion.shape[0]
    total = int(confusion.sum())
    correct = sum(int(confusion[i, i]) for i in range(k))
    per_class = []
    for i in range(k):
        tp = int(confusion[i, i])
        predicted = int(confusion[:, i].sum())
        actual = int(confusion[i, :].sum())
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / actual if actual > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) > 0 else 0.0
        per_class.append({"precision": precision, "recall": recall, "f1": f1})
    return {
        "accuracy": correct / total if total else 0.0,
        "per_class": per_class,
        "macro_precision": sum(c["precision"] for c in per_class) / k,
        "macro_recall": sum(c["recall"] for c in per_class) / k,
        "macro_f1": sum(c["f1"] for c in per_class) / k,
    }


def fd_gradient(loss_fn, params: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat array."""
    grad = np.zeros_like(params, dtype=np.float64)
    flat = params.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        up = loss_fn(params)
        flat[i] = original - step
        down = loss_fn(params)
        flat[i] = original
        out[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))
