"""Deterministic rendering of synthetic document pages.

Characters are drawn with an abstract glyph atlas: each character maps to
a fixed 5x7 ink pattern derived from its hash, so any script renders the
same way on every platform and languages remain distinguishable by their
character inventory and frequency statistics. Two layout styles exist:
``text_rich`` pages filled with wrapped running text, and
``picture_heavy`` pages dominated by large striped blocks with a few
caption lines. Degradations (salt-and-pepper noise, blur, contrast
jitter) are driven entirely by the supplied RNG.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import cv2
import numpy as np

GLYPH_COLS = 5
GLYPH_ROWS = 7
# Cell is inked when its hash byte falls below this bound (~40% density).
_INK_BYTE_BOUND = 102

LAYOUT_TEXT_RICH = "text_rich"
LAYOUT_PICTURE_HEAVY = "picture_heavy"
LAYOUTS = (LAYOUT_TEXT_RICH, LAYOUT_PICTURE_HEAVY)

_glyph_cache: dict[str, np.ndarray] = {}


@dataclass(frozen=True)
class DegradationLevels:
    """Page degradation knobs; all-zero means the clean page is untouched."""

    noise_prob: float = 0.0
    blur_radius: tuple[float, float] = (0.0, 0.0)
    contrast_jitter: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("noise_prob must be in [0, 1]")
        if self.blur_radius[0] > self.blur_radius[1] or self.blur_radius[0] < 0:
            raise ValueError("blur_radius must be a non-negative (lo, hi) range")
        if self.contrast_jitter[0] > self.contrast_jitter[1]:
            raise ValueError("contrast_jitter must be a (lo, hi) range")


def glyph_bitmap(ch: str) -> np.ndarray:
    """Fixed 7x5 boolean ink pattern for one character; whitespace is blank."""
    cached = _glyph_cache.get(ch)
    if cached is not None:
        return cached
    if ch.isspace():
        bitmap = np.zeros((GLYPH_ROWS, GLYPH_COLS), dtype=bool)
    else:
        digest = hashlib.sha512(ch.encode("utf-8")).digest()
        cells = np.frombuffer(digest[:GLYPH_ROWS * GLYPH_COLS], dtype=np.uint8)
        bitmap = (cells < _INK_BYTE_BOUND).reshape(GLYPH_ROWS, GLYPH_COLS)
    _glyph_cache[ch] = bitmap
    return bitmap


def _stamp_text(page: np.ndarray, text: str, top: int, left: int, scale: int, ink: int,
                cols: int) -> None:
    """Stamp one line of at most `cols` characters starting at (top, left)."""
    x = left
    for ch in text[:cols]:
        bitmap = glyph_bitmap(ch)
        if bitmap.any():
            block = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
            region = page[top:top + GLYPH_ROWS * scale, x:x + GLYPH_COLS * scale]
            region[block[: region.shape[0], : region.shape[1]]] = ink
        x += (GLYPH_COLS + 1) * scale


def wrap_text(text: str, cols: int) -> list[str]:
    """Greedy word wrap; words longer than the line are split hard."""
    lines: list[str] = []
    current = ""
    for word in text.split():
        while len(word) > cols:
            if current:
                lines.append(current)
                current = ""
            lines.append(word[:cols])
            word = word[cols:]
        if not current:
            current = word
        elif len(current) + 1 + len(word) <= cols:
            current = f"{current} {word}"
        else:
            lines.append(current)
            current = word
    if current:
        lines.append(current)
    return lines


def _draw_striped_block(page: np.ndarray, top: int, left: int, height: int, width: int,
                        ink: int, pitch: int, thickness: int) -> None:
    """A large non-text block: diagonal stripes inside a solid border."""
    ys, xs = np.mgrid[0:height, 0:width]
    stripes = (ys + xs) % pitch < thickness
    block = page[top:top + height, left:left + width]
    block[stripes] = ink
    border = 2
    block[:border, :] = ink
    block[-border:, :] = ink
    block[:, :border] = ink
    block[:, -border:] = ink


def render_page(height: int, width: int, text: str, layout: str,
                rng: np.random.Generator, glyph_scale: int = 2) -> np.ndarray:
    """Render a clean grayscale page of the given layout style.

    Consumes RNG draws for per-page background/ink levels and, for
    picture-heavy layouts, block geometry. Identical (arguments, RNG
    state) produce identical pixels.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    background = int(rng.integers(235, 251))
    ink = int(rng.integers(30, 71))
    page = np.full((height, width), background, dtype=np.uint8)

    margin = 4 * glyph_scale
    char_pitch = (GLYPH_COLS + 1) * glyph_scale
    line_pitch = (GLYPH_ROWS + 2) * glyph_scale
    cols = max(1, (width - 2 * margin) // char_pitch)
    rows = max(1, (height - 2 * margin) // line_pitch)
    lines = wrap_text(text, cols)

    if layout == LAYOUT_TEXT_RICH:
        for i, line in enumerate(lines[:rows]):
            _stamp_text(page, line, margin + i * line_pitch, margin, glyph_scale, ink, cols)
        return page

    top_lines = int(rng.integers(1, 3))
    bottom_lines = int(rng.integers(1, 4))
    for i in range(min(top_lines, len(lines))):
        _stamp_text(page, lines[i], margin + i * line_pitch, margin, glyph_scale, ink, cols)
    for i in range(bottom_lines):
        idx = top_lines + i
        if idx >= len(lines):
            break
        row_top = height - margin - (bottom_lines - i) * line_pitch
        _stamp_text(page, lines[idx], row_top, margin, glyph_scale, ink, cols)

    band_top = margin + top_lines * line_pitch + line_pitch // 2
    band_bottom = height - margin - bottom_lines * line_pitch - line_pitch // 2
    band_height = max(band_bottom - band_top, 8)
    n_blocks = int(rng.integers(1, 3))
    for _ in range(n_blocks):
        block_h = max(8, int(band_height * rng.uniform(0.45, 0.9) / n_blocks))
        block_w = max(8, int((width - 2 * margin) * rng.uniform(0.5, 0.85)))
        top = band_top + int(rng.integers(0, max(1, band_height - block_h + 1)))
        left = margin + int(rng.integers(0, max(1, width - 2 * margin - block_w + 1)))
        # low-frequency stripes survive 2x area downscaling as texture
        # instead of collapsing to solid fill
        pitch = int(rng.integers(6, 14))
        thickness = int(rng.integers(2, 5))
        _draw_striped_block(page, top, left, block_h, block_w, ink, pitch, thickness)
    return page


def degrade_page(page: np.ndarray, levels: DegradationLevels,
                 rng: np.random.Generator) -> np.ndarray:
    """Apply seeded degradations; all-zero levels return the input unchanged."""
    out = page
    if levels.noise_prob > 0.0:
        flip = rng.random(out.shape) < levels.noise_prob
        salt = rng.random(out.shape) < 0.5
        out = out.copy()
        out[flip & salt] = 255
        out[flip & ~salt] = 0
    lo, hi = levels.blur_radius
    if hi > 0.0:
        sigma = float(rng.uniform(lo, hi))
        if sigma > 1e-3:
            ksize = 2 * int(np.ceil(2.0 * sigma)) + 1
            out = cv2.GaussianBlur(out, (ksize, ksize), sigmaX=sigma, sigmaY=sigma)
    lo, hi = levels.contrast_jitter
    if lo != 0.0 or hi != 0.0:
        factor = 1.0 + float(rng.uniform(lo, hi))
        shifted = 128.0 + factor * (out.astype(np.float64) - 128.0)
        out = np.clip(np.rint(shifted), 0, 255).astype(np.uint8)
    return out
