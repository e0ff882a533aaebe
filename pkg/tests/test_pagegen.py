import numpy as np
import pytest

from doclangid.pagegen import (
    DegradationLevels,
    degrade_page,
    glyph_bitmap,
    render_page,
    wrap_text,
)


class TestGlyphs:
    def test_deterministic_and_cached(self):
        a = glyph_bitmap("é")
        b = glyph_bitmap("é")
        assert a is b
        assert a.shape == (7, 5)

    def test_whitespace_blank(self):
        assert not glyph_bitmap(" ").any()
        assert not glyph_bitmap("\t").any()

    def test_distinct_characters_distinct_glyphs(self):
        seen = {}
        for ch in "abcdefghij蟹éàüßżč":
            key = glyph_bitmap(ch).tobytes()
            assert key not in seen, f"{ch} collides with {seen.get(key)}"
            seen[key] = ch


class TestWrap:
    def test_simple_wrap(self):
        assert wrap_text("aa bb cc", 5) == ["aa bb", "cc"]

    def test_long_word_split(self):
        assert wrap_text("abcdefgh", 3) == ["abc", "def", "gh"]

    def test_exact_fit(self):
        assert wrap_text("abc de", 6) == ["abc de"]


class TestRenderPage:
    def test_text_rich_has_ink(self):
        rng = np.random.default_rng(0)
        page = render_page(96, 96, "hello world " * 20, "text_rich", rng)
        assert page.shape == (96, 96)
        assert np.mean(page < 128) > 0.02

    def test_picture_heavy_has_block_structure(self):
        rng = np.random.default_rng(0)
        page = render_page(96, 96, "caption text here", "picture_heavy", rng)
        # at least one row inside the picture band is substantially inked
        row_ink = (page < 128).mean(axis=1)
        assert row_ink.max() > 0.3

    def test_unknown_layout_rejected(self):
        with pytest.raises(ValueError):
            render_page(64, 64, "x", "photos", np.random.default_rng(0))

    def test_same_rng_state_same_page(self):
        a = render_page(64, 64, "abc def", "text_rich", np.random.default_rng(4))
        b = render_page(64, 64, "abc def", "text_rich", np.random.default_rng(4))
        assert np.array_equal(a, b)


class TestDegradations:
    def _page(self):
        return render_page(64, 64, "some page text " * 10, "text_rich",
                           np.random.default_rng(1))

    def test_all_zero_levels_identity(self):
        page = self._page()
        out = degrade_page(page, DegradationLevels(), np.random.default_rng(2))
        assert out is page  # untouched, not merely equal

    def test_noise_flips_pixels(self):
        page = self._page()
        out = degrade_page(page, DegradationLevels(noise_prob=0.2),
                           np.random.default_rng(2))
        changed = np.mean(out != page)
        assert 0.05 < changed < 0.35
        assert np.array_equal(page, self._page())  # input untouched

    def test_blur_smooths(self):
        page = self._page()
        out = degrade_page(page, DegradationLevels(blur_radius=(1.0, 1.0)),
                           np.random.default_rng(2))
        assert np.std(np.diff(out.astype(int), axis=1)) < \
            np.std(np.diff(page.astype(int), axis=1))

    def test_contrast_jitter_moves_toward_midpoint(self):
        page = self._page()
        out = degrade_page(page, DegradationLevels(contrast_jitter=(-0.5, -0.5)),
                           np.random.default_rng(2))
        assert np.abs(out.astype(int) - 128).mean() < np.abs(page.astype(int) - 128).mean()

    def test_invalid_levels_rejected(self):
        with pytest.raises(ValueError):
            DegradationLevels(noise_prob=1.5)
        with pytest.raises(ValueError):
            DegradationLevels(blur_radius=(2.0, 1.0))
