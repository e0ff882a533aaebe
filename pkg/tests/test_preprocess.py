import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doclangid.errors import DataError
from doclangid.preprocess import (
    BinarizationParams,
    adaptive_binarize,
    preprocess_pipeline,
    to_grayscale,
)
from oracles import binarize_oracle


class TestToGrayscale:
    def test_all_white_color_stays_255(self):
        image = np.full((4, 5, 3), 255, dtype=np.uint8)
        gray = to_grayscale(image)
        assert gray.shape == (4, 5)
        assert np.all(gray == 255)

    def test_grayscale_input_unchanged(self):
        image = np.arange(20, dtype=np.uint8).reshape(4, 5)
        assert np.array_equal(to_grayscale(image), image)

    def test_pure_red_pixel(self):
        # 0.299 * 255 = 76.245 -> 76 under round-half-even
        image = np.zeros((1, 1, 3), dtype=np.uint8)
        image[0, 0] = (255, 0, 0)
        assert to_grayscale(image)[0, 0] == 76

    def test_known_mix(self):
        image = np.zeros((1, 1, 3), dtype=np.uint8)
        image[0, 0] = (10, 20, 30)
        expected = np.round(0.299 * 10 + 0.587 * 20 + 0.114 * 30)
        assert to_grayscale(image)[0, 0] == expected

    def test_two_channel_rejected(self):
        with pytest.raises(DataError):
            to_grayscale(np.zeros((3, 3, 2), dtype=np.uint8))

    def test_single_channel_3d_squeezed(self):
        image = np.full((2, 2, 1), 9, dtype=np.uint8)
        assert to_grayscale(image).shape == (2, 2)


class TestAdaptiveBinarize:
    def test_constant_image_positive_offset_all_white(self):
        image = np.full((9, 9), 120, dtype=np.uint8)
        out = adaptive_binarize(image, BinarizationParams(window=3, offset=10))
        assert np.all(out == 255)

    def test_constant_image_zero_offset_all_black(self):
        # strict inequality fails when pixel equals the local mean
        image = np.full((9, 9), 120, dtype=np.uint8)
        out = adaptive_binarize(image, BinarizationParams(window=3, offset=0))
        assert np.all(out == 0)

    def test_single_dark_pixel_matches_oracle(self):
        image = np.full((5, 5), 200, dtype=np.uint8)
        image[2, 2] = 10
        out = adaptive_binarize(image, BinarizationParams(window=3, offset=0))
        assert np.array_equal(out, binarize_oracle(image, 3, 0))

    def test_oracle_exhaustive_small_images(self):
        rng = np.random.default_rng(101)
        for _ in range(300):
            image = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
            params = BinarizationParams(window=3, offset=int(rng.integers(0, 30)))
            got = adaptive_binarize(image, params)
            want = binarize_oracle(image, params.window, params.offset)
            assert np.array_equal(got, want)

    def test_oracle_larger_window(self):
        rng = np.random.default_rng(11)
        image = rng.integers(0, 256, size=(12, 9), dtype=np.uint8)
        params = BinarizationParams(window=5, offset=7)
        assert np.array_equal(adaptive_binarize(image, params),
                              binarize_oracle(image, 5, 7))

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            BinarizationParams(window=4, offset=0)

    def test_window_exceeding_both_dims_rejected(self):
        with pytest.raises(DataError):
            adaptive_binarize(np.zeros((5, 5), dtype=np.uint8),
                              BinarizationParams(window=7, offset=0))

    def test_window_exceeding_one_dim_allowed(self):
        image = np.full((5, 20), 80, dtype=np.uint8)
        out = adaptive_binarize(image, BinarizationParams(window=7, offset=1))
        assert set(np.unique(out)) <= {0, 255}

    def test_locality(self):
        # flipping one pixel only disturbs a (window-1)-radius neighborhood
        rng = np.random.default_rng(3)
        image = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        params = BinarizationParams(window=3, offset=5)
        base = adaptive_binarize(image, params)
        changed = image.copy()
        changed[8, 8] = 255 - changed[8, 8]
        out = adaptive_binarize(changed, params)
        diff = np.argwhere(base != out)
        assert np.all(np.abs(diff - [8, 8]).max(axis=1) <= params.window - 1)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_codomain_and_shape(self, seed):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(3, 20)), int(rng.integers(3, 20))
        image = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        out = adaptive_binarize(image, BinarizationParams(window=3, offset=3))
        assert out.shape == (h, w)
        assert set(np.unique(out)) <= {0, 255}


class TestPipeline:
    def test_codomain_binary(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        page = dataset.load(dataset.entries[0].image_id)
        out = preprocess_pipeline(page)
        assert set(np.unique(out)) <= {0, 255}
        assert out.shape == page.shape

    def test_idempotent_with_positive_offset(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        params = BinarizationParams(window=15, offset=10)
        for entry in dataset.entries[:4]:
            once = preprocess_pipeline(dataset.load(entry.image_id), params)
            twice = preprocess_pipeline(once, params)
            assert np.array_equal(once, twice)

    def test_empty_image_rejected(self):
        with pytest.raises(DataError):
            preprocess_pipeline(np.zeros((0, 0), dtype=np.uint8))
