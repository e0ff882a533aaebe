import time

import numpy as np
import pytest

from doclangid.corpus import LabelSpace, select_fewshot
from doclangid.errors import DataError
from doclangid.evaluation import (
    MetricsReport,
    TimingRecord,
    emit_report,
    evaluate,
    metrics_table,
    time_inference,
    timing_table,
)
from doclangid.model import build_extractor, LanguageClassifier, LinearHead
from doclangid.patching import PatchConfig
from doclangid.preprocess import BinarizationParams
from doclangid.training import TrainConfig, train_fewshot_only
from oracles import metrics_oracle


class TestMetricsReport:
    def test_hand_confusion_matrix(self):
        report = MetricsReport.from_confusion(np.array([[8, 2], [3, 7]]), ("a", "b"))
        assert report.accuracy == pytest.approx(0.75)
        assert report.per_class["a"]["precision"] == pytest.approx(8 / 11)
        assert report.per_class["a"]["recall"] == pytest.approx(0.8)
        assert report.sample_count == 20

    def test_perfect_predictor(self):
        report = MetricsReport.from_confusion(np.diag([5, 5, 5]), ("a", "b", "c"))
        assert report.accuracy == 1.0
        assert report.macro_precision == 1.0
        assert report.macro_recall == 1.0
        assert report.macro_f1 == 1.0

    def test_constant_predictor_balanced(self):
        confusion = np.zeros((4, 4), dtype=int)
        confusion[:, 0] = 25
        report = MetricsReport.from_confusion(confusion, tuple("abcd"))
        assert report.accuracy == pytest.approx(0.25)
        assert report.macro_recall == pytest.approx(0.25)

    def test_matches_oracle_on_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            k = int(rng.integers(2, 7))
            confusion = rng.integers(0, 40, size=(k, k))
            report = MetricsReport.from_confusion(confusion, tuple(f"c{i}" for i in range(k)))
            want = metrics_oracle(confusion)
            assert report.accuracy == pytest.approx(want["accuracy"], abs=1e-12)
            assert report.macro_precision == pytest.approx(want["macro_precision"], abs=1e-12)
            assert report.macro_recall == pytest.approx(want["macro_recall"], abs=1e-12)
            assert report.macro_f1 == pytest.approx(want["macro_f1"], abs=1e-12)
            assert np.trace(report.confusion) / max(report.sample_count, 1) == \
                pytest.approx(report.accuracy, abs=1e-12)

    def test_f1_harmonic_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = int(rng.integers(2, 6))
            report = MetricsReport.from_confusion(
                rng.integers(0, 20, size=(k, k)), tuple(f"c{i}" for i in range(k)))
            for metrics in report.per_class.values():
                p, r, f1 = metrics["precision"], metrics["recall"], metrics["f1"]
                expected = 2 * p * r / (p + r) if p + r else 0.0
                assert f1 == pytest.approx(expected, abs=1e-12)

    def test_eval_class_subset_macro(self):
        confusion = np.array([[5, 0, 0], [0, 0, 5], [0, 0, 5]])
        report = MetricsReport.from_confusion(confusion, ("a", "b", "c"),
                                              eval_classes=("b", "c"))
        # macro over b (p=0, r=0) and c (p=0.5, r=1.0)
        assert report.macro_precision == pytest.approx(0.25)
        assert report.macro_recall == pytest.approx(0.5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            MetricsReport.from_confusion(np.zeros((2, 3)), ("a", "b"))


class TestEvaluate:
    def test_on_trained_model(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        target = dataset.filter_domain("target")
        fewshot = select_fewshot(target, 3, seed=5)
        cfg = PatchConfig(patch_height=24, patch_width=24, max_patches=4,
                          image_height=48, image_width=48)
        clf, _ = train_fewshot_only(fewshot, target,
                                    TrainConfig(epochs=2, batch_size=4,
                                                patches_per_image=2),
                                    cfg, BinarizationParams(window=15, offset=10),
                                    feature_dim=32)
        report = evaluate(clf, target)
        assert report.sample_count == len(target)
        assert report.confusion.sum() == len(target)
        assert 0.0 <= report.accuracy <= 1.0
        again = evaluate(clf, target)
        assert np.array_equal(report.confusion, again.confusion)

    def test_label_outside_space_rejected(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")  # has 'fr' labels
        ls = LabelSpace.from_domains((), ("en", "nl"))
        extractor = build_extractor("tiny_resnet", 32, seed=0)
        clf = LanguageClassifier(
            extractor=extractor, head=LinearHead(32, 2), label_space=ls,
            patch_config=PatchConfig(patch_height=24, patch_width=24, max_patches=4,
                                     image_height=48, image_width=48),
            binarization=BinarizationParams(window=15, offset=10),
            arch="tiny_resnet", feature_dim=32)
        with pytest.raises(DataError):
            evaluate(clf, source)


class TestTiming:
    def test_with_includes_preprocessing(self):
        images = list(range(8))
        record = time_inference(lambda x: x, lambda x: x, images, repetitions=1,
                                method="doclangid", dataset_tag="t")
        assert record.mean_with_preprocessing >= record.mean_without_preprocessing
        assert record.image_count == 5  # 8 images minus 3 warm-up

    def test_injected_delay_measured(self):
        delay = 0.02

        def slow_predict(x):
            time.sleep(delay)

        record = time_inference(lambda x: x, slow_predict, list(range(6)),
                                repetitions=1)
        assert record.mean_without_preprocessing == pytest.approx(delay, rel=0.2)

    def test_preprocessing_delay_split(self):
        def slow_pre(x):
            time.sleep(0.01)
            return x

        record = time_inference(slow_pre, lambda x: x, list(range(5)), repetitions=1)
        assert record.mean_with_preprocessing - record.mean_without_preprocessing == \
            pytest.approx(0.01, rel=0.35)

    def test_empty_sample_rejected(self):
        with pytest.raises(DataError):
            time_inference(lambda x: x, lambda x: x, [], repetitions=1)

    def test_zero_repetitions_rejected(self):
        with pytest.raises(DataError):
            time_inference(lambda x: x, lambda x: x, [1], repetitions=0)

    def test_record_invariant_enforced(self):
        with pytest.raises(ValueError):
            TimingRecord(method="m", dataset_tag="d", mean_with_preprocessing=0.1,
                         mean_without_preprocessing=0.2, image_count=1)


class TestEmitReport:
    def _report(self):
        return MetricsReport.from_confusion(np.array([[8, 2], [3, 7]]), ("a", "b"),
                                            variant="DocLangID")

    def test_table_shape(self):
        table = metrics_table([self._report()])
        lines = table.strip().splitlines()
        assert lines[1] == "method\taccuracy\tprecision\trecall\tf1"
        assert lines[2].startswith("DocLangID\t0.7500")

    def test_files_written_and_deterministic(self, tmp_path):
        report = self._report()
        first = emit_report([report], tmp_path / "one")
        second = emit_report([report], tmp_path / "two")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_plot_rendered(self, tmp_path):
        files = emit_report([self._report()], tmp_path, formats=("plot",))
        assert files[0].exists()
        assert files[0].suffix == ".png"

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], tmp_path)

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([self._report()], tmp_path, formats=("xml",))

    def test_timing_table(self):
        record = TimingRecord(method="doclangid", dataset_tag="synthetic",
                              mean_with_preprocessing=0.5,
                              mean_without_preprocessing=0.2, image_count=10)
        table = timing_table([record])
        assert "0.500000\t0.200000\t10" in table
