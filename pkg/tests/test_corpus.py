import numpy as np
import pytest

from doclangid.corpus import (
    BUNDLED_LANGUAGES,
    CorpusSpec,
    LabelSpace,
    build_joint_dataset,
    fewshot_eval_pool,
    generate_synthetic_corpus,
    load_manifest,
    load_seed_sentences,
    render_corpus_page,
    select_fewshot,
    split_source,
    write_manifest,
)
from doclangid.errors import DataError
from doclangid.pagegen import DegradationLevels


class TestLabelSpace:
    def test_union_source_order_first(self):
        ls = LabelSpace.from_domains(("nl", "fr", "es"), ("en", "de", "nl"))
        assert ls.classes == ("nl", "fr", "es", "en", "de")
        assert ls.k == 5
        assert ls.index("en") == 3

    def test_index_bijection(self):
        ls = LabelSpace.from_domains(("a", "b"), ("c", "b"))
        assert [ls.index(c) for c in ls.classes] == list(range(ls.k))

    def test_unknown_language_raises(self):
        ls = LabelSpace.from_domains(("a",), ("a", "b"))
        with pytest.raises(DataError):
            ls.index("zz")

    def test_duplicate_codes_rejected(self):
        with pytest.raises(DataError):
            LabelSpace.from_domains(("a", "a"), ("b",))

    def test_strict_sum_compatibility_mode(self):
        ls = LabelSpace.from_domains(("nl", "fr"), ("en", "nl"), strict_sum=True)
        assert ls.classes == ("nl", "fr", "en", "nl@target")
        assert ls.k == 4


class TestSeedTexts:
    def test_all_bundled_languages_present(self):
        for lang in BUNDLED_LANGUAGES:
            sentences = load_seed_sentences(lang)
            assert len(sentences) >= 40
            assert sum(len(s) for s in sentences) >= 1000

    def test_missing_language_raises(self):
        with pytest.raises(DataError):
            load_seed_sentences("xx")


class TestCorpusSpec:
    def test_overlap_required(self):
        with pytest.raises(DataError):
            CorpusSpec(source_languages=("fr",), target_languages=("en",),
                       pages_per_source_language=1, pages_per_target_language=1)

    def test_unseen_target_required(self):
        with pytest.raises(DataError):
            CorpusSpec(source_languages=("fr", "en"), target_languages=("en",),
                       pages_per_source_language=1, pages_per_target_language=1)

    def test_round_trip_dict(self):
        spec = CorpusSpec(seed=9)
        assert CorpusSpec.from_dict(spec.to_dict()) == spec


class TestGeneration:
    def test_counts_match_spec(self, tiny_corpus):
        spec, manifest, dataset, _ = tiny_corpus
        assert len(manifest.entries) == 2 * 10 + 2 * 12
        by_group = {}
        for e in manifest.entries:
            by_group[(e.domain, e.label)] = by_group.get((e.domain, e.label), 0) + 1
        assert by_group[("source", "fr")] == 10
        assert by_group[("target", "en")] == 12

    def test_deterministic_manifest_bytes(self, tiny_corpus, tmp_path):
        spec, _, _, out = tiny_corpus
        again = tmp_path / "again"
        generate_synthetic_corpus(spec, again)
        first = (out / "manifest.tsv").read_bytes()
        second = (again / "manifest.tsv").read_bytes()
        assert first == second

    def test_deterministic_pixels(self, tiny_corpus, tmp_path):
        spec, _, dataset, out = tiny_corpus
        again = tmp_path / "again_px"
        generate_synthetic_corpus(spec, again)
        _, dataset2 = load_manifest(again / "manifest.tsv")
        for entry in dataset.entries[::7]:
            assert np.array_equal(dataset.load(entry.image_id),
                                  dataset2.load(entry.image_id))

    def test_zero_degradation_is_identity(self):
        spec = CorpusSpec(
            source_languages=("fr", "nl"), target_languages=("en", "nl"),
            pages_per_source_language=2, pages_per_target_language=2,
            page_height=96, page_width=96, degradation=DegradationLevels(), seed=3)
        sentences = load_seed_sentences("fr")
        page = render_corpus_page(spec, "source", "fr", 0, sentences)
        again = render_corpus_page(spec, "source", "fr", 0, sentences)
        assert np.array_equal(page, again)
        # the degraded path with all-zero levels equals the clean render
        assert page.dtype == np.uint8

    def test_picture_heavy_pages_have_large_blocks(self, tiny_corpus):
        # target pages must contain sizable non-background structure
        _, _, dataset, _ = tiny_corpus
        target = dataset.filter_domain("target")
        page = target.load(target.entries[0].image_id)
        dark_fraction = float(np.mean(page < 128))
        assert dark_fraction > 0.02

    def test_missing_seed_text_language(self, tmp_path):
        spec = CorpusSpec(source_languages=("fr", "xx"), target_languages=("en", "fr"),
                          pages_per_source_language=1, pages_per_target_language=1,
                          page_height=64, page_width=64)
        with pytest.raises(DataError):
            generate_synthetic_corpus(spec, tmp_path / "bad")


class TestManifestLoading:
    def test_round_trip(self, tiny_corpus):
        _, manifest, dataset, out = tiny_corpus
        loaded, _ = load_manifest(out / "manifest.tsv")
        assert loaded.entries == manifest.entries
        assert loaded.counts == manifest.counts

    def test_missing_file_named(self, tiny_corpus, tmp_path):
        _, manifest, _, out = tiny_corpus
        clone = tmp_path / "missing"
        clone.mkdir()
        (clone / "images").mkdir()
        for e in manifest.entries:
            data = (out / e.path).read_bytes()
            (clone / e.path).write_bytes(data)
        victim = manifest.entries[3]
        (clone / victim.path).unlink()
        write_manifest(manifest, clone / "manifest.tsv")
        with pytest.raises(DataError, match=victim.image_id):
            load_manifest(clone / "manifest.tsv")

    def test_duplicate_id_named(self, tiny_corpus, tmp_path):
        _, manifest, _, out = tiny_corpus
        text = (out / "manifest.tsv").read_text()
        entry_lines = [l for l in text.splitlines() if l.startswith("entry\t")]
        dup = tmp_path / "dup.tsv"
        dup.write_text(text + entry_lines[0] + "\n")
        (tmp_path / "images").mkdir(exist_ok=True)
        first_id = entry_lines[0].split("\t")[1]
        with pytest.raises(DataError, match=first_id):
            load_manifest(dup)

    def test_version_mismatch(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("doclangid-manifest\t99\n")
        with pytest.raises(DataError, match="version"):
            load_manifest(bad)

    def test_count_mismatch(self, tiny_corpus, tmp_path):
        _, manifest, _, out = tiny_corpus
        text = (out / "manifest.tsv").read_text()
        lines = [l for l in text.splitlines() if not l.startswith("entry\t")]
        entries = [l for l in text.splitlines() if l.startswith("entry\t")]
        clone = tmp_path / "c"
        clone.mkdir()
        (clone / "images").mkdir()
        for e in manifest.entries:
            (clone / e.path).write_bytes((out / e.path).read_bytes())
        # drop one entry but keep declared counts
        (clone / "manifest.tsv").write_text("\n".join(lines + entries[1:]) + "\n")
        with pytest.raises(DataError, match="counts"):
            load_manifest(clone / "manifest.tsv")


class TestSplits:
    def test_exact_counts(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")
        train, eval_split = split_source(source, 7, 3, seed=1)
        assert len(train) == 14 and len(eval_split) == 6
        by_lang = {}
        for e in train.entries:
            by_lang[e.label] = by_lang.get(e.label, 0) + 1
        assert by_lang == {"fr": 7, "nl": 7}

    def test_disjoint_and_remainder(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")
        train, eval_split = split_source(source, 6, None, seed=2)
        train_ids = {e.image_id for e in train.entries}
        eval_ids = {e.image_id for e in eval_split.entries}
        assert not train_ids & eval_ids
        assert len(train_ids | eval_ids) == len(source)

    def test_zero_train(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")
        train, eval_split = split_source(source, 0, None, seed=2)
        assert len(train) == 0
        assert len(eval_split) == len(source)

    def test_deterministic(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")
        a = split_source(source, 5, 2, seed=9)
        b = split_source(source, 5, 2, seed=9)
        assert [e.image_id for e in a[0].entries] == [e.image_id for e in b[0].entries]
        assert [e.image_id for e in a[1].entries] == [e.image_id for e in b[1].entries]

    def test_insufficient_raises(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")
        with pytest.raises(DataError):
            split_source(source, 9, 5, seed=0)


class TestFewShot:
    def test_counts_and_pool_disjoint(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        target = dataset.filter_domain("target")
        fs = select_fewshot(target, 4, seed=5)
        assert len(fs) == 8
        pool = fewshot_eval_pool(target, fs)
        assert not fs.all_ids() & {e.image_id for e in pool.entries}
        assert len(pool) == len(target) - 8

    def test_nested_prefixes(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        target = dataset.filter_domain("target")
        small = select_fewshot(target, 3, seed=5)
        large = select_fewshot(target, 9, seed=5)
        for lang in small.samples:
            assert large.samples[lang][:3] == small.samples[lang]
        assert small.all_ids() <= large.all_ids()

    def test_too_many_raises(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        target = dataset.filter_domain("target")
        with pytest.raises(DataError):
            select_fewshot(target, 13, seed=0)

    def test_deterministic(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        target = dataset.filter_domain("target")
        assert select_fewshot(target, 5, seed=1).samples == \
            select_fewshot(target, 5, seed=1).samples


class TestJointDataset:
    def test_sizes_add_up(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")
        target = dataset.filter_domain("target")
        train, _ = split_source(source, 7, None, seed=1)
        fs = select_fewshot(target, 4, seed=5)
        ls = LabelSpace.from_domains(("fr", "nl"), ("en", "nl"))
        joint = build_joint_dataset(train, fs, target, ls)
        assert len(joint) == len(train) + len(fs)

    def test_unknown_language_rejected(self, tiny_corpus):
        _, _, dataset, _ = tiny_corpus
        source = dataset.filter_domain("source")
        target = dataset.filter_domain("target")
        train, _ = split_source(source, 7, None, seed=1)
        fs = select_fewshot(target, 4, seed=5)
        bad_ls = LabelSpace.from_domains(("fr", "nl"), ("nl",))
        with pytest.raises(DataError):
            build_joint_dataset(train, fs, target, bad_ls)
