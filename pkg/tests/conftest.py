import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from doclangid.corpus import CorpusSpec, generate_synthetic_corpus, load_manifest
from doclangid.pagegen import DegradationLevels


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A small two-domain corpus shared by tests that need real pages."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    spec = CorpusSpec(
        source_languages=("fr", "nl"),
        target_languages=("en", "nl"),
        pages_per_source_language=10,
        pages_per_target_language=12,
        page_height=96,
        page_width=96,
        degradation=DegradationLevels(noise_prob=0.01, blur_radius=(0.0, 0.6),
                                      contrast_jitter=(-0.1, 0.1)),
        seed=5,
    )
    manifest = generate_synthetic_corpus(spec, out)
    _, dataset = load_manifest(out / "manifest.tsv")
    return spec, manifest, dataset, out
