import pytest

from phonmatch.data import extract_features, load_manifest
from phonmatch.g2p import default_lexicon
from phonmatch.model import StubEmbedder
from phonmatch.synth import synth_dataset

SMOKE_KEYWORDS = ["go", "friend", "seven", "water"]


@pytest.fixture(scope="session")
def lexicon():
    return default_lexicon()


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory, lexicon):
    """4 keywords x 4 synthetic utterances: (manifest path, entries, features)."""
    out = tmp_path_factory.mktemp("smoke")
    manifest = synth_dataset(SMOKE_KEYWORDS, 4, 0, out, lexicon)
    entries = load_manifest(manifest)
    return manifest, entries, extract_features(entries, StubEmbedder(0))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
