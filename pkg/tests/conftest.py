import numpy as np
import pytest

_WORDS = (
    "the quick brown fox jumps over a lazy dog while rain falls on green "
    "hills and small birds sing near quiet rivers under pale morning light "
    "people walk through narrow streets carrying baskets of bread and fruit "
    "toward the old market where music drifts between stone walls").split()

_PUNCT = [". ", ", ", "; ", ". ", ". "]


def synth_text(n_bytes: int, seed: int = 0) -> str:
    """Deterministic pseudo-English prose of roughly n_bytes UTF-8 bytes."""
    rng = np.random.default_rng(seed)
    parts = []
    size = 0
    while size < n_bytes:
        sent_len = int(rng.integers(4, 12))
        words = [_WORDS[int(i)] for i in rng.integers(0, len(_WORDS), sent_len)]
        sent = " ".join(words).capitalize() + _PUNCT[int(rng.integers(0, 5))]
        if rng.random() < 0.1:
            sent += "\n"
        parts.append(sent)
        size += len(sent)
    return "".join(parts)[:n_bytes]


@pytest.fixture
def corpus_file(tmp_path):
    def make(n_bytes=10_000, seed=0):
        path = tmp_path / "corpus.txt"
        path.write_text(synth_text(n_bytes, seed))
        return path
    return make
