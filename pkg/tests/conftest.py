import numpy as np
import pytest

from corpus.loader import load_corpus
from corpus.synth_corpus import SynthConfig, generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """2 speakers × 2 sessions × 6 s written to disk; returns the manifest path."""
    out = tmp_path_factory.mktemp("corpus")
    return generate_corpus(SynthConfig(n_speakers=2, sessions_per_speaker=2, session_seconds=6.0, seed=3), out)


@pytest.fixture(scope="session")
def tiny_sessions(tiny_corpus):
    return load_corpus(tiny_corpus)
