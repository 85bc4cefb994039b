import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """Four synthetic 128x128 images, ingested the same way plans do."""
    from latentmark.evalharness import ingest_corpus, synth_corpus

    root = tmp_path_factory.mktemp("corpus")
    synth_corpus(root, 4, 128, seed=5)
    return ingest_corpus(root, 4, 128)
