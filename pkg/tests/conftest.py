import pytest
import torch

from seqdesign.simulators import ImageCorpus, make_digits_corpus


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(0)


@pytest.fixture(scope="session")
def desk_corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "digits14.npz"
    make_digits_corpus(path, size=14)
    return path


@pytest.fixture(scope="session")
def desk_corpus(desk_corpus_path) -> ImageCorpus:
    return ImageCorpus.load(desk_corpus_path)
