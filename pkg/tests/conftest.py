import pytest

from sciteam.templates import load_templates
from sciteam.vecstore import MockEmbeddingProvider, build_paper_index

from helpers import manual_ecosystem


@pytest.fixture(scope="session")
def templates():
    return load_templates()


@pytest.fixture()
def provider():
    return MockEmbeddingProvider(dims=8, seed=0)


@pytest.fixture()
def small_ecosystem():
    # 8 scientists; leader a0000 has collaborated with everyone so the
    # selection row is informative, plus some cross links
    raw = [
        [0, 3, 1, 2, 1, 1, 2, 1],
        [3, 0, 2, 0, 0, 1, 0, 0],
        [1, 2, 0, 1, 0, 0, 0, 0],
        [2, 0, 1, 0, 1, 0, 0, 0],
        [1, 0, 0, 1, 0, 2, 0, 0],
        [1, 1, 0, 0, 2, 0, 1, 0],
        [2, 0, 0, 0, 0, 1, 0, 1],
        [1, 0, 0, 0, 0, 0, 1, 0],
    ]
    return manual_ecosystem(raw)


@pytest.fixture()
def past_index(small_ecosystem, provider):
    return build_paper_index(small_ecosystem.past_papers, provider)
