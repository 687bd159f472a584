import pytest

from helpers import clustered_vectors, make_items


@pytest.fixture(scope="session")
def small_corpus():
    vecs, assign, anchors = clustered_vectors(n=400, dim=16, clusters=8, sigma=0.15, seed=7)
    return make_items(vecs, assign), vecs, assign, anchors
