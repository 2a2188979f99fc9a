import pytest

from factories import THRESHOLD, build_chain, make_actors


@pytest.fixture
def actors():
    return make_actors()


@pytest.fixture
def registry(actors):
    return actors.registry


@pytest.fixture
def threshold():
    return THRESHOLD


@pytest.fixture
def chain(actors):
    return build_chain(actors, blocks=3, txs_per_block=2)
