import pytest

from dymon.numcore import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)

