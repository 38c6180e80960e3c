import pytest

from tablerl import synth


@pytest.fixture(scope="session")
def small_suite():
    return synth.make_suite(seed=11, n=60)


@pytest.fixture(scope="session")
def medium_suite():
    return synth.make_suite(seed=5, n=300)
