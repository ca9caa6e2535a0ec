import pytest

from oliverpg import SemidirectContext, corpus


@pytest.fixture(scope="session")
def ut3():
    return corpus.unitriangular(3, 5)


@pytest.fixture(scope="session")
def ut4():
    return corpus.unitriangular(4, 5)


@pytest.fixture(scope="session")
def ctx3(ut3):
    return SemidirectContext(ut3)


@pytest.fixture(scope="session")
def ctx4(ut4):
    return SemidirectContext(ut4)


@pytest.fixture(scope="session")
def wreath():
    return corpus.wreath_cp_cp(3)


@pytest.fixture(scope="session")
def jordan3():
    return corpus.jordan_block_module(3, 5)


@pytest.fixture(scope="session")
def jordan5():
    return corpus.jordan_block_module(5, 5)
