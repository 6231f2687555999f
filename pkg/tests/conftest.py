import pytest

from rtmodels.kernel import Model
from rtmodels.manager import make_world
from rtmodels.metamodels import build_source_metamodel, build_target_metamodel


@pytest.fixture
def world():
    return make_world(seed=0)


@pytest.fixture
def smm():
    return build_source_metamodel()


@pytest.fixture
def tmm():
    return build_target_metamodel()


@pytest.fixture
def target(tmm):
    return Model(tmm, "target")
