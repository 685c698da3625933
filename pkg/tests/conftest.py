import pytest

from cmverify.bundled import load_bundled
from cmverify.scenario import ScenarioConfig


@pytest.fixture(scope="session")
def class_cm():
    return load_bundled("cam_front_class")


@pytest.fixture(scope="session")
def prop_cm():
    return load_bundled("cam_front_prop")


@pytest.fixture()
def base_cfg():
    return ScenarioConfig()
