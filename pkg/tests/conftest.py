import pytest

from agrochain.formulation import build_model
from agrochain.instance import bundled_instance, case_study_instance


@pytest.fixture(scope="session")
def case_study():
    return case_study_instance()


@pytest.fixture(scope="session")
def case_model(case_study):
    return build_model(case_study, include_variance=True)


@pytest.fixture(scope="session")
def micro_zero():
    return bundled_instance("micro_zero_demand")


@pytest.fixture(scope="session")
def micro_batch():
    return bundled_instance("micro_single_batch")


@pytest.fixture(scope="session")
def micro_loss():
    return bundled_instance("micro_forced_loss")
