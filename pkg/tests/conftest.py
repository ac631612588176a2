import pytest

from tests.helpers import make_design


@pytest.fixture
def small_design():
    return make_design(n_groups=6, n_per_group=5, p=12, seed=42)
