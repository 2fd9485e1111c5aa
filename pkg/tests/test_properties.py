import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from laws import LAWS


@pytest.mark.parametrize("name", sorted(LAWS))
@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_law(name, seed):
    LAWS[name](seed)
