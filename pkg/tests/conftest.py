import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'scripts'))

from spectral_core import GridSpec, random_field  # noqa: E402


@pytest.fixture
def grid8():
    return GridSpec.cube(8)


@pytest.fixture
def field8(grid8):
    return random_field(grid8, seed=3)
