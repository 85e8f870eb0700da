import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

FS = 8000


@pytest.fixture
def fs():
    return FS


@pytest.fixture
def rng():
    return np.random.default_rng(20260821)
