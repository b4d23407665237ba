import os

import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile(
    "fast", max_examples=15, deadline=None, derandomize=True
)
hypothesis.settings.register_profile(
    "default", max_examples=40, deadline=None, derandomize=True
)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
