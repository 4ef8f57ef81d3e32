import random

import pytest

from teasim.gen import GenConfig, _trial_rng


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


def trial_rng(tag: str, i: int) -> random.Random:
    return _trial_rng(0xBEEF, tag, i)


@pytest.fixture
def cfg():
    return GenConfig(seed=0xBEEF)
