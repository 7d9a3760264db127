import numpy as np
import pytest

from ubergnn.data import InteractionRecord


def make_records(sessions: dict[str, list[str]], user="u0") -> list[InteractionRecord]:
    out = []
    for sid, items in sessions.items():
        for t, item in enumerate(items):
            out.append(InteractionRecord(user, item, 100 + t, sid))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)
