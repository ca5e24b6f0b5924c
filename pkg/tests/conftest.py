import numpy as np
import pytest

from ictd.mrp import Mrp


@pytest.fixture
def mrp_a() -> Mrp:
    """2-state chain with uniform mixing; v = [1.5, 0.5]."""
    return Mrp(
        transition=np.array([[0.5, 0.5], [0.5, 0.5]]),
        reward=np.array([1.0, 0.0]),
        gamma=0.5,
        init_dist=np.array([0.5, 0.5]),
    )


@pytest.fixture
def mrp_b() -> Mrp:
    """Deterministic 2-cycle; v = [4/3, 2/3]."""
    return Mrp(
        transition=np.array([[0.0, 1.0], [1.0, 0.0]]),
        reward=np.array([1.0, 0.0]),
        gamma=0.5,
        init_dist=np.array([0.5, 0.5]),
    )


@pytest.fixture
def single_state() -> Mrp:
    """1-state chain; v = 2, TD iterates are the geometric partial sums."""
    return Mrp(
        transition=np.array([[1.0]]),
        reward=np.array([1.0]),
        gamma=0.5,
        init_dist=np.array([1.0]),
    )
