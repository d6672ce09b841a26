import pytest

from nlsqp import make_spec


@pytest.fixture
def tp1():
    # Single mode, cubic: the exact plane-wave case.
    return make_spec(d=1, b=1, p=1, delta=1e-3, j_list=[2], amplitudes=[0.7])


@pytest.fixture
def tp2():
    # Two modes in one dimension, cubic: the closed-form modulation case.
    return make_spec(d=1, b=2, p=1, delta=1e-3, j_list=[1, 2],
                     amplitudes=[0.6, 0.8])


@pytest.fixture
def tp3():
    # Two modes in two dimensions, quintic; amplitudes picked off the
    # excised set for the default second-step threshold.
    return make_spec(d=2, b=2, p=2, delta=1e-3, j_list=[(1, 0), (0, 1)],
                     amplitudes=[0.9, 0.35])
