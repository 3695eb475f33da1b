import numpy as np
import pytest

from dataplace.instance import UnitInstance


def make_unit(c, w, f, empty=None, check=True):
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    w = np.asarray(w, dtype=float)
    inst = UnitInstance(n, w.shape[1], np.ones(n, dtype=np.int64), c, w,
                        np.asarray(f, dtype=float), empty)
    # check=False allows k > n, which the cache feasibility rule forbids
    return inst.check() if check else inst


@pytest.fixture
def hand():
    """Two agents at distance 1, unit demand for both resources, no fees, C_empty = 3."""
    return make_unit([[0, 1], [1, 0]], np.ones((2, 2)), np.zeros((2, 2)), 3.0)
