import numpy as np
import pytest

from thinshell import rng


@pytest.fixture(autouse=True)
def _single_thread():
    rng.set_threads(1)
    yield
    rng.set_threads(1)


def quantile_t2(x, p, y, q):
    """Independent 1D oracle: transport cost of the monotone coupling."""
    from thinshell.verify import _quantile_t2

    return _quantile_t2(np.asarray(x, float), np.asarray(p, float), np.asarray(y, float),
                        np.asarray(q, float))
