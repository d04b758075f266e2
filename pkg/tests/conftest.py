import numpy as np
import pytest

from luna_nlm import data


def grad_close(analytic, numeric, tol):
    """Relative agreement, normalized by the gradient's own scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    return np.max(np.abs(analytic - numeric)) / scale < tol


@pytest.fixture(scope="session")
def cubic_ds():
    return data.gen_cubic_gap(seed=0)


@pytest.fixture(scope="session")
def squiggle_ds():
    return data.gen_squiggle_gap(seed=0)
