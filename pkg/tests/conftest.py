import numpy as np
import pytest

from collocate.cloud import Neighborhood
from collocate.indexing import index_count


def random_neighborhood(rng, dim, order, radius=0.1, n_points=None, half=None, center=None):
    """Random neighbourhood with ``2 p + 3`` members inside ``0.95 h``.

    ``half=(axis, sign)`` additionally places every member in that half space.
    """
    p = index_count(dim, order, True)
    n = n_points if n_points is not None else 2 * p + 3
    pts = []
    while len(pts) < n:
        x = rng.uniform(-1.0, 1.0, size=dim)
        r = np.linalg.norm(x)
        if r > 0.95 or r < 0.05:
            continue
        if half is not None:
            axis, sign = half
            x[axis] = sign * abs(x[axis])
        pts.append(x * radius)
    c = np.zeros(dim) if center is None else np.asarray(center, float)
    members = rng.permutation(n + 1)
    return Neighborhood.from_offsets(np.vstack([np.zeros(dim), pts]), radius,
                                     center_position=c, members=members)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
