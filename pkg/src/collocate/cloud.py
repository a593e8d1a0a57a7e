"""Point clouds, support neighbourhoods and simple cloud generators.

Neighbourhoods use the strict inclusion rule ``||x_j - x_i|| < h_i`` and are
found with a uniform cell list whose cell edge equals the largest support
radius, so only the ``3**dim`` surrounding cells are scanned per point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidCloud
from .indexing import MultiIndexSet, monomial_matrix, multi_index_set

logger = logging.getLogger(__name__)

__all__ = [
    "PointCloud",
    "Neighborhood",
    "build_neighborhoods",
    "brute_force_neighborhoods",
    "resolution_metrics",
    "check_unisolvency",
    "select_radii",
    "ball_volume",
    "read_cloud",
    "write_cloud",
    "regular_grid",
    "jittered_grid",
    "random_cloud",
    "make_rng",
]


@dataclass
class PointCloud:
    """Scattered points with one support radius per point.

    Parameters
    ----------
    positions : array_like, shape (N, dim)
    radii : array_like or float
        Support radius ``h_i`` of every point; a scalar is broadcast.
    boundary : array_like of bool, optional
        Marks points lying on the domain boundary.
    """

    positions: np.ndarray
    radii: np.ndarray
    boundary: np.ndarray = field(default=None)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[1] not in (1, 2, 3):
            raise InvalidCloud(f"positions must have shape (N, dim) with dim in 1..3, got {pos.shape}")
        if pos.shape[0] == 0:
            raise InvalidCloud("point cloud is empty")
        if not np.all(np.isfinite(pos)):
            raise InvalidCloud("positions contain non-finite values")
        radii = np.broadcast_to(np.asarray(self.radii, dtype=float), (pos.shape[0],)).copy()
        if not np.all(np.isfinite(radii)) or np.any(radii <= 0):
            raise InvalidCloud("support radii must be finite and positive")
        if self.boundary is None:
            boundary = np.zeros(pos.shape[0], dtype=bool)
        else:
            boundary = np.asarray(self.boundary, dtype=bool).reshape(-1)
            if boundary.shape[0] != pos.shape[0]:
                raise InvalidCloud("boundary mask length does not match the number of points")
        self.positions = pos
        self.radii = radii
        self.boundary = boundary

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.n_points

    def permuted(self, perm) -> "PointCloud":
        perm = np.asarray(perm)
        return PointCloud(self.positions[perm], self.radii[perm], self.boundary[perm])


@dataclass(frozen=True)
class Neighborhood:
    """Support neighbourhood ``N_i`` of one point.

    Attributes
    ----------
    center : int
        Index ``i`` of the centre point.
    members : ndarray of int
        Indices ``j`` with ``||x_j - x_i|| < h_i``, ascending, including ``i``.
    offsets : ndarray, shape (N_i, dim)
        ``x_j - x_i`` for every member, in the same order.
    radius : float
        Support radius ``h_i``.
    center_position : ndarray, shape (dim,)
    """

    center: int
    members: np.ndarray
    offsets: np.ndarray
    radius: float
    center_position: np.ndarray

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def dim(self) -> int:
        return self.offsets.shape[1]

    @property
    def self_slot(self) -> int:
        """Position of the centre inside ``members``."""
        return int(np.searchsorted(self.members, self.center))

    @property
    def member_positions(self) -> np.ndarray:
        return self.center_position + self.offsets

    def subset(self, mask) -> "Neighborhood":
        """Neighbourhood restricted to members selected by ``mask`` (centre kept)."""
        mask = np.asarray(mask, dtype=bool).copy()
        mask[self.self_slot] = True
        return Neighborhood(self.center, self.members[mask], self.offsets[mask], self.radius,
                            self.center_position)

    @classmethod
    def from_offsets(cls, offsets, radius, center_position=None, members=None) -> "Neighborhood":
        """Stand-alone neighbourhood from offsets; the zero offset is added if missing."""
        d = np.atleast_2d(np.asarray(offsets, dtype=float))
        if not np.any(np.all(d == 0.0, axis=1)):
            d = np.vstack([np.zeros((1, d.shape[1])), d])
        if members is None:
            members = np.arange(d.shape[0])
        members = np.asarray(members)
        order = np.argsort(members, kind="stable")
        members, d = members[order], d[order]
        centre = int(members[np.flatnonzero(np.all(d == 0.0, axis=1))[0]])
        cpos = np.zeros(d.shape[1]) if center_position is None else np.asarray(center_position, float)
        return cls(centre, members, d, float(radius), cpos)


def _make_neighborhood(cloud: PointCloud, i: int, members: np.ndarray) -> Neighborhood:
    members = np.sort(members)
    offsets = cloud.positions[members] - cloud.positions[i]
    return Neighborhood(int(i), members, offsets, float(cloud.radii[i]), cloud.positions[i].copy())


def _distance(diff):
    # explicit per-axis sum so both searches round identically
    sq = diff[..., 0] ** 2
    for k in range(1, diff.shape[-1]):
        sq = sq + diff[..., k] ** 2
    return np.sqrt(sq)


def build_neighborhoods(cloud: PointCloud) -> list[Neighborhood]:
    """All support neighbourhoods of ``cloud`` via a uniform cell list.

    Cells have edge ``max(h)``, so every neighbour of a point lies in its own
    cell or one of the adjacent ones.  Results match the direct ``O(N^2)``
    search exactly.
    """
    pos = cloud.positions
    n, dim = pos.shape
    cell = float(cloud.radii.max())
    lo = pos.min(axis=0)
    coords = np.floor((pos - lo) / cell).astype(np.int64)
    shape = coords.max(axis=0) + 1
    # linear cell ids with strides that leave no collisions
    strides = np.ones(dim, dtype=np.int64)
    for k in range(dim - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    cell_id = coords @ strides
    order = np.argsort(cell_id, kind="stable")
    sorted_ids = cell_id[order]
    uniq, starts = np.unique(sorted_ids, return_index=True)
    ends = np.append(starts[1:], n)
    lookup = {int(c): order[s:e] for c, s, e in zip(uniq, starts, ends)}
    shifts = np.array(np.meshgrid(*[[-1, 0, 1]] * dim, indexing="ij")).reshape(dim, -1).T

    result: list[Neighborhood | None] = [None] * n
    for c, s, e in zip(uniq, starts, ends):
        own = order[s:e]
        base = coords[own[0]]
        cand = []
        for sh in shifts:
            nb = base + sh
            if np.any(nb < 0) or np.any(nb >= shape):
                continue
            block = lookup.get(int(nb @ strides))
            if block is not None:
                cand.append(block)
        cand = np.concatenate(cand)
        diff = pos[cand][None, :, :] - pos[own][:, None, :]
        inside = _distance(diff) < cloud.radii[own][:, None]
        for row, i in enumerate(own):
            result[i] = _make_neighborhood(cloud, i, cand[inside[row]])
    logger.debug("built %d neighbourhoods with %d cells", n, len(uniq))
    return result


def brute_force_neighborhoods(cloud: PointCloud) -> list[Neighborhood]:
    """Reference ``O(N^2)`` search, used to validate the cell list."""
    pos = cloud.positions
    out = []
    for i in range(cloud.n_points):
        dist = _distance(pos - pos[i])
        out.append(_make_neighborhood(cloud, i, np.flatnonzero(dist < cloud.radii[i])))
    return out


def ball_volume(dim: int, r) -> np.ndarray:
    """Volume of the ``dim``-ball: ``2r``, ``pi r^2`` or ``4/3 pi r^3``."""
    r = np.asarray(r, dtype=float)
    return {1: 2.0 * r, 2: math.pi * r**2, 3: 4.0 / 3.0 * math.pi * r**3}[dim]


def resolution_metrics(neighborhoods, dim: int | None = None) -> np.ndarray:
    """Local spacing ``dx_i = (V_dim(h_i) / N_i)**(1/dim)``.

    Entries are NaN when a neighbourhood has no members.
    """
    nbhds = list(neighborhoods)
    if dim is None:
        dim = nbhds[0].dim
    h = np.array([nb.radius for nb in nbhds])
    counts = np.array([nb.size for nb in nbhds], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = (ball_volume(dim, h) / counts) ** (1.0 / dim)
    dx[counts == 0] = np.nan
    return dx


def check_unisolvency(nbhd: Neighborhood, order: int, include_zeroth: bool = True):
    """Whether the neighbourhood determines all polynomials of degree ``order``.

    The offsets are divided by ``h_i`` before building the Vandermonde-type
    matrix; this leaves the rank unchanged but removes the ``h**|alpha|``
    column scaling.  The numerical rank counts singular values above
    ``p * eps * sigma_max``.

    Returns
    -------
    ok : bool
    rank : int
    """
    index_set = multi_index_set(nbhd.dim, order, include_zeroth)
    X = monomial_matrix(nbhd.offsets / nbhd.radius, index_set)
    if X.shape[0] == 0:
        return False, 0
    sv = np.linalg.svd(X, compute_uv=False)
    tol = index_set.p * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    return rank == index_set.p, rank


def select_radii(positions, ratio: float, spacing: float | None = None) -> np.ndarray:
    """Support radii ``h = ratio * spacing``.

    When ``spacing`` is omitted it is estimated as the median nearest
    neighbour distance.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    if spacing is None:
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(pos).query(pos, k=2)
        spacing = float(np.median(dist[:, 1]))
    return np.full(pos.shape[0], float(ratio) * float(spacing))


def read_cloud(path, dim: int | None = None, radius: float | None = None) -> PointCloud:
    """Read a whitespace separated point file.

    Each non-comment line holds ``x y`` or ``x y z``, optionally followed by
    a support radius.  Lines starting with ``#`` are ignored.  Without ``dim``
    every column is a coordinate, so a trailing radius column requires
    ``dim`` to be given.
    """
    data = np.loadtxt(path, comments="#", ndmin=2)
    ncol = data.shape[1]
    if dim is None:
        dim = ncol
    if ncol == dim:
        if radius is None:
            raise InvalidCloud("file has no radius column; pass a radius")
        radii = radius
    elif ncol == dim + 1:
        radii = data[:, dim]
    else:
        raise InvalidCloud(f"expected {dim} or {dim + 1} columns, found {ncol}")
    return PointCloud(data[:, :dim], radii)


def write_cloud(path, cloud: PointCloud, with_radii: bool = True):
    cols = [cloud.positions]
    if with_radii:
        cols.append(cloud.radii[:, None])
    head = " ".join("xyz"[: cloud.dim]) + (" h" if with_radii else "")
    np.savetxt(path, np.hstack(cols), header=head, fmt="%.17g")


def make_rng(seed) -> np.random.Generator:
    """64-bit PCG generator with an explicit seed."""
    return np.random.Generator(np.random.PCG64(seed))


def _grid_points(dim, spacing, lower=0.0, upper=1.0):
    n = int(round((upper - lower) / spacing)) + 1
    axis = np.linspace(lower, upper, n)
    mesh = np.meshgrid(*[axis] * dim, indexing="ij")
    pos = np.stack([m.ravel() for m in mesh], axis=1)
    tol = 1e-12 * (upper - lower)
    boundary = np.any((pos <= lower + tol) | (pos >= upper - tol), axis=1)
    return pos, boundary


def regular_grid(dim: int, spacing: float, ratio: float, lower=0.0, upper=1.0) -> PointCloud:
    """Cartesian grid on ``[lower, upper]^dim`` with ``h = ratio * spacing``."""
    pos, boundary = _grid_points(dim, spacing, lower, upper)
    return PointCloud(pos, ratio * spacing, boundary)


def jittered_grid(dim: int, spacing: float, ratio: float, jitter: float, rng, lower=0.0,
                  upper=1.0) -> PointCloud:
    """Grid with interior points moved by ``U(-jitter, jitter) * spacing`` per axis.

    Boundary points stay on the boundary.
    """
    if not 0.0 <= jitter < 0.5:
        raise ValueError("jitter must lie in [0, 0.5)")
    pos, boundary = _grid_points(dim, spacing, lower, upper)
    shift = rng.uniform(-jitter, jitter, size=pos.shape) * spacing
    shift[boundary] = 0.0
    return PointCloud(pos + shift, ratio * spacing, boundary)


def random_cloud(dim: int, spacing: float, ratio: float, rng, lower=0.0, upper=1.0,
                 min_distance: float = 0.3, max_tries: int = 50) -> PointCloud:
    """Regular boundary points plus uniformly random interior points.

    Interior candidates closer than ``min_distance * spacing`` to an accepted
    point are rejected.  The interior count matches the regular grid.
    """
    grid, boundary = _grid_points(dim, spacing, lower, upper)
    pts = grid[boundary]
    target = int((~boundary).sum())
    dmin = min_distance * spacing
    # hash accepted points into cells of edge dmin; a conflict can only sit in
    # the 3**dim surrounding cells
    buckets: dict = {}

    def key(x):
        return tuple(np.floor((x - lower) / dmin).astype(int))

    def clashes(x):
        kx = np.array(key(x))
        for sh in np.ndindex(*([3] * dim)):
            for q in buckets.get(tuple(kx + np.array(sh) - 1), ()):
                if np.sum((q - x) ** 2) < dmin * dmin:
                    return True
        return False

    for q in pts:
        buckets.setdefault(key(q), []).append(q)
    fresh = []
    tries = 0
    while len(fresh) < target and tries < max_tries:
        tries += 1
        cand = rng.uniform(lower + 0.5 * dmin, upper - 0.5 * dmin, size=(2 * target, dim))
        for c in cand:
            if len(fresh) >= target:
                break
            if clashes(c):
                continue
            fresh.append(c)
            buckets.setdefault(key(c), []).append(c)
    pos = np.vstack([pts, np.asarray(fresh).reshape(-1, dim)])
    flags = np.concatenate([np.ones(len(pts), bool), np.zeros(len(fresh), bool)])
    return PointCloud(pos, ratio * spacing, flags)
