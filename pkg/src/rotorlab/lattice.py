"""Geometry of the integer lattice Z^d.

Points are plain tuples of ints.  Directions are indexed ``0 .. 2d-1`` in the
fixed order ``+e_1, ..., +e_d, -e_1, ..., -e_d``; every rotor policy and
kernel in the package refers to this ordering.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, Iterator, Sequence

import numpy as np

Point = tuple[int, ...]

MAX_DIM = 4


class LatticeError(ValueError):
    pass


def check_dim(d: int) -> int:
    if not 1 <= d <= MAX_DIM:
        raise LatticeError(f"dimension must be in 1..{MAX_DIM}, got {d}")
    return d


def origin(d: int) -> Point:
    return (0,) * check_dim(d)


def unit_ball_volume(d: int) -> float:
    """Volume of the Euclidean unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def direction_vector(k: int, d: int) -> Point:
    v = [0] * d
    v[k % d] = 1 if k < d else -1
    return tuple(v)


def direction_vectors(d: int) -> np.ndarray:
    """(2d, d) int array of unit steps in the package-wide direction order."""
    eye = np.eye(d, dtype=np.int64)
    return np.concatenate([eye, -eye])


def opposite(k: int, d: int) -> int:
    return (k + d) % (2 * d)


def step(x: Point, k: int) -> Point:
    d = len(x)
    i = k % d
    s = 1 if k < d else -1
    return x[:i] + (x[i] + s,) + x[i + 1:]


def neighbors(x: Point) -> list[Point]:
    """The 2d lattice neighbours of ``x`` in direction order."""
    return [step(x, k) for k in range(2 * len(x))]


def norm2(x: Sequence[int]) -> int:
    return sum(c * c for c in x)


def linf(x: Sequence[int]) -> int:
    return max(abs(c) for c in x)


def in_orthant(x: Point, base: Point) -> bool:
    """True iff ``x_i >= base_i`` for every coordinate."""
    return all(a >= b for a, b in zip(x, base))


class Region:
    """Immutable finite set of lattice sites.

    Membership is a frozenset lookup.  ``mask()`` gives a dense boolean view
    over the (optionally padded) bounding box for numerical kernels.
    """

    __slots__ = ("_sites", "d", "_array", "_bbox")

    def __init__(self, sites: Iterable[Sequence[int]], d: int | None = None):
        pts = frozenset(tuple(int(c) for c in s) for s in sites)
        if d is None:
            if not pts:
                raise LatticeError("dimension required for an empty region")
            d = len(next(iter(pts)))
        check_dim(d)
        if any(len(p) != d for p in pts):
            raise LatticeError("all points of a region must share one dimension")
        self._sites = pts
        self.d = d
        self._array = None
        self._bbox = None

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Region":
        arr = np.asarray(arr, dtype=np.int64)
        if arr.ndim != 2:
            raise LatticeError("expected an (n, d) coordinate array")
        return cls(map(tuple, arr.tolist()), d=arr.shape[1])

    @property
    def sites(self) -> frozenset[Point]:
        return self._sites

    def __contains__(self, x: object) -> bool:
        return x in self._sites

    def __iter__(self) -> Iterator[Point]:
        return iter(self._sites)

    def __len__(self) -> int:
        return len(self._sites)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Region):
            return self.d == other.d and self._sites == other._sites
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.d, self._sites))

    def __repr__(self) -> str:
        if len(self) <= 8:
            return f"Region({sorted(self._sites)})"
        return f"Region(d={self.d}, n={len(self)})"

    def __or__(self, other: "Region") -> "Region":
        return Region(self._sites | other._sites, self.d)

    def __and__(self, other: "Region") -> "Region":
        return Region(self._sites & other._sites, self.d)

    def __sub__(self, other: "Region") -> "Region":
        return Region(self._sites - other._sites, self.d)

    def __xor__(self, other: "Region") -> "Region":
        return Region(self._sites ^ other._sites, self.d)

    def issubset(self, other: "Region") -> bool:
        return self._sites <= other._sites

    def sorted(self) -> list[Point]:
        return sorted(self._sites)

    def array(self) -> np.ndarray:
        """Sites as an (n, d) int64 array in sorted order."""
        if self._array is None:
            if self._sites:
                arr = np.array(self.sorted(), dtype=np.int64).reshape(len(self), self.d)
            else:
                arr = np.zeros((0, self.d), dtype=np.int64)
            arr.flags.writeable = False
            self._array = arr
        return self._array

    @property
    def bbox(self) -> tuple[Point, Point]:
        """Inclusive (lo, hi) corners of the bounding box."""
        if self._bbox is None:
            if not self._sites:
                raise LatticeError("empty region has no bounding box")
            a = self.array()
            self._bbox = (tuple(a.min(axis=0).tolist()), tuple(a.max(axis=0).tolist()))
        return self._bbox

    def mask(self, pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Dense boolean occupancy over the bounding box grown by ``pad``.

        Returns ``(mask, lo)`` where ``mask[idx]`` corresponds to the point
        ``lo + idx``.
        """
        lo, hi = self.bbox
        lo_arr = np.array(lo, dtype=np.int64) - pad
        shape = tuple(int(h - l) + 1 + 2 * pad for l, h in zip(lo, hi))
        m = np.zeros(shape, dtype=bool)
        idx = self.array() - lo_arr
        m[tuple(idx.T)] = True
        return m, lo_arr

    def translate(self, v: Sequence[int]) -> "Region":
        return Region((tuple(a + b for a, b in zip(x, v)) for x in self._sites), self.d)


def boundary(A: Region) -> Region:
    """Sites outside ``A`` adjacent to some site of ``A``."""
    out = set()
    for x in A:
        for y in neighbors(x):
            if y not in A:
                out.add(y)
    return Region(out, A.d)


def ball_radius2(n: float, d: int) -> float:
    """Squared radius (n / omega_d)^(2/d) of the lattice ball B_n."""
    return (n / unit_ball_volume(d)) ** (2.0 / d)


def ball_points(n: int, d: int) -> np.ndarray:
    """(m, d) array of the sites y with omega_d * |y|^d < n, strict."""
    check_dim(d)
    if n < 1:
        raise LatticeError("lattice ball needs n >= 1")
    if d == 1:
        # omega_1 = 2 exactly; compare in integers so even n is handled right
        half = (n - 1) // 2
        return np.arange(-half, half + 1, dtype=np.int64).reshape(-1, 1)
    r2 = ball_radius2(n, d)
    R = int(math.isqrt(int(r2))) + 1
    ax = np.arange(-R, R + 1, dtype=np.int64)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    s = (pts * pts).sum(axis=1)
    return pts[s < r2]


def lattice_ball(n: int, d: int) -> Region:
    return Region.from_array(ball_points(n, d))


def cube(x: Point, r: int) -> Region:
    """L-infinity ball of radius ``r`` (side 2r+1) centred at ``x``."""
    if r < 0:
        raise LatticeError("cube radius must be nonnegative")
    rng = [range(c - r, c + r + 1) for c in x]
    return Region(itertools.product(*rng), len(x))


def is_connected(A: Region) -> bool:
    if len(A) <= 1:
        return True
    start = next(iter(A))
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in neighbors(x):
            if y in A and y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(A)
