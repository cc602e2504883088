"""Steiner symmetrization and small-region enumeration."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .lattice import Point, Region, check_dim, neighbors

ENUMERATION_BUDGET = {1: 50, 2: 10, 3: 6}


class BudgetExceeded(ValueError):
    pass


def enumeration_budget(d: int) -> int:
    return ENUMERATION_BUDGET.get(d, 0)


@dataclass(frozen=True)
class ColumnDecomposition:
    """Columns of A along ``axis``: base point (axis coordinate zeroed) -> sorted offsets."""

    axis: int
    d: int
    columns: dict[Point, tuple[int, ...]]

    @classmethod
    def of(cls, A: Region, axis: int) -> "ColumnDecomposition":
        cols: dict[Point, list[int]] = {}
        for x in A:
            base = x[:axis] + (0,) + x[axis + 1:]
            cols.setdefault(base, []).append(x[axis])
        return cls(axis, A.d, {b: tuple(sorted(v)) for b, v in cols.items()})

    def alpha(self, base: Point) -> int:
        return len(self.columns.get(base, ()))

    def region(self) -> Region:
        i = self.axis
        return Region((b[:i] + (j,) + b[i + 1:] for b, js in self.columns.items() for j in js), self.d)


def centered_offsets(alpha: int) -> range:
    """Integers j with -alpha/2 < j <= alpha/2."""
    return range(-((alpha - 1) // 2), alpha // 2 + 1)


def steiner(A: Region, axis: int) -> Region:
    """Compress every column along ``axis`` to an interval centred on the
    hyperplane, the extra site of an even column going to the positive side."""
    if not 0 <= axis < A.d:
        raise ValueError(f"axis must be in 0..{A.d - 1}")
    cd = ColumnDecomposition.of(A, axis)
    cols = {b: tuple(centered_offsets(len(js))) for b, js in cd.columns.items()}
    return ColumnDecomposition(axis, A.d, cols).region()


def is_orthoconvex(A: Region) -> bool:
    for i in range(A.d):
        for js in ColumnDecomposition.of(A, i).columns.values():
            if js[-1] - js[0] + 1 != len(js):
                return False
    return True


def xi_quarters(A: Region) -> int:
    """4 * xi(A) = sum_x sum_i |4 x_i + 1|, an exact integer."""
    a = A.array()
    return int(np.abs(4 * a + 1).sum())


def xi(A: Region) -> float:
    return xi_quarters(A) / 4


def centring_quarters(A: Region) -> int:
    """4 * sum_x sum_i |x_i - 1/4|.

    A centred column is the unique set of its size nearest to 1/4 (the extra
    site of an even column sits on the positive side), so this drops by at
    least 1/2 whenever a Steiner map changes the region.  xi uses +1/4 and
    can rise instead, e.g. on a column {-1, 0} moved to {0, 1}.
    """
    a = A.array()
    return int(np.abs(4 * a - 1).sum())


def symmetrize_to_fixpoint(A: Region, max_passes: int | None = None) -> Region:
    """Apply the Steiner maps along every axis until none changes the region.

    Each changing pass lowers centring_quarters by at least 2, which bounds
    the loop; exceeding it indicates a bug.
    """
    cap = centring_quarters(A) // 2 + 2 if max_passes is None else max_passes
    for _ in range(cap):
        changed = False
        for i in range(A.d):
            B = steiner(A, i)
            if B != A:
                A, changed = B, True
        if not changed:
            return A
    raise RuntimeError("symmetrization did not reach a fixed point")


# -- enumeration ----------------------------------------------------------------

def point_symmetries(d: int) -> list[np.ndarray]:
    """The 2^d d! signed permutation matrices."""
    mats = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            m = np.zeros((d, d), dtype=np.int64)
            for r, (c, s) in enumerate(zip(perm, signs)):
                m[r, c] = s
            mats.append(m)
    return mats


_SYM_CACHE: dict[int, list[np.ndarray]] = {}


def _normalise(arr: np.ndarray) -> tuple:
    arr = arr - arr.min(axis=0)
    arr = arr[np.lexsort(arr.T[::-1])]
    return tuple(map(tuple, arr.tolist()))


def canonical_key(A: Region | np.ndarray) -> tuple:
    """Lexicographically smallest sorted site tuple over all symmetries,
    after moving the minimum corner to the origin."""
    arr = A.array() if isinstance(A, Region) else np.asarray(A, dtype=np.int64)
    d = arr.shape[1]
    syms = _SYM_CACHE.setdefault(d, point_symmetries(d))
    return min(_normalise(arr @ m.T) for m in syms)


def canonical_form(A: Region) -> Region:
    return Region(canonical_key(A), A.d)


def enumerate_connected(n: int, d: int) -> Iterator[Region]:
    """Every connected region of size ``n`` exactly once up to translation
    and lattice symmetry, in canonical form, sorted by canonical key."""
    check_dim(d)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > enumeration_budget(d):
        raise BudgetExceeded(f"enumeration limited to n <= {enumeration_budget(d)} in d={d}")
    level = {((0,) * d,)}
    for _ in range(n - 1):
        nxt = set()
        for shape in level:
            cells = set(shape)
            for x in shape:
                for y in neighbors(x):
                    if y not in cells:
                        nxt.add(canonical_key(np.array(shape + (y,), dtype=np.int64)))
        level = nxt
    for key in sorted(level):
        yield Region(key, d)


# -- shape encoding -------------------------------------------------------------

def rle(A: Region) -> str:
    """Run-length encoding of the occupied rows, top row first.

    ``o`` marks a site and ``b`` a gap, runs prefixed by their length; rows
    end with ``$`` and the pattern with ``!``.  Each row starts at the left
    edge of the bounding box.  In d >= 3 the 2-d slices along the remaining
    axes are joined by ``|``.
    """
    if len(A) == 0:
        return "!"
    arr = A.array()
    if A.d == 1:
        arr = np.concatenate([arr, np.zeros((len(arr), 1), np.int64)], axis=1)
    lo = arr.min(axis=0)
    arr = arr - lo
    hi = arr.max(axis=0)
    slabs = []
    extra = [range(h + 1) for h in hi[2:]]
    for rest in itertools.product(*extra):
        sel = arr[np.all(arr[:, 2:] == np.array(rest, dtype=np.int64), axis=1)] if extra else arr
        occ = {(int(x), int(y)) for x, y in sel[:, :2]}
        rows = []
        for y in range(hi[1], -1, -1):
            line = "".join("o" if (x, y) in occ else "b" for x in range(hi[0] + 1)).rstrip("b")
            rows.append(_runs(line))
        slabs.append("$".join(rows))
    return "|".join(slabs) + "!"


def _runs(line: str) -> str:
    out = []
    for ch, grp in itertools.groupby(line):
        k = len(list(grp))
        out.append(f"{k if k > 1 else ''}{ch}")
    return "".join(out)


def from_rle(s: str, d: int = 2) -> Region:
    """Inverse of :func:`rle` for d <= 2, anchored at the bounding-box corner."""
    if d > 2:
        raise ValueError("from_rle supports d <= 2")
    rows = s.rstrip("!").split("$")
    pts = []
    for r, row in enumerate(rows):
        y = len(rows) - 1 - r
        x, num = 0, ""
        for ch in row:
            if ch.isdigit():
                num += ch
                continue
            k = int(num or 1)
            if ch == "o":
                pts.extend((x + j, y) for j in range(k))
            x += k
            num = ""
    if d == 1:
        pts = [(x,) for x, _ in pts]
    return Region(pts, d)
