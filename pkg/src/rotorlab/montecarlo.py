"""Seeded random-walk estimators.

Trials are split into fixed blocks; block ``b`` draws from a Philox stream
keyed by ``(seed, stream_id, b)``.  Results depend only on ``(seed, trials)``
and blocks can be evaluated in any order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .lattice import Point, Region, in_orthant

BLOCK = 4096

_ORTHANT, _CUBE, _EXIT = 1, 2, 3


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    trials: int
    seed: int

    def within(self, value: float, sigmas: float = 4.0) -> bool:
        return abs(self.mean - value) <= sigmas * self.stderr


def _stream(seed: int, kind: int, block: int, *extra: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, kind, block, *extra])
    return np.random.Generator(np.random.Philox(ss))


def _blocked(trials: int, seed: int, kind: int, run: Callable, extra: tuple = ()) -> tuple[int, int]:
    """Sum the integer moments returned by ``run(rng, count)`` over blocks."""
    s1 = s2 = 0
    for b in range(-(-trials // BLOCK)):
        count = min(BLOCK, trials - b * BLOCK)
        a1, a2 = run(_stream(seed, kind, b, *extra), count)
        s1 += int(a1)
        s2 += int(a2)
    return s1, s2


def _estimate(s1: int, s2: int, trials: int, seed: int) -> MCEstimate:
    mean = s1 / trials
    if trials > 1:
        var = max(s2 - s1 * s1 / trials, 0.0) / (trials - 1)
    else:
        var = 0.0
    return MCEstimate(mean, math.sqrt(var / trials), trials, seed)


def orthant_starts(k: int, d: int, exhaustive: bool = False) -> list[Point]:
    """Start set for the escape probability: cube corners, or the whole cube."""
    if exhaustive:
        return list(itertools.product(range(-k, k + 1), repeat=d))
    starts = list(itertools.product((-k, k), repeat=d))
    neg = (-k,) * d
    if neg not in starts:
        starts.append(neg)
    return starts


def escape_probability(x: Point, r: int, trials: int, seed: int) -> MCEstimate:
    """P_x(walk reaches the boundary of the radius-r cube before the orthant x >= 0)."""
    x = tuple(x)
    if in_orthant(x, (0,) * len(x)):
        return MCEstimate(0.0, 0.0, trials, seed)
    start = np.array(x, dtype=np.int64)
    key = tuple(c + 2**20 for c in x)

    def run(rng, count):
        h = K.orthant_escapes(start, r, count, rng)
        return h, h

    s1, s2 = _blocked(trials, seed, _ORTHANT, run, (r, *key))
    return _estimate(s1, s2, trials, seed)


def estimate_orthant_survival(k: int, r: int, d: int, trials: int, seed: int,
                              exhaustive: bool = False) -> MCEstimate:
    """Estimate p(k, r): the largest escape probability over starts with |x|_inf <= k."""
    if not (k >= 1 and r >= 3 * k):
        raise ValueError("need r >= 3k >= 3")
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    best = None
    for x in orthant_starts(k, d, exhaustive):
        est = escape_probability(x, r, trials, seed)
        if best is None or est.mean > best.mean:
            best = est
    return best


def cube_exit_time(x: Point, r: int, trials: int, seed: int) -> MCEstimate:
    """Empirical exit time of the L-infinity ball of radius r started at its centre x."""
    if r < 1:
        raise ValueError("r must be >= 1")
    d = len(x)

    def run(rng, count):
        return K.cube_exit_times(d, r, count, rng)

    s1, s2 = _blocked(trials, seed, _CUBE, run, (d, r))
    return _estimate(s1, s2, trials, seed)


def empirical_exit(A: Region, x: Point, trials: int, seed: int) -> MCEstimate:
    """Mean first time a walk from x stands outside A."""
    x = tuple(x)
    if x not in A:
        raise ValueError(f"start {x} is not in the region")
    mask, lo = A.mask(pad=1)
    strides = np.array([int(np.prod(mask.shape[i + 1:])) for i in range(A.d)], dtype=np.int64)
    deltas = np.concatenate([strides, -strides])
    start = int((np.array(x) - lo) @ strides)
    inside = mask.ravel().astype(np.bool_)

    def run(rng, count):
        return K.walk_exit_times(inside, deltas, start, count, rng)

    s1, s2 = _blocked(trials, seed, _EXIT, run)
    return _estimate(s1, s2, trials, seed)


def fit_exponent(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def lemma_factor(d: int) -> float:
    """Contraction factor 1 - 2^-d / 2d of the orthant escape recursion."""
    return 1.0 - 2.0 ** -d / (2 * d)
