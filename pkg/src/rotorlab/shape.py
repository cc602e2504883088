"""Shape functionals of a region compared against the lattice ball."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels as K
from .lattice import Region, ball_points, lattice_ball, unit_ball_volume

DEPTH_CAP = 12
MAX_CELLS = 1 << 16


@dataclass(frozen=True)
class ShapeReport:
    n: int
    psi: int
    psi_ball: int
    sym_diff: int
    lebesgue_error: float
    inradius: float
    outradius: float
    T_n: int | None = None

    def as_row(self) -> dict:
        return asdict(self)


SHAPE_CSV_COLUMNS = ["n", "psi", "psi_ball", "sym_diff", "lebesgue_error", "inradius", "outradius", "T_n"]


def quadratic_weight(A: Region | np.ndarray) -> int:
    """Sum of squared Euclidean norms, in exact integer arithmetic."""
    a = A.array() if isinstance(A, Region) else np.asarray(A, dtype=np.int64)
    return int((a.astype(np.int64) ** 2).sum())


def sym_diff_count(A: Region, n: int) -> int:
    B = lattice_ball(n, A.d)
    return len(A.sites ^ B.sites)


def lebesgue_error(A: Region, n: int, tol: float = 1e-6, depth_cap: int = DEPTH_CAP) -> float:
    """Lebesgue measure of n^{-1/d} A^box symmetric-difference the unit-volume ball.

    Computed in lattice units against the ball of volume n:
    ``(|A| + n - 2 * vol(A^box ∩ ball)) / n``.  ``tol`` bounds the
    unresolved straddling volume per unit cube.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r2 = (n / unit_ball_volume(A.d)) ** (2.0 / A.d)
    centers = A.array().astype(np.float64)
    inter = float(K.cube_ball_volumes(centers, r2, depth_cap, tol, MAX_CELLS).sum())
    return (len(A) + n - 2.0 * inter) / n


def radii(A: Region) -> tuple[float, float]:
    """(largest r with {|y| < r} inside A, largest |x| over A).

    The nearest excluded site always lies on the boundary of A, so the
    inradius is the smallest boundary norm.
    """
    o = (0,) * A.d
    if o not in A:
        raise ValueError("region must contain the origin")
    mask, lo = A.mask(pad=1)
    grown = mask.copy()
    for i in range(A.d):
        for s in (1, -1):
            grown |= np.roll(mask, s, axis=i)
    bd = np.argwhere(grown & ~mask) + lo
    inr = math.sqrt(int((bd ** 2).sum(axis=1).min()))
    outr = math.sqrt(int((A.array() ** 2).sum(axis=1).max()))
    return inr, outr


def min_psi(N: int, d: int) -> int:
    """Smallest possible quadratic weight of N lattice sites: the N smallest norms."""
    if N <= 0:
        return 0
    n = N
    while True:
        pts = ball_points(max(2 * n, 8), d)
        if len(pts) >= N:
            break
        n *= 2
    s = np.sort((pts ** 2).sum(axis=1))
    return int(s[:N].sum())


def shape_report(A: Region, n: int | None = None, T_n: int | None = None, tol: float = 1e-6) -> ShapeReport:
    n = len(A) if n is None else n
    inr, outr = radii(A)
    return ShapeReport(n, quadratic_weight(A), quadratic_weight(ball_points(n, A.d)),
                       sym_diff_count(A, n), lebesgue_error(A, n, tol), inr, outr, T_n)


def weight_bound(agg, D: float) -> float:
    """Right-hand side T_n + 8 sqrt(d) D sum|x| + 4 d D n of the weight inequality."""
    d = agg.d
    n = agg.particles_placed
    norms = np.sqrt((agg.sites.astype(np.float64) ** 2).sum(axis=1))
    return agg.total_steps + 8 * math.sqrt(d) * D * float(norms.sum()) + 4 * d * D * n


def verify_weight_inequality(agg, D: float | None = None) -> float:
    """Slack of the weight inequality; nonnegative whenever D bounds the discrepancy."""
    if D is None:
        D = agg.discrepancy()
    return weight_bound(agg, D) - quadratic_weight(agg.sites)


def weight_identity_defect(agg) -> int:
    """2d psi(A_n) - 2d T_n - sum_x sum_eps (2d c_eps(x) - m_x)(|x+eps|^2 - |x|^2).

    Every routing x -> y changes the quadratic weight by |y|^2 - |x|^2, and
    the discrete Laplacian of |x|^2 is 1, so this integer is zero for an
    honest run.
    """
    from .rotors import direction_counts
    d = agg.d
    x = agg.sites.astype(np.int64)
    counts = direction_counts(agg.policy, x, agg.odometer_counts)
    # |x + e_i|^2 - |x|^2 = 2 x_i + 1 ; |x - e_i|^2 - |x|^2 = -2 x_i + 1
    delta = np.concatenate([2 * x + 1, -2 * x + 1], axis=1)
    err = 2 * d * counts - agg.odometer_counts[:, None]
    return int(2 * d * quadratic_weight(x) - 2 * d * int(agg.total_steps) - int((err * delta).sum()))


@dataclass(frozen=True)
class MainPropRecord:
    n: int
    psi: int
    psi_ball: int
    excess: int
    normalized: float
    psi_min_same_size: int
    ball_minimizes: bool


def verify_mainprop(agg) -> MainPropRecord:
    """psi(A_n) - psi(B_n), normalised by n^{1+1/d}, plus the fixed-size minimum check."""
    n = agg.particles_placed
    d = agg.d
    psi = quadratic_weight(agg.sites)
    pb = quadratic_weight(ball_points(n, d))
    floor = min_psi(n, d)
    return MainPropRecord(n, psi, pb, psi - pb, (psi - pb) / n ** (1 + 1 / d), floor, psi >= floor)
