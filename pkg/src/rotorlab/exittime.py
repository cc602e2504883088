"""Expected exit times of simple random walk.

``solve_exit`` solves the discrete Dirichlet problem
``(1/2d) sum_{y~x} e(y) - e(x) = -1`` on A with ``e = 0`` off A by red-black
successive over-relaxation (``omega=1`` is plain Gauss-Seidel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels as K
from .lattice import Point, Region, lattice_ball, origin, unit_ball_volume
from .rotors import direction_counts
from .symmetry import BudgetExceeded, enumerate_connected, enumeration_budget, rle


class ExitSolveError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ExitField:
    """Solved exit times on a region.

    ``grid`` covers the bounding box of A padded by one cell; the point
    ``lo + idx`` lives at ``grid[idx]``.
    """

    A: Region
    grid: np.ndarray
    lo: np.ndarray
    residual: float
    iterations: int

    def __call__(self, x: Point) -> float:
        idx = np.asarray(x) - self.lo
        if (idx < 0).any() or (idx >= self.grid.shape).any():
            return 0.0
        return float(self.grid[tuple(idx)])

    def on(self, pts: np.ndarray) -> np.ndarray:
        """Values at an (m, d) array of points inside the padded box."""
        idx = np.asarray(pts, dtype=np.int64) - self.lo
        return self.grid[tuple(idx.T)]

    @property
    def values(self) -> dict[Point, float]:
        arr = self.A.array()
        return dict(zip(map(tuple, arr.tolist()), self.on(arr).tolist()))


def default_omega(shape: tuple[int, ...]) -> float:
    """Over-relaxation factor that is optimal for a box of this size."""
    L = max(shape)
    return 2.0 / (1.0 + math.sin(math.pi / L))


def solve_exit(A: Region, tol: float = 1e-10, omega: float | None = None,
               max_sweeps: int = 1_000_000) -> ExitField:
    if len(A) == 0:
        raise ValueError("region must be nonempty")
    if tol <= 0:
        raise ValueError("tol must be positive")
    mask, lo = A.mask(pad=1)
    d = A.d
    flat = mask.ravel()
    strides = np.array([int(np.prod(mask.shape[i + 1:])) for i in range(d)], dtype=np.int64)
    deltas = np.concatenate([strides, -strides])
    interior = np.flatnonzero(flat).astype(np.int64)
    parity = (A.array() - lo).sum(axis=1) % 2  # sorted order matches flatnonzero
    red, black = interior[parity == 0], interior[parity == 1]
    order = np.concatenate([red, black])
    e = np.zeros(flat.shape, dtype=np.float64)
    w = default_omega(mask.shape) if omega is None else float(omega)
    target = max(tol, roundoff_floor(mask.shape))
    res, sweeps = K.red_black_sor(e, order, len(red), deltas, w, target, max_sweeps, 10)
    if not res <= target:
        raise ExitSolveError(f"no convergence in {sweeps} sweeps", res)
    return ExitField(A, e.reshape(mask.shape), lo, float(res), int(sweeps))


def roundoff_floor(shape: tuple[int, ...]) -> float:
    """Smallest residual float64 can resolve on this box.

    Exit times are at most ((w - 1) / 2)^2 for the narrowest padded side w,
    and the residual of a value of size E carries rounding noise ~ E eps.
    """
    w = min(shape)
    return 64 * np.finfo(np.float64).eps * max(1.0, ((w - 1) / 2) ** 2)


def max_exit(field: ExitField) -> float:
    return float(field.grid.max())


def ball_exit_asymptotic(n: float, d: int) -> float:
    """Leading term (n / omega_d)^(2/d) of the central exit time of B_n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n / unit_ball_volume(d)) ** (2.0 / d)


def gradient_sum(field: ExitField) -> float:
    """Sum of |e_x - e_y| over adjacent pairs in A and its boundary."""
    g = field.grid
    return float(sum(np.abs(np.diff(g, axis=i)).sum() for i in range(g.ndim)))


def gamma_d(d: int) -> float:
    """Error exponent of the isoperimetric bound, used only to label reports."""
    if d == 1:
        return 1.0
    if d == 2:
        return 1.0 / 3.0
    return 2.0 ** -d / (2 * d * d * math.log(3))


@dataclass
class IsoReport:
    n: int
    d: int
    max_e: float
    argmax: Region
    e_ball: float
    phi_hat: float
    shapes: int
    note: str = ("connected regions only: e_x depends only on the component of x, "
                 "so the supremum is attained on a connected region")

    def csv_row(self) -> list:
        return [self.n, self.d, repr(self.max_e), repr(self.phi_hat), rle(self.argmax)]


ISO_CSV_HEADER = ["n", "d", "max_e", "phi_hat", "argmax_shape_rle"]


def brute_force_phi(n: int, d: int, tol: float = 1e-11) -> IsoReport:
    """Largest max-exit-time over all connected regions of size ``n``,
    compared with the central exit time of the lattice ball B_n."""
    if n > enumeration_budget(d):
        raise BudgetExceeded(f"brute force limited to n <= {enumeration_budget(d)} in d={d}")
    best, arg, count = -1.0, None, 0
    for A in enumerate_connected(n, d):
        v = max_exit(solve_exit(A, tol))
        count += 1
        if v > best + 1e-9:
            best, arg = v, A
    e_ball = solve_exit(lattice_ball(n, d), tol)(origin(d))
    return IsoReport(n, d, best, arg, e_ball, best - e_ball, count)


def phi_partial_sums(reports: Iterable[IsoReport]) -> list[tuple[int, float]]:
    """Running sums of phi_hat, over the brute-forced sizes only."""
    total = 0.0
    out = []
    for r in sorted(reports, key=lambda r: r.n):
        total += r.phi_hat
        out.append((r.n, total))
    return out


def exit_identity_terms(agg, field: ExitField) -> tuple[int, float]:
    """``(T_n, n e_o(A_n) - sum_{x in A_n} e_x(A_n))``."""
    n = agg.particles_placed
    e = field.on(agg.sites)
    return int(agg.total_steps), n * field(origin(agg.d)) - float(e.sum())


def routing_error(agg, field: ExitField) -> float:
    """Exact discrepancy term of the exit-weight bookkeeping.

    Each routing from x to y changes the exit weight by e_y - e_x; summing
    the imbalance of the per-direction counts against m_x/2d gives the gap
    between T_n and the exit identity exactly.
    """
    d = agg.d
    counts = direction_counts(agg.policy, agg.sites, agg.odometer_counts)
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    ex = field.on(agg.sites)
    grad = np.stack([field.on(agg.sites + s) - ex for s in steps], axis=1)
    err = counts - agg.odometer_counts[:, None] / (2 * d)
    return float((err * grad).sum())


def verify_exit_identity(agg, field: ExitField, D: float | None = None) -> float:
    """|T_n - (n e_o - sum e_x)| / (D n^{1+1/d}); bounded in n for bounded D."""
    T, ident = exit_identity_terms(agg, field)
    num = abs(T - ident)
    if num == 0:
        return 0.0
    if D is None:
        D = agg.discrepancy()
    n = agg.particles_placed
    return num / (D * n ** (1 + 1 / agg.d))
