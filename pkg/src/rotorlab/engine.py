"""Growth processes: rotor-router aggregation, internal DLA and
multi-particle relaxation with pluggable schedulers.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels as K
from .lattice import Point, Region, check_dim, origin, step, unit_ball_volume
from .rotors import (InsufficientStack, RotorPolicy, RotorState, next_direction,
                     policy_from_descriptor, realized_discrepancy)

SNAPSHOT_MAGIC = b"RRL1"


class EngineError(RuntimeError):
    pass


class SnapshotError(EngineError):
    pass


def _philox(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


class _Grid:
    """Dense cube [-R, R]^d holding occupancy, visit counters and rotor tables."""

    def __init__(self, d: int, R: int, policy: RotorPolicy | None):
        self.d = d
        self.R = R
        self.side = 2 * R + 1
        self.strides = np.array([self.side ** (d - 1 - i) for i in range(d)], dtype=np.int64)
        self.deltas = np.concatenate([self.strides, -self.strides])
        size = self.side ** d
        self.occ = np.zeros(size, dtype=np.int32)
        self.visits = np.zeros(size, dtype=np.int64)
        self.origin = int(R * self.strides.sum())
        self.policy = policy
        if policy is not None:
            t = policy.tables(self.all_coords())
            self.plen, self.prefix, self.cycle = t.plen, t.prefix, t.cycle

    def all_coords(self) -> np.ndarray:
        ax = np.arange(-self.R, self.R + 1, dtype=np.int64)
        grids = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def coords(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        out = np.empty((len(flat), self.d), dtype=np.int64)
        r = flat.copy()
        for i, s in enumerate(self.strides):
            out[:, i] = r // s
            r -= out[:, i] * s
        return out - self.R

    def index(self, coords: np.ndarray) -> np.ndarray:
        c = np.asarray(coords, dtype=np.int64) + self.R
        if c.size and (c.min() < 0 or c.max() >= self.side):
            raise EngineError("coordinates outside grid")
        return c @ self.strides

    @staticmethod
    def radius_for(n: int, d: int, extent: int = 0) -> int:
        r = (max(n, 1) / unit_ball_volume(d)) ** (1.0 / d)
        return max(int(1.25 * r) + 6, extent + 6)


@dataclass
class AggState:
    """Aggregate after ``particles_placed`` particles.

    ``sites`` lists occupied sites in adjunction order; ``odometer_counts[i]``
    is the number of routings (rotor reads) emitted from ``sites[i]``.
    """

    d: int
    policy: RotorPolicy | None
    sites: np.ndarray
    odometer_counts: np.ndarray
    total_steps: int
    checksum: int = 0
    _grid: _Grid | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.checksum:
            self.checksum = self.compute_checksum()

    @property
    def particles_placed(self) -> int:
        return len(self.sites)

    @property
    def A(self) -> Region:
        return Region.from_array(self.sites)

    @property
    def odometer(self) -> dict[Point, int]:
        return {tuple(x): int(c) for x, c in zip(self.sites.tolist(), self.odometer_counts) if c}

    @property
    def rotor(self) -> RotorState:
        return RotorState(self.odometer)

    def prefix(self, k: int) -> Region:
        return Region.from_array(self.sites[:k])

    def discrepancy(self) -> float:
        """Audited discrepancy over the realized visit counts."""
        return realized_discrepancy(self.policy, self.sites, self.odometer_counts)

    def policy_json(self) -> str:
        return "" if self.policy is None else self.policy.to_json()

    def compute_checksum(self) -> int:
        h = zlib.crc32(np.ascontiguousarray(self.sites, dtype="<i8").tobytes())
        h = zlib.crc32(np.ascontiguousarray(self.odometer_counts, dtype="<i8").tobytes(), h)
        h = zlib.crc32(struct.pack("<qI", int(self.total_steps), self.d), h)
        return zlib.crc32(self.policy_json().encode(), h) or 1

    def validate(self) -> None:
        if self.compute_checksum() != self.checksum:
            raise SnapshotError("aggregate state checksum mismatch")
        if len(self.odometer_counts) != len(self.sites):
            raise SnapshotError("odometer length differs from particle count")
        if int(self.odometer_counts.sum()) != self.total_steps:
            raise SnapshotError("odometer total differs from T_n")
        if len(self.sites) and tuple(self.sites[0]) != origin(self.d):
            raise SnapshotError("first particle is not at the origin")
        if len({tuple(x) for x in self.sites.tolist()}) != len(self.sites):
            raise SnapshotError("duplicate occupied sites")

    def _take_grid(self, n_target: int) -> _Grid:
        g, self._grid = self._grid, None
        if g is not None and g.policy is self.policy:
            return g
        extent = int(np.abs(self.sites).max()) if len(self.sites) else 0
        g = _Grid(self.d, _Grid.radius_for(n_target, self.d, extent), self.policy)
        idx = g.index(self.sites)
        g.occ[idx] = np.arange(1, len(idx) + 1, dtype=np.int32)
        g.visits[idx] = self.odometer_counts
        return g


def _regrow(g: _Grid, n_target: int, policy: RotorPolicy | None, order: np.ndarray, n_done: int) -> tuple[_Grid, np.ndarray]:
    sites = g.coords(order[:n_done])
    extent = int(np.abs(sites).max())
    new = _Grid(g.d, max(_Grid.radius_for(n_target, g.d, extent), 2 * g.R), policy)
    idx = new.index(sites)
    new.occ[idx] = np.arange(1, n_done + 1, dtype=np.int32)
    new.visits[idx] = g.visits[order[:n_done]]
    new_order = np.zeros(n_target, dtype=np.int64)
    new_order[:n_done] = idx
    return new, new_order


def aggregate(n: int, policy: RotorPolicy, resume: AggState | None = None, *,
              max_walk: int | None = None, fault: str | None = None,
              kernel: str = "auto") -> AggState:
    """Rotor-router aggregation of ``n`` particles released from the origin.

    With ``resume`` the run continues from a previous state with the same
    policy.  ``fault="skip-increment"`` disables rotor advancement; it exists
    only for mutation testing of the verification suite.  ``kernel="generic"``
    skips the packed fast path (used to cross-check the two).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if fault not in (None, "skip-increment"):
        raise ValueError(f"unknown fault {fault!r}")
    if kernel not in ("auto", "generic"):
        raise ValueError(f"unknown kernel {kernel!r}")
    d = policy.d
    if resume is not None:
        resume.validate()
        if resume.d != d:
            raise SnapshotError("resume state has a different dimension")
        if resume.policy is not policy and resume.policy_json() != policy.to_json():
            raise SnapshotError("resume state was produced by a different policy")
        if n < resume.particles_placed:
            raise ValueError("cannot rewind an aggregate; n is below the resumed count")
        start = resume
    else:
        start = AggState(d, policy, np.zeros((0, d), np.int64), np.zeros(0, np.int64), 0)
    g = start._take_grid(n)
    g.policy = policy
    order = np.zeros(n, dtype=np.int64)
    n_done = start.particles_placed
    if n_done:
        order[:n_done] = g.index(start.sites)
    else:
        g.occ[g.origin] = 1
        order[0] = g.origin
        n_done = 1
    total = int(start.total_steps)
    walk_cap = max_walk if max_walk is not None else max(10**7, 64 * d * n * n)
    while n_done < n:
        if g.prefix.shape[1] == 0 and g.cycle.min(initial=0) >= 0 and fault is None and kernel == "auto":
            before = n_done
            rows, row_id = np.unique(g.cycle, axis=0, return_inverse=True)
            row_id = row_id.reshape(-1).astype(np.int64)
            cell = np.where(g.occ > 0, (row_id << K.ROW_SHIFT) | g.visits, -(row_id + 1))
            n_done, added, status = K.rotor_aggregate_packed(
                cell, np.ascontiguousarray(rows), g.deltas, g.strides, g.side,
                g.origin, n_done, n, order, walk_cap)
            occupied = cell >= 0
            g.visits = np.where(occupied, cell & K.COUNT_MASK, 0)
            g.occ[order[before:n_done]] = np.arange(before + 1, n_done + 1, dtype=np.int32)
        else:
            n_done, added, status = K.rotor_aggregate(
                g.occ, g.visits, g.plen, g.prefix, g.cycle, g.deltas, g.strides, g.side,
                g.origin, n_done, n, order, walk_cap, fault == "skip-increment")
        total += int(added)
        if status == K.NEED_GROW:
            g, order = _regrow(g, n, policy, order, n_done)
        elif status == K.STACK_EXHAUSTED:
            raise InsufficientStack(f"particle {n_done + 1} read past the end of a rotor stack")
        elif status == K.WATCHDOG:
            raise EngineError(f"particle {n_done + 1} exceeded {walk_cap} steps")
    sites = g.coords(order[:n])
    counts = g.visits[order[:n]].copy()
    out = AggState(d, policy, sites, counts, total)
    out._grid = g
    return out


def idla(n: int, seed: int, d: int = 2) -> tuple[Region, int]:
    """Internal DLA: ``n`` particles, each doing simple random walk from the
    origin until it first leaves the current aggregate."""
    sites, steps = idla_sites(n, seed, d)
    return Region.from_array(sites), steps


def idla_sites(n: int, seed: int, d: int = 2) -> tuple[np.ndarray, int]:
    """Like :func:`idla` but returns the sites in adjunction order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    check_dim(d)
    rng = _philox(seed)
    g = _Grid(d, _Grid.radius_for(n, d), None)
    order = np.zeros(n, dtype=np.int64)
    g.occ[g.origin] = 1
    order[0] = g.origin
    n_done, total = 1, 0
    while n_done < n:
        n_done, added, status = K.idla_aggregate(
            g.occ, g.deltas, g.strides, g.side, g.origin, n_done, n, order, rng)
        total += int(added)
        if status == K.NEED_GROW:
            g, order = _regrow(g, n, None, order, n_done)
    return g.coords(order), total


def rotor_walk(A: Region | Iterable[Point], start: Point, rotor: RotorState,
               policy: RotorPolicy, max_steps: int = 10**8) -> tuple[Point, int]:
    """Route a particle from ``start`` until it first stands outside ``A``."""
    x = tuple(start)
    steps = 0
    while x in A:
        x = step(x, next_direction(rotor, policy, x))
        steps += 1
        if steps > max_steps:
            raise EngineError("rotor walk did not terminate")
    return x, steps


# -- Diaconis-Fulton relaxation -------------------------------------------------

@dataclass(frozen=True)
class FixedOrder:
    """Fire the first crowded site in ``sites``; otherwise the smallest crowded site."""
    sites: tuple[Point, ...] = ()


@dataclass(frozen=True)
class RandomSite:
    seed: int


@dataclass(frozen=True)
class HighestLabel:
    """Move the highest-labelled particle that shares its site."""


Schedule = Union[FixedOrder, RandomSite, HighestLabel]


@dataclass
class RotorMover:
    policy: RotorPolicy
    state: RotorState = field(default_factory=RotorState)


@dataclass(frozen=True)
class RandomMover:
    seed: int


def df_relax(initial: Sequence[Point], schedule: Schedule,
             mover: RotorMover | RandomMover, max_steps: int = 10**8) -> tuple[Region, int]:
    """Move particles one step at a time from crowded sites until every site
    holds at most one particle.  Returns the occupied set and the step count."""
    pos = [tuple(p) for p in initial]
    if not pos:
        raise ValueError("need at least one particle")
    d = len(pos[0])
    at: dict[Point, list[int]] = {}
    for label, x in enumerate(pos):
        at.setdefault(x, []).append(label)
    crowded = {x for x, ls in at.items() if len(ls) > 1}
    sched_rng = _philox(schedule.seed, 1) if isinstance(schedule, RandomSite) else None
    move_rng = _philox(mover.seed, 2) if isinstance(mover, RandomMover) else None
    steps = 0
    while crowded:
        if isinstance(schedule, HighestLabel):
            label = max(max(at[x]) for x in crowded)
            x = pos[label]
        else:
            if isinstance(schedule, FixedOrder):
                x = next((s for s in schedule.sites if s in crowded), None) or min(crowded)
            else:
                cands = sorted(crowded)
                x = cands[int(sched_rng.integers(len(cands)))]
            label = at[x][-1]
        if isinstance(mover, RotorMover):
            k = next_direction(mover.state, mover.policy, x)
        else:
            k = int(move_rng.integers(2 * d))
        y = step(x, k)
        at[x].remove(label)
        if len(at[x]) < 2:
            crowded.discard(x)
        at.setdefault(y, []).append(label)
        if len(at[y]) > 1:
            crowded.add(y)
        pos[label] = y
        steps += 1
        if steps > max_steps:
            raise EngineError("relaxation exceeded the step cap")
    return Region((x for x, ls in at.items() if ls), d), steps


# -- snapshots ----------------------------------------------------------------

def dump_snapshot(state: AggState) -> bytes:
    """Little-endian snapshot: header, sites (i32), (site, visits) pairs, CRC32."""
    buf = io.BytesIO()
    pol = state.policy_json().encode()
    buf.write(SNAPSHOT_MAGIC)
    buf.write(struct.pack("<IQQI", state.d, state.particles_placed, state.total_steps, len(pol)))
    buf.write(pol)
    buf.write(np.ascontiguousarray(state.sites, dtype="<i4").tobytes())
    nz = np.nonzero(state.odometer_counts)[0]
    buf.write(struct.pack("<Q", len(nz)))
    rec = np.zeros(len(nz), dtype=[("x", "<i4", (state.d,)), ("m", "<u8")])
    rec["x"] = state.sites[nz]
    rec["m"] = state.odometer_counts[nz]
    buf.write(rec.tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def load_snapshot(data: bytes) -> AggState:
    if len(data) < 4 + 24 + 4 or data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError("not a rotor snapshot")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise SnapshotError("snapshot CRC mismatch")
    d, n, T, plen = struct.unpack_from("<IQQI", body, 4)
    off = 4 + 24
    desc = body[off:off + plen].decode()
    off += plen
    policy = policy_from_descriptor(desc) if desc else None
    sites = np.frombuffer(body, dtype="<i4", count=n * d, offset=off).reshape(n, d).astype(np.int64)
    off += 4 * n * d
    (k,) = struct.unpack_from("<Q", body, off)
    off += 8
    rec = np.frombuffer(body, dtype=[("x", "<i4", (d,)), ("m", "<u8")], count=k, offset=off)
    index = {x: i for i, x in enumerate(map(tuple, sites.tolist()))}
    counts = np.zeros(n, dtype=np.int64)
    for x, m in zip(rec["x"].tolist(), rec["m"].tolist()):
        i = index.get(tuple(x))
        if i is None:
            raise SnapshotError(f"visit record for unoccupied site {x}")
        counts[i] = m
    state = AggState(d, policy, sites, counts, int(T))
    state.validate()
    return state


def save_snapshot(state: AggState, path: str | Path) -> None:
    """Write via a temporary file so an interrupted save leaves the old snapshot intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dump_snapshot(state))
    os.replace(tmp, path)


def read_snapshot(path: str | Path) -> AggState:
    return load_snapshot(Path(path).read_bytes())
