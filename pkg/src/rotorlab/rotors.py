"""Rotor stacks.

A policy assigns to every site ``x`` an infinite stack ``r_1, r_2, ...`` of
direction indices.  Rotor state is a single visit counter ``m_x`` per site;
the ``m``-th read at ``x`` returns ``r_m`` (increment, then read), so any
policy is a pure function of ``(x, m)``.

For the compiled kernels every policy is lowered to a per-site table: a
finite prefix of length ``plen[x]`` followed by a cycle of length ``P``
repeated forever.  A cycle row of ``-1`` marks a stack that ends after its
prefix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .lattice import Point, check_dim

OffsetFn = Callable[[np.ndarray], np.ndarray]
RuleFn = Callable[[np.ndarray, int], np.ndarray]


class InsufficientStack(ValueError):
    """An explicit rotor stack was read past its end."""


class PolicyError(ValueError):
    pass


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z + np.uint64(0x9E3779B97F4A7C15)).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _hash_offsets(seed: int, d: int) -> OffsetFn:
    def fn(coords: np.ndarray) -> np.ndarray:
        h = np.full(len(coords), np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
        with np.errstate(over="ignore"):
            for i in range(coords.shape[1]):
                h = _splitmix(h ^ coords[:, i].astype(np.int64).view(np.uint64))
        return (h % np.uint64(2 * d)).astype(np.int64)

    return fn


def offset_rule(spec: int | str, d: int) -> OffsetFn:
    """Vectorised initial-offset function from an int or a rule name.

    Names: ``zero``, ``parity`` (coordinate sum mod 2d), ``random:<seed>``.
    """
    if isinstance(spec, (int, np.integer)):
        k = int(spec) % (2 * d)
        return lambda coords: np.full(len(coords), k, dtype=np.int64)
    if spec == "zero":
        return lambda coords: np.zeros(len(coords), dtype=np.int64)
    if spec == "parity":
        return lambda coords: np.asarray(coords, dtype=np.int64).sum(axis=1) % (2 * d)
    if isinstance(spec, str) and spec.startswith("random:"):
        return _hash_offsets(int(spec.split(":", 1)[1]), d)
    raise PolicyError(f"unknown offset rule {spec!r}")


@dataclass(frozen=True)
class RotorTables:
    plen: np.ndarray  # (N,) int32
    prefix: np.ndarray  # (N, K) int8
    cycle: np.ndarray  # (N, P) int8, -1 for an exhausted stack

    @property
    def period(self) -> int:
        return self.cycle.shape[1]


class RotorPolicy:
    """Base class.  Subclasses implement ``direction`` and ``tables``."""

    d: int
    kind: str

    def direction(self, x: Point, m: int) -> int:
        raise NotImplementedError

    def tables(self, coords: np.ndarray) -> RotorTables:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def sequence(self, x: Point, m_max: int) -> np.ndarray:
        """r_1 .. r_{m_max} at ``x`` via the compiled tables."""
        t = self.tables(np.array([x], dtype=np.int64))
        k = int(t.plen[0])
        pre = t.prefix[0, :k]
        if m_max <= k:
            return pre[:m_max].astype(np.int64)
        cyc = t.cycle[0]
        if cyc[0] < 0:
            raise InsufficientStack(f"stack at {x} has {k} rotors, {m_max} requested")
        reps = -(-(m_max - k) // len(cyc))
        return np.concatenate([pre, np.tile(cyc, reps)[: m_max - k]]).astype(np.int64)

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True, separators=(",", ":"))


class CyclicPolicy(RotorPolicy):
    """Rotors cycling through a fixed permutation of the 2d directions.

    The rotor at ``x`` initially points at ``order[offset(x)]``; the m-th
    read returns ``order[(offset(x) + m) % 2d]``.
    """

    kind = "cyclic"

    def __init__(self, d: int, order: Sequence[int] | None = None,
                 offset: int | str | OffsetFn = 0, name: str | None = None):
        self.d = check_dim(d)
        order = list(range(2 * d)) if order is None else [int(k) for k in order]
        if sorted(order) != list(range(2 * d)):
            raise PolicyError(f"order must be a permutation of 0..{2 * d - 1}")
        self.order = tuple(order)
        self.offset_spec = offset
        self._offset = offset if callable(offset) else offset_rule(offset, d)
        self.name = name

    def offsets(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(self._offset(np.asarray(coords, dtype=np.int64)), dtype=np.int64) % (2 * self.d)

    def direction(self, x: Point, m: int) -> int:
        off = int(self.offsets(np.array([x]))[0])
        return self.order[(off + m) % (2 * self.d)]

    def tables(self, coords: np.ndarray) -> RotorTables:
        N = len(coords)
        P = 2 * self.d
        off = self.offsets(coords)
        idx = (off[:, None] + 1 + np.arange(P)[None, :]) % P
        cycle = np.asarray(self.order, dtype=np.int8)[idx]
        return RotorTables(np.zeros(N, np.int32), np.zeros((N, 0), np.int8), cycle)

    def descriptor(self) -> dict:
        if callable(self.offset_spec):
            raise PolicyError("policy with a callable offset is not serialisable")
        return {"kind": "cyclic", "d": self.d, "order": list(self.order),
                "offset": self.offset_spec, "name": self.name}

    def __repr__(self) -> str:
        return f"CyclicPolicy(d={self.d}, order={self.order}, offset={self.offset_spec!r})"


class ExplicitPolicy(RotorPolicy):
    """Finite per-site stacks, optionally continued by a cyclic tail.

    ``stacks`` maps sites to their own prefix; other sites use ``default``.
    Without a ``then`` tail, reading past the prefix raises
    :class:`InsufficientStack`.
    """

    kind = "explicit"

    def __init__(self, d: int, stacks: Mapping[Point, Sequence[int]] | None = None,
                 default: Sequence[int] = (), then: CyclicPolicy | None = None):
        self.d = check_dim(d)
        self.stacks = {tuple(k): tuple(int(v) for v in s) for k, s in (stacks or {}).items()}
        self.default = tuple(int(v) for v in default)
        for s in [self.default, *self.stacks.values()]:
            if any(not 0 <= v < 2 * d for v in s):
                raise PolicyError("stack entries must be direction indices")
        if then is not None and then.d != d:
            raise PolicyError("tail policy dimension mismatch")
        self.then = then

    def _prefix(self, x: Point) -> tuple[int, ...]:
        return self.stacks.get(tuple(x), self.default)

    def direction(self, x: Point, m: int) -> int:
        pre = self._prefix(x)
        if m <= len(pre):
            return pre[m - 1]
        if self.then is None:
            raise InsufficientStack(f"stack at {x} has {len(pre)} rotors, read {m} requested")
        return self.then.direction(x, m - len(pre))

    def tables(self, coords: np.ndarray) -> RotorTables:
        N = len(coords)
        K = max([len(self.default), *map(len, self.stacks.values())])
        plen = np.full(N, len(self.default), np.int32)
        prefix = np.zeros((N, K), np.int8)
        prefix[:, : len(self.default)] = self.default
        if self.stacks:
            for i, x in enumerate(map(tuple, np.asarray(coords).tolist())):
                s = self.stacks.get(x)
                if s is not None:
                    plen[i] = len(s)
                    prefix[i, :] = 0
                    prefix[i, : len(s)] = s
        if self.then is None:
            cycle = np.full((N, 1), -1, np.int8)
        else:
            cycle = self.then.tables(coords).cycle
        return RotorTables(plen, prefix, cycle)

    def descriptor(self) -> dict:
        return {"kind": "explicit", "d": self.d,
                "stacks": [[list(k), list(v)] for k, v in sorted(self.stacks.items())],
                "default": list(self.default),
                "then": None if self.then is None else self.then.descriptor()}


SCRIPTED_RULES: dict[str, tuple[RuleFn, Callable[[int], int]]] = {}


def scripted_rule(name: str, period: Callable[[int], int]):
    """Register a vectorised rule ``f(coords, m) -> directions`` of given period."""
    def deco(fn: RuleFn) -> RuleFn:
        SCRIPTED_RULES[name] = (fn, period)
        return fn
    return deco


@scripted_rule("reversed-parity", period=lambda d: 2 * d)
def _reversed_parity(coords: np.ndarray, m: int) -> np.ndarray:
    P = 2 * coords.shape[1]
    odd = coords.sum(axis=1) % 2 == 1
    return np.where(odd, (P - m) % P, (m - 1) % P)


@scripted_rule("doubled", period=lambda d: 4 * d)
def _doubled(coords: np.ndarray, m: int) -> np.ndarray:
    return np.full(len(coords), (m - 1) // 2, dtype=np.int64)


class ScriptedPolicy(RotorPolicy):
    """A global rule r_m(x) periodic in ``m`` with the registered period."""

    kind = "scripted"

    def __init__(self, d: int, rule: str):
        self.d = check_dim(d)
        if rule not in SCRIPTED_RULES:
            raise PolicyError(f"unknown scripted rule {rule!r}; have {sorted(SCRIPTED_RULES)}")
        self.rule = rule
        self._fn, period = SCRIPTED_RULES[rule]
        self.period = int(period(d))

    def direction(self, x: Point, m: int) -> int:
        return int(self._fn(np.array([x], dtype=np.int64), (m - 1) % self.period + 1)[0])

    def tables(self, coords: np.ndarray) -> RotorTables:
        coords = np.asarray(coords, dtype=np.int64)
        N = len(coords)
        cycle = np.empty((N, self.period), np.int8)
        for j in range(self.period):
            cycle[:, j] = self._fn(coords, j + 1)
        if cycle.size and (cycle.min() < 0 or cycle.max() >= 2 * self.d):
            raise PolicyError(f"rule {self.rule!r} produced an invalid direction")
        return RotorTables(np.zeros(N, np.int32), np.zeros((N, 0), np.int8), cycle)

    def descriptor(self) -> dict:
        return {"kind": "scripted", "d": self.d, "rule": self.rule}


def default_cyclic(d: int, offset: int | str = 0) -> CyclicPolicy:
    """Order +e_1, ..., +e_d, -e_1, ..., -e_d.  In d=1 this alternates right/left."""
    return CyclicPolicy(d, None, offset, name="cyclic")


def nesw() -> CyclicPolicy:
    """Planar rotors starting North and turning clockwise N -> E -> S -> W."""
    # direction indices: E=0 (+x), N=1 (+y), W=2, S=3
    return CyclicPolicy(2, (1, 0, 3, 2), 0, name="nesw")


CYCLIC_PRESETS: dict[str, Callable[[int], CyclicPolicy]] = {
    "cyclic": default_cyclic,
    "nesw": lambda d: nesw() if d == 2 else _bad_preset("nesw", d),
}


def _bad_preset(name: str, d: int):
    raise PolicyError(f"preset {name!r} only exists in d=2, not d={d}")


def policy_from_descriptor(desc: Mapping | str) -> RotorPolicy:
    if isinstance(desc, str):
        desc = json.loads(desc)
    kind = desc.get("kind")
    d = int(desc["d"])
    if kind == "cyclic":
        return CyclicPolicy(d, desc["order"], desc.get("offset", 0), desc.get("name"))
    if kind == "explicit":
        then = desc.get("then")
        return ExplicitPolicy(
            d, {tuple(k): v for k, v in desc.get("stacks", [])}, desc.get("default", ()),
            None if then is None else policy_from_descriptor(then))
    if kind == "scripted":
        return ScriptedPolicy(d, desc["rule"])
    raise PolicyError(f"unknown policy kind {kind!r}")


def make_policy(kind: str, d: int, order: Sequence[int] | str | None = None,
                offset: int | str = 0, rule: str | None = None,
                north_prefix: int = 0) -> RotorPolicy:
    """Build a policy from run-config style parameters.

    ``kind`` is ``cyclic``, ``nesw``, ``explicit`` or ``scripted``.  For
    ``explicit`` every site gets ``north_prefix`` reads of +e_d (North in the
    plane) before continuing with the cyclic order.
    """
    if isinstance(order, str):
        order = [int(v) for v in order.split(",")] if order else None
    if kind == "nesw":
        if d != 2:
            _bad_preset("nesw", d)
        base = nesw()
        if offset not in (0, "zero"):
            base = CyclicPolicy(2, base.order, offset, name="nesw")
        return base
    if kind == "cyclic":
        return CyclicPolicy(d, order, offset, name="cyclic")
    if kind == "explicit":
        tail = CyclicPolicy(d, order, offset, name="cyclic")
        return ExplicitPolicy(d, default=[d - 1] * north_prefix, then=tail)
    if kind == "scripted":
        if rule is None:
            raise PolicyError("scripted policy needs a rule name")
        return ScriptedPolicy(d, rule)
    raise PolicyError(f"unknown policy {kind!r}")


@dataclass
class RotorState:
    """Visit counters m_x; one writer at a time."""

    visits: dict[Point, int] = field(default_factory=dict)

    def m(self, x: Point) -> int:
        return self.visits.get(x, 0)

    def copy(self) -> "RotorState":
        return RotorState(dict(self.visits))


def next_direction(state: RotorState, policy: RotorPolicy, x: Point) -> int:
    m = state.visits.get(x, 0) + 1
    state.visits[x] = m
    return policy.direction(x, m)


def _prefix_deviation(seq: np.ndarray, d: int) -> int:
    """max over m, eps of |2d * #{i<=m: r_i=eps} - m|  (scaled by 2d)."""
    if len(seq) == 0:
        return 0
    onehot = np.zeros((len(seq), 2 * d), dtype=np.int64)
    onehot[np.arange(len(seq)), seq] = 1
    counts = np.cumsum(onehot, axis=0)
    m = np.arange(1, len(seq) + 1)[:, None]
    return int(np.abs(2 * d * counts - m).max())


def discrepancy_audit(policy: RotorPolicy, x: Point, m_max: int) -> float:
    """max_{eps, m <= m_max} |#{i <= m : r_i = eps} - m/2d| by direct enumeration."""
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    seq = np.array([policy.direction(x, m) for m in range(1, m_max + 1)], dtype=np.int64)
    return _prefix_deviation(seq, policy.d) / (2 * policy.d)


def realized_discrepancy(policy: RotorPolicy, coords: np.ndarray, visits: np.ndarray) -> float:
    """Largest audit value over sites, each audited up to its own visit count.

    Uses the prefix+cycle tables: along the cycle each scaled deviation is
    linear in the number of completed cycles, so only the first and last
    cycle need checking.
    """
    coords = np.asarray(coords, dtype=np.int64)
    visits = np.asarray(visits, dtype=np.int64)
    keep = visits > 0
    coords, visits = coords[keep], visits[keep]
    if len(visits) == 0:
        return 0.0
    d = policy.d
    P2 = 2 * d
    t = policy.tables(coords)
    N, K = t.prefix.shape
    P = t.period
    best = 0
    # prefix reads
    if K:
        oh = np.zeros((N, K, P2), np.int64)
        oh[np.arange(N)[:, None], np.arange(K)[None, :], t.prefix.astype(np.int64)] = 1
        valid = np.arange(1, K + 1)[None, :] <= np.minimum(t.plen, visits)[:, None]
        oh *= valid[:, :, None]
        cnt = np.cumsum(oh, axis=1)
        mm = np.arange(1, K + 1)[None, :, None]
        dev = np.abs(P2 * cnt - mm) * valid[:, :, None]
        best = max(best, int(dev.max()))
        pc = oh.sum(axis=1)
    else:
        pc = np.zeros((N, P2), np.int64)
    tail = visits - t.plen
    on = tail > 0
    if on.any():
        if (t.cycle[on] < 0).any():
            raise InsufficientStack("a visited site read past the end of its stack")
        cyc = t.cycle[on].astype(np.int64)
        n_on = len(cyc)
        oh = np.zeros((n_on, P, P2), np.int64)
        oh[np.arange(n_on)[:, None], np.arange(P)[None, :], cyc] = 1
        cc = np.cumsum(oh, axis=1)  # counts within first cycle, s = 1..P
        C = cc[:, -1, :]  # per-cycle totals
        Kx = t.plen[on].astype(np.int64)
        s = np.arange(1, P + 1)[None, :]
        qmax = (tail[on][:, None] - s) // P  # last complete-cycle index with read s
        valid = qmax >= 0
        for q in (np.zeros_like(qmax), np.maximum(qmax, 0)):
            m = Kx[:, None] + q * P + s
            val = P2 * (pc[on][:, None, :] + q[:, :, None] * C[:, None, :] + cc) - m[:, :, None]
            dev = np.abs(val) * valid[:, :, None]
            best = max(best, int(dev.max()))
    return best / P2


def direction_counts(policy: RotorPolicy, coords: np.ndarray, visits: np.ndarray) -> np.ndarray:
    """(N, 2d) counts of each direction among the first ``visits[x]`` reads at each site."""
    coords = np.asarray(coords, dtype=np.int64)
    visits = np.asarray(visits, dtype=np.int64)
    P2 = 2 * policy.d
    N = len(visits)
    out = np.zeros((N, P2), np.int64)
    if N == 0:
        return out
    t = policy.tables(coords)
    K = t.prefix.shape[1]
    rows = np.arange(N)
    if K:
        used = np.minimum(t.plen, visits)
        for j in range(K):
            on = used > j
            np.add.at(out, (rows[on], t.prefix[on, j].astype(np.int64)), 1)
    tail = visits - t.plen
    on = tail > 0
    if on.any():
        if (t.cycle[on] < 0).any():
            raise InsufficientStack("a visited site read past the end of its stack")
        P = t.period
        q, s = np.divmod(tail[on], P)
        cyc = t.cycle[on].astype(np.int64)
        idx = rows[on]
        for j in range(P):
            np.add.at(out, (idx, cyc[:, j]), q + (s > j))
    return out
