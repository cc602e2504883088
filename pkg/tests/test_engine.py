import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from oracles import cyclic_reader, ref_rotor_aggregate

from rotorlab.engine import (AggState, EngineError, FixedOrder, HighestLabel, RandomMover, RandomSite,
                             RotorMover, SnapshotError, aggregate, df_relax, dump_snapshot, idla,
                             idla_sites, load_snapshot, read_snapshot, rotor_walk, save_snapshot)
from rotorlab.lattice import Region, neighbors
from rotorlab.rotors import (CyclicPolicy, ExplicitPolicy, InsufficientStack, RotorState,
                             ScriptedPolicy, default_cyclic, make_policy, nesw)

O2 = (0, 0)


def test_three_particle_example():
    agg = aggregate(3, nesw())
    assert agg.A == Region([(0, 0), (1, 0), (0, -1)])
    assert [tuple(x) for x in agg.sites.tolist()] == [(0, 0), (1, 0), (0, -1)]
    assert agg.total_steps == 2


def test_rotor_walk_examples():
    rotor = RotorState()
    assert rotor_walk(Region([O2]), O2, rotor, nesw()) == ((1, 0), 1)
    assert rotor_walk(Region([O2, (1, 0)]), O2, rotor, nesw()) == ((0, -1), 1)
    assert rotor_walk(Region([O2]), (5, 5), RotorState(), nesw()) == ((5, 5), 0)


@pytest.mark.parametrize("policy", [nesw(), default_cyclic(3), ScriptedPolicy(2, "doubled")])
def test_single_particle(policy):
    agg = aggregate(1, policy)
    assert agg.A == Region([(0,) * policy.d]) and agg.total_steps == 0


def test_one_dimensional_interval():
    agg = aggregate(5, default_cyclic(1))
    xs = sorted(agg.sites.ravel().tolist())
    assert xs == list(range(xs[0], xs[0] + 5)) and 0 in xs
    assert abs(xs[0] + xs[-1]) <= 2


def _cases():
    return [
        ("nesw", nesw(), cyclic_reader((1, 0, 3, 2))),
        ("d1", default_cyclic(1), cyclic_reader((0, 1))),
        ("d3", default_cyclic(3), cyclic_reader(tuple(range(6)))),
        ("d4", default_cyclic(4), cyclic_reader(tuple(range(8)))),
        ("perm", CyclicPolicy(2, (2, 0, 3, 1), 3), cyclic_reader((2, 0, 3, 1), lambda x: 3)),
        ("parity", CyclicPolicy(2, None, "parity"), cyclic_reader((0, 1, 2, 3), lambda x: sum(x) % 4)),
    ]


@pytest.mark.parametrize("name,policy,read", _cases(), ids=[c[0] for c in _cases()])
@pytest.mark.parametrize("kernel", ["auto", "generic"])
def test_matches_reference_aggregation(name, policy, read, kernel):
    n = 150 if policy.d == 1 else 400
    sites, total, reads = ref_rotor_aggregate(n, policy.d, read)
    agg = aggregate(n, policy, kernel=kernel)
    assert [tuple(x) for x in agg.sites.tolist()] == sites
    assert agg.total_steps == total
    assert agg.odometer == reads


def test_explicit_and_scripted_match_reference():
    pol = make_policy("explicit", 2, north_prefix=3)
    read = lambda x, m: 1 if m <= 3 else (m - 3) % 4
    sites, total, reads = ref_rotor_aggregate(300, 2, read)
    agg = aggregate(300, pol)
    assert [tuple(x) for x in agg.sites.tolist()] == sites and agg.total_steps == total

    pol = ScriptedPolicy(2, "reversed-parity")
    sites, total, _ = ref_rotor_aggregate(300, 2, pol.direction)
    agg = aggregate(300, pol)
    assert [tuple(x) for x in agg.sites.tolist()] == sites and agg.total_steps == total


def test_prefix_property():
    full = aggregate(2000, nesw())
    for k in (1, 2, 3, 17, 500, 1999):
        part = aggregate(k, nesw())
        np.testing.assert_array_equal(full.sites[:k], part.sites)
        assert full.prefix(k) == part.A


def test_resume_in_many_pieces_matches_one_run():
    # small increments exercise the grid regrowth path repeatedly
    pol = default_cyclic(2, offset="random:9")
    whole = aggregate(5000, pol)
    st_ = None
    for n in [1, 2, 10, 11, 100, 400, 1500, 1501, 5000]:
        st_ = aggregate(n, pol, resume=st_)
    np.testing.assert_array_equal(st_.sites, whole.sites)
    np.testing.assert_array_equal(st_.odometer_counts, whole.odometer_counts)
    assert st_.total_steps == whole.total_steps


def test_every_new_site_touches_the_aggregate():
    agg = aggregate(3000, default_cyclic(2))
    seen = {tuple(agg.sites[0])}
    for x in map(tuple, agg.sites[1:].tolist()):
        assert x not in seen and any(y in seen for y in neighbors(x))
        seen.add(x)


def test_counters_consistent():
    agg = aggregate(3000, default_cyclic(3))
    assert int(agg.odometer_counts.sum()) == agg.total_steps
    assert agg.odometer_counts.dtype == np.int64
    agg.validate()


def test_insufficient_stack():
    with pytest.raises(InsufficientStack):
        aggregate(10, ExplicitPolicy(2, default=[1, 0]))


def test_walk_watchdog():
    with pytest.raises(EngineError):
        aggregate(50, nesw(), max_walk=5)


def test_resume_rejects_other_policy_and_rewind():
    st_ = aggregate(50, nesw())
    with pytest.raises(SnapshotError):
        aggregate(60, default_cyclic(2), resume=st_)
    with pytest.raises(ValueError):
        aggregate(10, nesw(), resume=st_)


def test_resume_detects_tampering():
    st_ = aggregate(50, nesw())
    st_.total_steps += 1
    with pytest.raises(SnapshotError):
        aggregate(60, nesw(), resume=st_)


# -- snapshots ----------------------------------------------------------------

@pytest.mark.parametrize("policy", [nesw(), make_policy("explicit", 2, north_prefix=2),
                                    default_cyclic(3, "random:4")])
def test_snapshot_round_trip_and_continue(policy, tmp_path):
    whole = aggregate(1500, policy)
    half = aggregate(700, policy)
    path = tmp_path / "s.rrl"
    save_snapshot(half, path)
    back = read_snapshot(path)
    np.testing.assert_array_equal(back.sites, half.sites)
    np.testing.assert_array_equal(back.odometer_counts, half.odometer_counts)
    assert back.total_steps == half.total_steps and back.policy.to_json() == policy.to_json()
    cont = aggregate(1500, back.policy, resume=back)
    assert dump_snapshot(cont) == dump_snapshot(whole)


def test_snapshot_layout():
    blob = dump_snapshot(aggregate(3, nesw()))
    assert blob[:4] == b"RRL1"
    d, n, T, plen = struct.unpack_from("<IQQI", blob, 4)
    assert (d, n, T) == (2, 3, 2)
    sites = np.frombuffer(blob, "<i4", count=6, offset=28 + plen).reshape(3, 2)
    assert sites.tolist() == [[0, 0], [1, 0], [0, -1]]


def test_snapshot_corruption_detected():
    blob = bytearray(dump_snapshot(aggregate(200, nesw())))
    for pos in (5, 40, len(blob) // 2, len(blob) - 1):
        bad = bytearray(blob)
        bad[pos] ^= 0x01
        with pytest.raises(SnapshotError):
            load_snapshot(bytes(bad))
    with pytest.raises(SnapshotError):
        load_snapshot(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(SnapshotError):
        load_snapshot(bytes(blob[:-9]))


# -- IDLA ---------------------------------------------------------------------

def test_idla_single():
    assert idla(1, seed=0) == (Region([O2]), 0)


def test_idla_two_particles_uniform():
    trials = 100_000
    counts = {x: 0 for x in neighbors(O2)}
    for s in range(trials):
        sites, steps = idla_sites(2, s)
        assert steps == 1
        counts[tuple(sites[1])] += 1
    p = 0.25
    sigma = math.sqrt(trials * p * (1 - p))
    for c in counts.values():
        assert abs(c - trials * p) <= 3 * sigma


@pytest.mark.parametrize("d", [1, 2, 3])
def test_idla_basic_properties(d):
    A, steps = idla(500, seed=3, d=d)
    assert len(A) == 500 and (0,) * d in A
    assert idla(500, seed=3, d=d) == (A, steps)
    assert idla(500, seed=4, d=d)[0] != A or d == 1


# -- Diaconis-Fulton relaxation -----------------------------------------------

def test_relax_single_particle():
    assert df_relax([O2], FixedOrder(), RotorMover(nesw())) == (Region([O2]), 0)


@pytest.mark.parametrize("policy", [nesw(), default_cyclic(2, "random:2"), make_policy("explicit", 2, north_prefix=2)])
def test_relax_from_origin_matches_aggregation(policy):
    n = 120
    agg = aggregate(n, policy)
    for sched in (FixedOrder(), RandomSite(5), HighestLabel(), FixedOrder(((1, 0), (0, 1)))):
        A, steps = df_relax([O2] * n, sched, RotorMover(policy, RotorState()))
        assert A == agg.A and steps == agg.total_steps


@settings(max_examples=25)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=40),
       st.integers(0, 2**32))
def test_rotor_relaxation_is_schedule_free(initial, seed):
    pol = default_cyclic(2, "random:1")
    results = {df_relax(initial, sched, RotorMover(pol, RotorState()))
               for sched in (FixedOrder(), RandomSite(seed), HighestLabel())}
    assert len(results) == 1
    A, _ = results.pop()
    assert len(A) == len(initial)


def test_random_mover_is_seeded():
    a = df_relax([O2] * 30, RandomSite(1), RandomMover(7))
    assert a == df_relax([O2] * 30, RandomSite(1), RandomMover(7))
    assert len(a[0]) == 30
