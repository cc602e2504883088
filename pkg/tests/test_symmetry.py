import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from oracles import (FIXED_POLYCUBES, FREE_POLYCUBES_WITH_MIRRORS, FREE_POLYOMINOES,
                     images_under_symmetry, redelmeier_fixed_counts)

from rotorlab.exittime import max_exit, solve_exit
from rotorlab.lattice import Region, is_connected, lattice_ball
from rotorlab.symmetry import (BudgetExceeded, ColumnDecomposition, canonical_form, canonical_key,
                               centered_offsets, enumerate_connected, from_rle, is_orthoconvex,
                               point_symmetries, rle, centring_quarters, steiner, symmetrize_to_fixpoint, xi, xi_quarters)

X, Y = 0, 1


def test_steiner_examples():
    assert steiner(Region([(0, 0), (0, 2)]), Y) == Region([(0, 0), (0, 1)])
    assert steiner(Region([(0, -3)]), Y) == Region([(0, 0)])
    A = Region([(0, -1), (0, 0), (0, 1)])
    assert steiner(A, Y) == A
    with pytest.raises(ValueError):
        steiner(A, 2)


def test_centered_offsets():
    for a in range(1, 12):
        js = list(centered_offsets(a))
        assert len(js) == a
        assert all(Fraction(-a, 2) < j <= Fraction(a, 2) for j in js)


def test_orthoconvex_examples():
    assert is_orthoconvex(lattice_ball(200, 2))
    assert is_orthoconvex(lattice_ball(100, 3))
    assert not is_orthoconvex(Region([(0, 0), (2, 0)]))
    assert is_orthoconvex(Region([(0, 0), (1, 0), (0, 1)]))


def test_xi_examples():
    assert xi(Region([(0, 0)])) == 0.5
    A = Region([(0, 0), (0, 2)])
    assert xi(A) == 3.0
    assert xi(steiner(A, Y)) == 2.0


def test_fixpoint_examples():
    B = lattice_ball(300, 2)
    assert symmetrize_to_fixpoint(B) == B
    tromino = Region([(5, 0), (5, 1), (5, 2)])
    assert symmetrize_to_fixpoint(tromino) == Region([(0, -1), (0, 0), (0, 1)])


regions = st.integers(2, 3).flatmap(
    lambda d: st.sets(st.tuples(*[st.integers(-4, 4)] * d), min_size=1, max_size=25).map(lambda s: Region(s, d)))


@given(regions, st.integers(0, 2))
def test_steiner_properties(A, axis):
    axis %= A.d
    B = steiner(A, axis)
    assert len(B) == len(A)
    # each column keeps its size and becomes the centred interval
    ca, cb = ColumnDecomposition.of(A, axis), ColumnDecomposition.of(B, axis)
    assert {b: len(v) for b, v in ca.columns.items()} == {b: len(v) for b, v in cb.columns.items()}
    for js in cb.columns.values():
        assert js == tuple(centered_offsets(len(js)))
    # positive-side centring strictly lowers sum |x_i - 1/4| unless fixed
    pot = lambda R: sum(abs(4 * c - 1) for x in R for c in x)
    if B == A:
        assert pot(B) == pot(A)
    else:
        assert pot(B) <= pot(A) - 2
    assert centring_quarters(B) == pot(B)
    assert steiner(B, axis) == B


@given(regions, st.integers(0, 2))
def test_xi_decreases_on_nonnegative_placements(A, axis):
    axis %= A.d
    A = A.translate(tuple(-v for v in A.array().min(axis=0).tolist()))
    B = steiner(A, axis)
    if B != A:
        assert xi_quarters(B) < xi_quarters(A)


def test_xi_can_rise_under_positive_side_centring():
    # a column on {-1, 0} moves to {0, 1}: xi goes from 3/2 to 2
    A = Region([(0, -1), (0, 0)])
    B = steiner(A, Y)
    assert B == Region([(0, 0), (0, 1)])
    assert (xi(A), xi(B)) == (1.5, 2.0)
    assert centring_quarters(B) < centring_quarters(A)


@given(regions)
def test_fixpoint_properties(A):
    F = symmetrize_to_fixpoint(A)
    assert len(F) == len(A)
    assert is_orthoconvex(F)
    assert all(steiner(F, i) == F for i in range(A.d))


@given(regions)
def test_steiner_preserves_connectedness(A):
    if is_connected(A):
        for i in range(A.d):
            assert is_connected(steiner(A, i))


def test_point_symmetry_count():
    assert [len(point_symmetries(d)) for d in (1, 2, 3)] == [2, 8, 48]


@given(regions, st.integers(0, 47), st.tuples(st.integers(-9, 9), st.integers(-9, 9), st.integers(-9, 9)))
def test_canonical_key_invariance(A, which, shift):
    m = point_symmetries(A.d)[which % len(point_symmetries(A.d))]
    B = Region.from_array(A.array() @ m.T).translate(shift[: A.d])
    assert canonical_key(B) == canonical_key(A)
    assert canonical_form(A).array().min(axis=0).tolist() == [0] * A.d


def test_free_polyomino_counts():
    counts = [sum(1 for _ in enumerate_connected(n, 2)) for n in range(1, 9)]
    assert counts == FREE_POLYOMINOES[:8]


def test_fixed_polyomino_counts_from_independent_search():
    fixed = redelmeier_fixed_counts(8)
    for n in range(1, 9):
        assert sum(images_under_symmetry(A.sorted()) for A in enumerate_connected(n, 2)) == fixed[n - 1]


def test_polycube_counts():
    for n in range(1, 6):
        shapes = list(enumerate_connected(n, 3))
        assert len(shapes) == FREE_POLYCUBES_WITH_MIRRORS[n - 1]
        assert sum(images_under_symmetry(A.sorted()) for A in shapes) == FIXED_POLYCUBES[n - 1]


def test_enumeration_small_cases_and_budget():
    assert [len(list(enumerate_connected(n, 1))) for n in (1, 5, 20)] == [1, 1, 1]
    shapes = list(enumerate_connected(5, 2))
    assert len(shapes) == 12 and all(is_connected(A) and len(A) == 5 for A in shapes)
    assert len(set(shapes)) == 12
    keys = [canonical_key(A) for A in shapes]
    assert keys == sorted(keys)
    with pytest.raises(BudgetExceeded):
        next(enumerate_connected(11, 2))
    with pytest.raises(BudgetExceeded):
        next(enumerate_connected(7, 3))
    with pytest.raises(BudgetExceeded):
        next(enumerate_connected(2, 4))


def test_exit_time_does_not_drop_under_steiner_small():
    for n in range(1, 7):
        for A in enumerate_connected(n, 2):
            e = max_exit(solve_exit(A))
            for i in range(2):
                assert max_exit(solve_exit(steiner(A, i))) >= e - 1e-8


def test_rle_examples():
    L = Region([(0, 0), (1, 0), (0, 1)])
    assert rle(L) == "o$2o!"
    assert rle(Region([(0, 0), (2, 0)])) == "obo!"
    assert rle(Region([(0,), (1,), (3,)], 1)) == "2obo!"
    cube = Region(list(itertools.product((0, 1), repeat=3)), 3)
    assert rle(cube) == "2o$2o|2o$2o!"


@given(st.sets(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=1, max_size=30))
def test_rle_round_trip(pts):
    A = Region(pts)
    lo = A.array().min(axis=0)
    assert from_rle(rle(A)) == A.translate(-lo)
