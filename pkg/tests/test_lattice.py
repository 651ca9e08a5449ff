import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_dual_coords, dual_basis_mp
from thomas_lab.lattice import (
    Lattice,
    LatticeError,
    dual_basis,
    enumerate_dual_coords,
    enumerate_dual_points,
)

TWO_PI = 2 * math.pi
HEX = [[1.0, 0.0], [0.5, math.sqrt(3) / 2]]


def test_square_dual_is_2pi_identity():
    d = dual_basis(Lattice(np.eye(2)))
    np.testing.assert_allclose(d.basis, TWO_PI * np.eye(2), atol=1e-15)


def test_hexagonal_dual_matches_high_precision_solve():
    lat = Lattice(HEX)
    np.testing.assert_allclose(dual_basis(lat).basis, dual_basis_mp(HEX), atol=1e-13)
    np.testing.assert_allclose(lat.basis @ lat.dual().basis.T, TWO_PI * np.eye(2), atol=1e-12)


def test_normalization_by_dilation():
    lat = Lattice([[2.0]])
    assert lat.dilation == 0.5
    np.testing.assert_allclose(lat.basis, [[1.0]])
    np.testing.assert_allclose(lat.dual().basis, [[TWO_PI]])
    raw = Lattice([[2.0]], normalize=False)
    np.testing.assert_allclose(raw.dual().basis, [[math.pi]])


def test_cell_volume_is_abs_det():
    lat = Lattice([[1.0, 0.0], [0.3, 2.0]])
    assert lat.cell().volume == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("basis", [[[1.0, 0.0], [2.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
def test_singular_basis_rejected(basis):
    with pytest.raises(LatticeError, match="linearly dependent|Gram"):
        Lattice(basis)


def test_enumerate_z1_radius_7():
    pts = enumerate_dual_points(Lattice([[1.0]]), [0.0], 7.0)
    assert [p.coords for p in pts] == [(-1,), (0,), (1,)]


def test_enumerate_z2_radius_2pi():
    coords = enumerate_dual_coords(Lattice(np.eye(2)).dual(), [0.0, 0.0], TWO_PI)
    assert sorted(map(tuple, coords)) == [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]


def test_radius_zero():
    lat = Lattice(np.eye(2))
    assert [p.coords for p in enumerate_dual_points(lat, [0.0, 0.0], 0.0)] == [(0, 0)]
    assert enumerate_dual_points(lat, [1.0, 0.0], 0.0) == []


def test_dual_points_pair_with_b1_in_2pi_z():
    lat = Lattice(HEX)
    for p in enumerate_dual_points(lat, [math.pi, 0.0], 30.0):
        r = (p.cartesian @ lat.b1) / TWO_PI
        assert abs(r - round(r)) < 1e-10


lattices = st.sampled_from([np.eye(1), np.eye(2), np.array(HEX), np.array([[1.0, 0.2, 0.0], [0.1, 1.3, 0.2], [0.0, 0.4, 0.9]])])


@given(lattices, st.floats(0, 25), st.floats(-3, 3), st.floats(-3, 3))
def test_enumeration_matches_brute_force(basis, radius, cx, cy):
    lat = Lattice(basis)
    m = lat.dim
    center = np.array([cx, cy, 0.7])[:m]
    got = [tuple(c) for c in enumerate_dual_coords(lat.dual(), center, radius)]
    want = brute_dual_coords(lat.dual().basis, center, radius, box=12)
    assert got == want  # also checks lexicographic order


@given(lattices, st.floats(0, 20), st.floats(0, 20))
def test_count_monotone_in_radius(basis, r1, r2):
    lat = Lattice(basis)
    lo, hi = sorted((r1, r2))
    c = np.zeros(lat.dim)
    assert len(enumerate_dual_coords(lat.dual(), c, lo)) <= len(enumerate_dual_coords(lat.dual(), c, hi))


@given(lattices)
def test_dual_of_dual_round_trip(basis):
    lat = Lattice(basis)
    dd = Lattice(lat.dual().basis, normalize=False).dual().basis
    np.testing.assert_allclose(dd, lat.basis, atol=1e-10)
