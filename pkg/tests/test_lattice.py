import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magbm.lattice import (ETA1, ETA2, OMEGA, SQRT3, ZETA1, ZETA2, FluxSpec, Lattice, flux_spec,
                           make_lattice, pairing, special_points)

scalings = st.tuples(st.integers(1, 5), st.integers(1, 5))


def test_dual_pairing_is_two_pi_delta():
    for i, z in enumerate((ZETA1, ZETA2)):
        for j, e in enumerate((ETA1, ETA2)):
            assert pairing(z, e) == pytest.approx(2 * math.pi * (i == j), abs=1e-12)


def test_basis_vectors_closed_form():
    assert ZETA1 == pytest.approx(4j * math.pi * OMEGA / 3)
    assert ETA1 == pytest.approx(SQRT3 * OMEGA**2)
    assert abs(ETA2 + SQRT3 * OMEGA) < 1e-15


@given(scalings)
def test_area_positive_and_matches_cross_product(lam):
    lat = make_lattice(lam)
    area = (np.conj(lat.v1) * lat.v2).imag
    assert area > 0
    assert area == pytest.approx(lat.mag_cell_area, abs=1e-12 * area)


@given(scalings, st.integers(1, 9))
def test_flux_quantization(lam, p):
    f = flux_spec(p, make_lattice(lam))
    assert f.B * f.lattice.cell_area * f.q == pytest.approx(2 * math.pi * p, abs=1e-12)
    assert f.flux_per_cell == pytest.approx(2 * math.pi * p / f.q)


@given(scalings)
def test_magnetic_dual_is_dual(lam):
    lat = make_lattice(lam)
    for i, v in enumerate(lat.periods):
        for j, d in enumerate(lat.mag_dual):
            assert pairing(v, d) == pytest.approx(2 * math.pi * (i == j), abs=1e-11)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_reduced_coordinates_round_trip(s1, s2):
    lat = make_lattice((2, 1))
    r1, r2 = lat.reduced(lat.point(s1, s2))
    assert r1 == pytest.approx(s1, abs=1e-12) and r2 == pytest.approx(s2, abs=1e-12)


def test_reduce_mod_lands_in_cell():
    lat = Lattice()
    z = lat.reduce_mod(lat.point(2.3, -1.6))
    s1, s2 = lat.reduced(z)
    assert 0 <= s1 < 1 and 0 <= s2 < 1
    assert s1 == pytest.approx(0.3) and s2 == pytest.approx(0.4)


def test_special_points():
    sp = special_points()
    assert sp.k0 == pytest.approx(-1j)
    assert sp.zS == pytest.approx(4j * math.pi * (OMEGA**2 - OMEGA) / 9)
    assert abs(sp.zS) == pytest.approx(4 * math.pi / (3 * SQRT3))


@pytest.mark.parametrize("lam", [(0, 1), (1, -2), (1.5, 1)])
def test_bad_scaling_rejected(lam):
    with pytest.raises(ValueError):
        Lattice(lam)


def test_bad_flux_rejected():
    with pytest.raises(ValueError):
        flux_spec(0)
    with pytest.raises(ValueError):
        FluxSpec(-1, Lattice())
