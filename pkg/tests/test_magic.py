import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magbm import magic as MG
from magbm.lattice import flux_spec, special_points
from magbm.potentials import fig5_potential

FIRST_MAGIC = 0.5865
POLISHED = 0.5856635541983


def multiset_distance(a, b):
    from scipy.optimize import linear_sum_assignment

    a, b = np.asarray(a), np.asarray(b)
    if len(a) != len(b):
        return math.inf
    cost = np.abs(np.subtract.outer(a, b))
    r, c = linear_sum_assignment(cost)
    return cost[r, c].max()


@pytest.fixture(scope="module")
def set16():
    return MG.magic_angles(R=1, N=16, k=0.5)


def test_first_magic_angle(set16):
    reals = set16.real_positive()
    assert reals and abs(reals[0] - FIRST_MAGIC) < 1e-3
    first = [m for m in set16.values if m.is_real and m.value.real > 0][0]
    assert first.multiplicity == 1


def test_magic_set_symmetric_under_negation(set16):
    vals = set16.alphas()
    assert multiset_distance(vals, -vals) < 1e-6


def test_values_sorted_by_modulus(set16):
    mods = np.abs(set16.alphas())
    assert np.all(np.diff(mods) >= -1e-9)


def test_real_values_verified(set16):
    assert set16.residual_bound < 1e-5


def test_json_round_trip(set16):
    data = json.loads(set16.to_json())
    assert data["N"] == 16
    assert len(data["alphas"]) == len(set16.values)


@pytest.mark.slow
def test_truncation_convergence(set16):
    s24 = MG.magic_angles(R=1, N=24, k=0.5)
    assert multiset_distance(set16.alphas(), s24.alphas()) < 1e-6


@pytest.mark.slow
def test_independent_of_k():
    a = MG.magic_angles(R=1, N=16, k=0.5, polish=False).alphas()
    b = MG.magic_angles(R=1, N=16, k=0.31 + 0.17j, polish=False).alphas()
    assert multiset_distance(a, b) < 1e-6


@pytest.mark.slow
def test_invariant_under_periodic_field():
    plain = MG.magic_angles(R=1, N=12, k=0.5, polish=False)
    shifted = MG.magic_angles(R=1, N=12, k=0.5, A_per=fig5_potential(), polish=False)
    # the enlarged cell repeats every value once per coset
    assert {m.multiplicity for m in shifted.values} == {3}
    assert multiset_distance(plain.alphas(), shifted.alphas()) < 1e-6


def test_truncation_guard():
    with pytest.raises(MG.TruncationError):
        MG.magic_angles(R=4, N=6)


@given(st.integers(4, 40), st.complex_numbers(max_magnitude=1, allow_nan=False, allow_infinity=False))
def test_tail_bound_decreases(N, k):
    assert MG.tail_bound(N + 1, k) <= MG.tail_bound(N, k)


# -- counting


def test_counting_fit_synthetic():
    # exactly floor(R^2) values within each radius R
    values = [math.sqrt(j) + 1e-9 for j in range(1, 401)]
    radii = np.linspace(2, 20, 10)
    fit = MG.counting_fit(values, radii)
    assert abs(fit.a - 1) < 0.05


def test_counting_fit_errors():
    with pytest.raises(ValueError):
        MG.counting_fit([], [1, 2, 3, 4])
    with pytest.raises(ValueError):
        MG.counting_fit([0.5], [1, 2])


@pytest.mark.slow
def test_counting_is_quadratic():
    s = MG.magic_angles(R=4, N=24, k=0.5, polish=False)
    fit = MG.counting_fit(s, [1, 2, 3, 4])
    assert fit.a * 16 > fit.b * 4


# -- direct verification


def test_verify_magic_at_rounded_angle():
    rep = MG.verify_magic(FIRST_MAGIC)
    assert len(rep.smallest) == 5
    assert max(rep.smallest) < 1e-3 * rep.scale


def test_verify_magic_at_polished_angle():
    rep = MG.verify_magic(POLISHED, ks=[0.31 + 0.17j, -0.4 + 0.22j])
    assert rep.is_magic


def test_non_magic_rejected():
    rep = MG.verify_magic(0.2)
    assert min(rep.smallest) > 1e-2 * rep.scale
    assert not rep.is_magic


def test_free_dirac_kernel_only_at_dirac_points():
    k0 = special_points().k0
    assert MG.sigma_min_chiral(0.0, 0.0) < 1e-12
    assert MG.sigma_min_chiral(0.0, k0) < 1e-12
    assert MG.sigma_min_chiral(0.0, 0.31 + 0.17j) > 0.1


def test_verify_magic_in_constant_field():
    rep = MG.verify_magic(0.2, flux=flux_spec(1), ks=[0.3 + 0.1j], nmax=20)
    assert not rep.is_magic


def test_polish_returns_nearby_minimum():
    assert abs(MG.polish_real(0.5857) - POLISHED) < 1e-7
