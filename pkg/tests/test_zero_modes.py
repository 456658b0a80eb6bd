import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magbm import zero_modes as Z
from magbm.grid import GridSpec
from magbm.lattice import ETA1, FluxSpec, Lattice, flux_spec, make_lattice, special_points
from magbm.operators import TWIST

MAGIC = 0.5856635541983
momenta = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def reduce_to_cell(z, lattice):
    """Representative of z modulo the lattice periods, as fractional coordinates in [0, 1)."""
    v1, v2 = lattice.periods
    M = np.array([[v1.real, v2.real], [v1.imag, v2.imag]])
    t = np.linalg.solve(M, [z.real, z.imag])
    return np.mod(t, 1.0)


def same_point_mod_lattice(a, b, lattice, tol):
    ta, tb = reduce_to_cell(a, lattice), reduce_to_cell(b, lattice)
    d = (ta - tb + 0.5) % 1.0 - 0.5
    v1, v2 = lattice.periods
    return abs(d[0] * v1 + d[1] * v2) < tol


# -- configurations


@given(st.integers(1, 4), st.sampled_from([(1, 1), (2, 1), (1, 3)]), momenta)
def test_zero_configurations_satisfy_constraints(p, lam, k):
    f = flux_spec(p, make_lattice(lam))
    for c in Z.zero_configs(f, k, p + 1):
        assert abs(sum(c.zeros) - Z.zero_sum(f, k)) < 1e-10
        assert abs(c.gamma1 - (0.5j * k + 1j * math.pi * f.B * (lam[1] - lam[0]) / 3)) < 1e-12
        assert max(c.constraint_residuals()) < 1e-10


def test_single_flux_zero_at_zero_momentum():
    f = flux_spec(1)
    (c,) = Z.zero_configs(f, 0.0)
    assert abs(c.zeros[0] - 2 * math.pi / math.sqrt(3)) < 1e-10
    assert abs(c.gamma1) < 1e-12


def test_zero_sum_momentum_dependence():
    f = flux_spec(1)
    k = 0.4 - 0.3j
    want = 2 * math.pi / math.sqrt(3) - 4j * math.pi * k / (3 * math.sqrt(3))
    assert abs(Z.zero_sum(f, k) - want) < 1e-10


# -- ker a_k


@pytest.mark.parametrize("p", [1, 2, 3])
def test_kernel_a_certified(p):
    kb = Z.kernel_a(flux_spec(p), 0.3 - 0.2j, n=48 * (1 + (p > 2)))
    assert kb.dim == p
    assert kb.certified()
    assert max(kb.residuals) < 1e-6
    assert max(kb.boundary_errors) < 1e-8
    if p > 1:
        assert kb.gram_min_sv > 1e-6


def test_kernel_states_orthonormal():
    kb = Z.kernel_a(flux_spec(2), 0.1j, n=48)
    G = np.array([[a.inner(b) for b in kb.states] for a in kb.states])
    assert np.abs(G - np.eye(2)).max() < 1e-10


def test_kernel_on_rectangular_cell():
    kb = Z.kernel_a(flux_spec(1, make_lattice((2, 1))), 0.2, n=32)
    assert kb.dim == 1 and max(kb.residuals) < 1e-6


def test_kernel_a_zero_position():
    kb = Z.kernel_a(flux_spec(1), 0.0, n=48)
    zeros, total = Z.zero_locate(kb.states[0])
    assert total == 1
    (zero,) = zeros
    h = abs(Lattice().periods[0]) / 48
    assert same_point_mod_lattice(zero.position, 2 * math.pi / math.sqrt(3), Lattice(), h)


@settings(max_examples=8)
@given(st.integers(1, 3), momenta)
def test_zero_count_equals_flux(p, k):
    kb = Z.kernel_a(flux_spec(p), k, n=36)
    for s in kb.states:
        assert Z.zero_locate(s)[1] == p


def test_kernel_a_rejects_nonpositive_field():
    with pytest.raises(Z.ZeroModeError):
        Z.kernel_a(FluxSpec(0, Lattice()), 0.0)


# -- reflected kernel


def test_negative_field_kernel():
    f = flux_spec(1)
    k = 0.25 + 0.1j
    kb = Z.kernel_a_negativeB(f, k, n=64)
    assert kb.dim == 1 and max(kb.residuals) < 1e-6


def test_reflection_is_an_involution():
    u = Z.kernel_a(flux_spec(2), 0.3, n=32).states[1]
    back = Z.reflect_conjugate(Z.reflect_conjugate(u))
    assert np.abs(back.samples - u.samples).max() < 1e-14
    assert back.B == u.B


def test_reflection_moves_zero():
    f = flux_spec(1)
    k = 0.2 - 0.1j
    u = Z.kernel_a(f, k, n=48).states[0]
    (z1,) = Z.zero_configs(f, k)[0].zeros
    q = Z.reflect_conjugate(u)
    vals = np.abs(q.samples[0])
    pts = q.grid.points()
    idx = np.unravel_index(np.argmin(vals), vals.shape)
    h = abs(Lattice().periods[0]) / 48
    assert same_point_mod_lattice(pts[idx], -z1, Lattice(), 1.5 * h)


# -- flat-band kernel


def test_exact_seeds_solve_zero_field_problem():
    grid = GridSpec.square(Lattice(), 32)
    u1, u2 = Z.exact_seeds(grid)
    k0 = special_points().k0
    assert Z.spectral_chiral_residual(u1, 0.0, k0) < 1e-12
    assert Z.spectral_chiral_residual(u2, 0.0, 0.0) < 1e-12


def test_continuation_from_zero_is_exact():
    s = Z.continue_seeds(0.0, N=6)
    grid = GridSpec.square(Lattice(), 24)
    e1, e2 = Z.exact_seeds(grid)
    for seed, exact in ((s.u1, e1), (s.u2, e2)):
        v = seed.on_grid(grid)
        overlap = abs(np.vdot(v.samples, exact.samples)) / (np.linalg.norm(v.samples) * np.linalg.norm(exact.samples))
        assert overlap > 1 - 1e-12


@pytest.fixture(scope="module")
def seeds_02():
    return Z.continue_seeds(0.2, N=8)


def test_continuation_residuals(seeds_02):
    assert max(seeds_02.residuals) < 1e-8
    assert not seeds_02.crossings


def test_continuation_keeps_kernel_simple(seeds_02):
    from magbm import operators as O
    from magbm.potentials import MagneticPotential

    D = O.assemble_fiber("Chiral", 0, 0.2, special_points().k0, MagneticPotential(), O.plane_wave(8)).offdiag.toarray()
    s = np.linalg.svd(D, compute_uv=False)
    assert s[-1] < 1e-8 and s[-2] > 1e-2


def test_continuation_needs_enough_steps():
    with pytest.raises(Z.ContinuationError):
        Z.continue_seeds(0.5, steps=3)


@pytest.mark.slow
def test_continuation_flags_magic_angle():
    s = Z.continue_seeds(MAGIC, N=8)
    assert s.crossings
    with pytest.raises(Z.ContinuationError):
        Z.continue_seeds(MAGIC, N=8, strict=True)


@pytest.mark.parametrize("alpha", [0.0, 0.2])
def test_flatband_kernel(alpha, seeds_02):
    seeds = seeds_02 if alpha else Z.continue_seeds(0.0, N=8)
    kb = Z.flatband_kernel(alpha, flux_spec(1), 0.3 + 0.1j, seeds, n=64)
    assert kb.dim == 2
    assert max(kb.residuals) < 1e-4
    assert kb.gram_min_sv > 1e-6


def test_flatband_kernel_two_flux_quanta(seeds_02):
    kb = Z.flatband_kernel(0.2, flux_spec(2), -0.2 + 0.2j, seeds_02, n=64)
    assert kb.dim == 4 and max(kb.residuals) < 1e-4


# -- magic-angle zero mode and its translates


@pytest.fixture(scope="module")
def magic_mode():
    return Z.continue_seeds(MAGIC, N=10).u2


@pytest.mark.slow
def test_magic_mode_vanishes_at_stacking_point(magic_mode):
    zS = special_points().zS
    assert np.abs(magic_mode(np.array([-zS]))).max() < 1e-6
    grid = GridSpec.square(Lattice(), 48)
    u = magic_mode.on_grid(grid)
    assert Z.spectral_chiral_residual(u, MAGIC, 0.0) < 1e-6
    zeros, _ = Z.zero_locate(u, component=0)
    common = [z for z in zeros if np.abs(magic_mode(np.array([z.position]))[1]).max() < 1e-2]
    assert len(common) == 1
    assert same_point_mod_lattice(common[0].position, -zS, Lattice(), 1e-2)


@pytest.mark.slow
def test_vk_from_magic_mode(magic_mode):
    grid = GridSpec.square(Lattice(), 48)
    k = ETA1 / 3
    v = Z.vk_from_u0(magic_mode, k, grid)
    assert Z.spectral_chiral_residual(v, MAGIC, k) < 1e-5
    v0 = Z.vk_from_u0(magic_mode, 0.0, grid).samples
    u = magic_mode.on_grid(grid).samples
    ratio = np.vdot(u, v0) / np.vdot(u, u)
    assert np.linalg.norm(v0 - ratio * u) / np.linalg.norm(v0) < 1e-8


@pytest.mark.slow
def test_single_translate_is_the_mode(magic_mode):
    kb, labels = Z.up_translates(magic_mode, flux_spec(1), n=32)
    assert kb.dim == 1 and labels[0][0] == (0, 0)
    u = magic_mode.on_grid(GridSpec.square(Lattice(), 32)).normalized()
    assert abs(abs(u.inner(kb.states[0])) - 1) < 1e-10


@pytest.mark.slow
def test_translates_on_doubled_cell(magic_mode):
    lat = make_lattice((2, 1))
    kb, labels = Z.up_translates(magic_mode, flux_spec(1, lat), n=32)
    assert kb.dim == 2
    assert abs(kb.states[0].inner(kb.states[1])) < 1e-8
    phases = dict(labels)
    assert np.allclose(phases[(0, 0)], (1, 1), atol=1e-8)
    assert np.allclose(phases[(1, 0)], (-1, 1), atol=1e-8)
    for s in kb.states:
        zeros, _ = Z.zero_locate(s, component=0)
        common = [z for z in zeros if z.multiplicity > 0]
        assert len(common) == lat.lam[0] * lat.lam[1]


def test_zero_locate_on_node():
    grid = GridSpec.square(Lattice(), 16)
    z = grid.points()
    from magbm.grid import GridFunction

    centre = z[5, 7]
    u = GridFunction(grid, (z - centre)[None] * np.exp(-np.abs(z - centre) ** 2)[None], 0.0, (0j,))
    zeros, _ = Z.zero_locate(u)
    assert any(abs(q.position - centre) < 1e-12 and q.multiplicity == 1 for q in zeros)


def test_twisted_kernel_component():
    kb = Z.kernel_a(flux_spec(1), 0.2, n=48, offset=TWIST)
    assert kb.dim == 1 and max(kb.residuals) < 1e-6
