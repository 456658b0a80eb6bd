import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magbm import operators as O
from magbm import spectra as S
from magbm.lattice import flux_spec, make_lattice, special_points
from magbm.potentials import MagneticPotential, fig5_potential

GENERIC_KS = [0.31 + 0.17j, -0.4 + 0.22j, 0.13 - 0.29j, 0.05 + 0.4j]


# -- band structures


def test_band_structure_shape_and_order():
    bs = S.band_structure("Chiral", S.ModelParams(alpha1=0.3), GENERIC_KS, O.plane_wave(6), nbands=3)
    assert bs.energies.shape == (4, 6)
    assert np.all(np.diff(bs.energies, axis=1) >= 0)


def test_band_structure_workers_do_not_change_rows():
    args = ("Chiral", S.ModelParams(alpha1=0.3), GENERIC_KS, O.plane_wave(6))
    a = S.band_structure(*args, nbands=3, workers=1).energies
    b = S.band_structure(*args, nbands=3, workers=3).energies
    assert np.array_equal(a, b)


@given(st.floats(-1, 1), st.complex_numbers(max_magnitude=1, allow_nan=False, allow_infinity=False),
       st.sampled_from(["Chiral", "AntiChiral"]))
def test_spectrum_symmetric_under_negation(alpha, k, model):
    params = S.ModelParams(alpha0=alpha, alpha1=0.0) if model == "AntiChiral" else S.ModelParams(alpha1=alpha)
    E = S.band_structure(model, params, [k], O.plane_wave(4), nbands=6).energies[0]
    assert np.abs(np.sort(E) + np.sort(E)[::-1]).max() < 1e-8


def test_csv_header():
    bs = S.band_structure("Chiral", S.ModelParams(alpha1=0.3), [0.1], O.plane_wave(5), nbands=2)
    head = bs.to_csv().splitlines()[0]
    assert head == "k_index,k_re,k_im,E_1,E_2,E_3,E_4"


def test_dirac_cone_slope():
    k0 = special_points().k0
    qs = np.array([1e-3, 2e-3, 4e-3])
    ks = [k0 + q * np.exp(0.7j) for q in qs]
    bs = S.band_structure("Chiral", S.ModelParams(alpha1=0.0), ks, O.plane_wave(5), nbands=2)
    slope = np.polyfit(qs, bs.abs_sorted()[:, 0], 1)[0]
    assert abs(slope - 1) < 0.02


# -- flat bands


@pytest.mark.parametrize("p", [1, 2])
def test_flat_band_count_landau(p):
    f = flux_spec(p)
    params = S.ModelParams(alpha1=0.2, A=MagneticPotential(f.B))
    bs = S.band_structure("Chiral", params, S.brillouin_grid(3, f.lattice), O.landau_levels(20), nbands=4 * p)
    rep = S.flat_band_detect(bs)
    assert rep.count == 2 * p
    assert rep.flatness < 1e-10
    assert rep.gap_ratio > 10


def test_flat_band_detect_synthetic():
    E = np.array([[-1.0, -1e-5, 2e-5, 0.9], [-1.1, -3e-5, 1e-5, 1.2]])
    bs = S.BandStructure([0j, 1j], E, O.Model.CHIRAL, S.ModelParams(), "PlaneWave")
    rep = S.flat_band_detect(bs)
    assert rep.count == 2 and rep.flatness == pytest.approx(3e-5) and rep.gap == pytest.approx(0.9)


def test_no_flat_band_at_zero_field():
    bs = S.band_structure("Chiral", S.ModelParams(alpha1=0.2), GENERIC_KS, O.plane_wave(6), nbands=2)
    assert S.flat_band_detect(bs).count == 0


@pytest.mark.slow
def test_antichiral_band_is_not_flat_with_periodic_field():
    lat = make_lattice((3, 3))
    params = S.ModelParams(alpha0=1.0, A=fig5_potential())
    ks = S.brillouin_grid(3, lat)
    bs = S.band_structure("AntiChiral", params, ks, O.plane_wave(6, lat), nbands=4)
    assert S.flat_band_detect(bs).count == 0


def test_antichiral_scan_is_dispersive():
    scan = S.antichiral_gap_scan(1.0, kgrid=4, N=6)
    assert scan.is_dispersive


def test_antichiral_scan_rejects_constant_field():
    with pytest.raises(ValueError):
        S.antichiral_gap_scan(1.0, MagneticPotential(1.0), kgrid=2)


# -- squeezing


def test_squeezing_needs_five_thetas():
    with pytest.raises(ValueError):
        S.squeezing_experiment([0.1, 0.08, 0.06])
    with pytest.raises(ValueError):
        S.squeezing_experiment([0.5, 0.1, 0.08, 0.06, 0.05])


def test_squeezing_truncation_converged():
    assert S.squeezing_convergence(0.1) < 0.1


def test_squeezing_spectrum_shrinks():
    a = S.squeezing_spectrum(0.1, 0.5, 12)
    b = S.squeezing_spectrum(0.06, 0.5, 12)
    assert b[0] < a[0]


# -- Landau levels


def test_landau_predict_zero_offset():
    levels = S.landau_predict(0, 2)
    energies = sorted(lv.energy for lv in levels)
    want = sorted([0, math.sqrt(6), -math.sqrt(6), math.sqrt(12), -math.sqrt(12)])
    assert np.allclose(energies, want)
    assert all(set(lv.branches) == {"a", "b"} for lv in levels)


def test_landau_predict_split_branches():
    levels = S.landau_predict(1, 2)
    branch = {name: sorted(lv.energy for lv in levels if lv.energy > 0 and name in lv.branches) for name in "ab"}
    assert np.allclose(branch["a"], [2, math.sqrt(8)])
    assert np.allclose(branch["b"], [math.sqrt(8), 4])


def test_landau_predict_rejects_degenerate_offset():
    with pytest.raises(ValueError):
        S.landau_predict(3, 2)


@given(st.floats(-2.5, 2.5), st.integers(0, 6), st.floats(1e-3, 1))
def test_landau_levels_symmetric(B0, n, h):
    E = np.array([lv.energy for lv in S.landau_predict(B0, n, h)])
    assert np.allclose(np.sort(E), np.sort(-E))


# -- histograms


def test_histogram_smoothing_and_peaks():
    edges = np.linspace(-1, 1, 11)
    counts = np.array([0, 1, 5, 1, 0, 0, 0, 2, 8, 2], float)
    hist = S.Histogram(edges, counts, 0.01, 10, "exact")
    assert hist.smoothed()[2] == pytest.approx(7 / 3)
    assert hist.smoothed()[0] == pytest.approx(1 / 3)
    positions = [p for p, _ in hist.peaks()]
    assert len(positions) == 2
    assert positions[0] == pytest.approx(-0.5)


def test_histogram_rejects_large_h():
    with pytest.raises(ValueError):
        S.eigen_histogram(0.1)


def test_histogram_exact_path_counts_everything():
    hist = S.eigen_histogram(0.05, window=0.2, bins=20, alpha1=0.1)
    assert hist.method == "exact"
    assert hist.counts.sum() == int(hist.counts.sum()) > 0


@pytest.fixture(scope="module")
def hist_003():
    return S.eigen_histogram(0.03)


@pytest.mark.slow
def test_histogram_peaks_near_levels(hist_003):
    matches = S.match_landau_peaks(hist_003)
    for m in matches[1:]:
        assert m.error / m.predicted < 0.1


@pytest.mark.slow
def test_peak_spacing_ratio():
    hist = S.eigen_histogram(0.01)
    matches = {m.level: m for m in S.match_landau_peaks(hist)}
    assert abs(matches[4].found / matches[1].found - 2) < 0.1


@pytest.mark.slow
def test_scaled_axis(hist_003):
    scaled = S.eigen_histogram(0.03, scaled_axis=True)
    assert np.allclose(scaled.edges * math.sqrt(3), hist_003.edges)
    a = [m.found for m in S.match_landau_peaks(scaled)]
    b = [m.found for m in S.match_landau_peaks(hist_003)]
    assert np.allclose(a, b)
