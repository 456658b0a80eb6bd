"""Invariant suite behind the ``check`` command.

Each check is a small self-contained computation returning pass/fail with a one-line detail.
Checks flagged ``slow`` take minutes; the rest finish in seconds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import chern, lattice, magic, operators, potentials, spectra, special_fn, zero_modes
from .lattice import OMEGA, Lattice, flux_spec, make_lattice

MAGIC_ALPHA = 0.5856635541983
TOUCHING_K = -0.5j
GENERIC_KS = (0.31 + 0.17j, -0.4 + 0.22j, 0.13 - 0.29j)


@dataclass(frozen=True)
class CheckResult:
    name: str
    module: str
    passed: bool
    detail: str
    seconds: float


@dataclass(frozen=True)
class Check:
    name: str
    module: str
    func: Callable[[], tuple[bool, str]]
    slow: bool = False

    def run(self) -> CheckResult:
        t0 = time.perf_counter()
        try:
            ok, detail = self.func()
        except Exception as exc:  # a crash is a failed invariant, reported rather than raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        return CheckResult(self.name, self.module, bool(ok), detail, time.perf_counter() - t0)


def _rng():
    return np.random.default_rng(2024)


# ----------------------------------------------------------------------------- lattice


def duality():
    lat = Lattice()
    err = max(abs(lattice.pairing(z, e) - (2 * math.pi if i == j else 0.0))
              for i, z in enumerate((lat.zeta1, lat.zeta2)) for j, e in enumerate((lat.eta1, lat.eta2)))
    return err < 1e-12, f"max error {err:.2e}"


def area_identity():
    worst = 0.0
    for lam in ((1, 1), (2, 1), (3, 3)):
        lat = make_lattice(lam)
        area = (np.conj(lat.v1) * lat.v2).imag
        worst = max(worst, abs(area - lat.mag_cell_area))
        if lat.mag_cell_area <= 0:
            return False, f"non-positive area for {lam}"
    return worst < 1e-12, f"max error {worst:.2e}"


def flux_consistency():
    worst = 0.0
    for lam in ((1, 1), (1, 2), (2, 3)):
        for p in (1, 2, 5):
            f = flux_spec(p, make_lattice(lam))
            worst = max(worst, abs(f.B * f.lattice.cell_area * f.q - 2 * math.pi * p))
    return worst < 1e-12, f"max error {worst:.2e}"


# ----------------------------------------------------------------------------- special functions


def theta_quasi_periodicity():
    rng = _rng()
    worst = 0.0
    for zeta in rng.uniform(-0.5, 0.5, 5) + 1j * rng.uniform(-0.4, 0.4, 5):
        for n in (1, 2):
            lhs = special_fn.theta1(zeta + n * OMEGA)
            rhs = (-1) ** n * np.exp(-1j * math.pi * n * n * OMEGA - 2j * math.pi * zeta * n) * special_fn.theta1(zeta)
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return worst < 1e-10, f"max relative error {worst:.2e}"


def legendre_relation():
    # eta_w2 is measured from the jump of zeta across v2, not taken from the parameters
    worst = 0.0
    z = 0.23 + 0.11j
    for lam in ((1, 1), (2, 1), (2, 2)):
        sp_ = special_fn.sigma_params(make_lattice(lam))
        eta2 = (special_fn.wzeta(z + sp_.v2, sp_) - special_fn.wzeta(z, sp_)) / 2
        worst = max(worst, abs(sp_.eta_w1 * sp_.v2 - eta2 * sp_.v1 - 1j * math.pi))
    return worst < 1e-10, f"max error {worst:.2e}"


def sigma_tilde_quasi_periodicity():
    worst = 0.0
    z = 0.4 + 0.1j
    for p, lam in ((1, (1, 1)), (2, (1, 1)), (1, (2, 1))):
        f = flux_spec(p, make_lattice(lam))
        sp_ = special_fn.sigma_params(f.lattice, f)
        for v, xi, S in ((sp_.v1, sp_.xi1, sp_.S1), (sp_.v2, sp_.xi2, sp_.S2)):
            ratio = special_fn.sigma_tilde(z + v, sp_) / special_fn.sigma_tilde(z, sp_)
            want = -np.exp((xi * z + S) / p)
            worst = max(worst, abs(ratio / want - 1))
    return worst < 1e-9, f"max relative error {worst:.2e}"


def sigma_bridge():
    lat = Lattice()
    sp_ = special_fn.sigma_params(lat)
    rng = _rng()
    s, t = rng.uniform(0.05, 0.95, 20), rng.uniform(0.05, 0.95, 20)
    z = lat.point(s, t)
    a = special_fn.wsigma(z, sp_)
    b = special_fn.sigma_product(z, sp_, radius=30)
    err = float(np.max(np.abs(a - b) / np.abs(a)))
    return err < 1e-8, f"max relative error {err:.2e}"


def wp_even_periodic():
    lat = Lattice()
    sp_ = special_fn.sigma_params(lat)
    rng = _rng()
    z = lat.point(rng.uniform(0.1, 0.9, 20), rng.uniform(0.1, 0.9, 20))
    w = special_fn.wp(z, sp_)
    worst = float(np.max(np.abs(w - special_fn.wp(-z, sp_)) / np.abs(w)))
    for v in lat.periods:
        worst = max(worst, float(np.max(np.abs(w - special_fn.wp(z + v, sp_)) / np.abs(w))))
    return worst < 1e-9, f"max relative error {worst:.2e}"


# ----------------------------------------------------------------------------- potentials


def tunneling_symmetries():
    rng = _rng()
    z = rng.uniform(-3, 3, 100) + 1j * rng.uniform(-3, 3, 100)
    lat = Lattice()
    worst = 0.0
    U, V = potentials.tunneling("U"), potentials.tunneling("V")
    for n1 in (-1, 0, 1):
        for n2 in (-1, 0, 1):
            a = n1 * lat.zeta1 + n2 * lat.zeta2
            ph = np.conj(OMEGA) ** (n1 + n2)
            worst = max(worst, np.max(np.abs(V(z + a) - ph * V(z))), np.max(np.abs(U(z + a) - ph * U(z))))
    worst = max(worst, np.max(np.abs(U(OMEGA * z) - OMEGA * U(z))), np.max(np.abs(V(OMEGA * z) - V(z))))
    return worst < 1e-12, f"max error {worst:.2e}"


def aper_periodicity():
    A = potentials.fig5_potential()
    lat = operators.periodic_cell(A)
    rng = _rng()
    z = rng.uniform(-3, 3, 50) + 1j * rng.uniform(-3, 3, 50)
    worst = max(float(np.max(np.abs(A(z + v) - A(z)))) for v in lat.periods)
    return worst < 1e-12, f"max error {worst:.2e} on cell {lat.lam}"


# ----------------------------------------------------------------------------- operators


def _small_fibers():
    A0 = potentials.MagneticPotential()
    pw = operators.plane_wave(5)
    yield "chiral/PW", operators.assemble_fiber("Chiral", 0, 0.7, 0.3 + 0.1j, A0, pw), 1e-10
    yield "antichiral/PW", operators.assemble_fiber("AntiChiral", 0.8, 0, 0.3 + 0.1j, A0, pw), 1e-10
    yield "full/PW", operators.assemble_fiber("Full", 0.5, 0.7, 0.3 + 0.1j, A0, pw), None
    f = flux_spec(1)
    fd = operators.finite_difference(32)
    Ab = potentials.MagneticPotential(f.B)
    yield "chiral/FD", operators.assemble_fiber("Chiral", 0, 0.3, 0.2j, Ab, fd), 1e-8


def hermiticity():
    worst = 0.0
    for _, op, _ in _small_fibers():
        H = op.dense()
        worst = max(worst, float(np.abs(H - H.conj().T).max()))
    return worst < 1e-12, f"max |H - H^*| {worst:.2e}"


def spectral_symmetry():
    msgs, ok = [], True
    for name, op, tol in _small_fibers():
        if tol is None:
            continue
        e = operators.eigenvalues(op)
        err = float(np.abs(e + e[::-1]).max())
        ok &= err < tol
        msgs.append(f"{name} {err:.1e}")
    return ok, ", ".join(msgs)


def fiber_covariance():
    f = flux_spec(1)
    A = potentials.MagneticPotential(f.B)
    basis = operators.landau_levels(16)
    k = 0.21 + 0.13j
    d1, d2 = f.lattice.mag_dual
    e0 = operators.eigenvalues(operators.assemble_fiber("Chiral", 0, 0.3, k, A, basis))
    e1 = operators.eigenvalues(operators.assemble_fiber("Chiral", 0, 0.3, k + d1 - d2, A, basis))
    err = float(np.abs(e0 - e1).max())
    return err < 1e-8, f"multiset distance {err:.2e}"


def free_dirac_oracle():
    A0 = potentials.MagneticPotential()
    k = 0.37 - 0.21j
    op = operators.assemble_fiber("DiracOnly", 0, 0, k, A0, operators.plane_wave(6))
    q = op.disc.momenta(0j) + k
    want = np.sort(np.concatenate([np.abs(q), -np.abs(q)]))
    err = float(np.abs(operators.eigenvalues(op) - want).max())
    return err < 1e-12, f"max error {err:.2e}"


# ----------------------------------------------------------------------------- zero modes


def zero_count_equals_flux():
    msgs, ok = [], True
    for p in (1, 2):
        kb = zero_modes.kernel_a(flux_spec(p), 0.3 + 0.2j, n=48)
        totals = [zero_modes.zero_locate(s)[1] for s in kb.states]
        ok &= all(t == p for t in totals)
        msgs.append(f"p={p}: {totals}")
    return ok, "; ".join(msgs)


def boundary_phases():
    worst = 0.0
    for p in (1, 2):
        kb = zero_modes.kernel_a(flux_spec(p), -0.2 + 0.4j, n=48)
        worst = max(worst, max(kb.boundary_errors))
    return worst < 1e-8, f"max boundary error {worst:.2e}"


def constraint_closure():
    worst = 0.0
    for p in (1, 2, 3):
        for lam in ((1, 1), (2, 1)):
            f = flux_spec(p, make_lattice(lam))
            for k in (0.0, 0.3 + 0.2j, -1.1j):
                for c in zero_modes.zero_configs(f, k, p + 1):
                    worst = max(worst, *c.constraint_residuals())
    return worst < 1e-10, f"max residual {worst:.2e}"


def fd_nullity(alpha: float, p: int, k: complex, n: int, rel: float = 1e-6) -> int:
    f = flux_spec(p)
    op = operators.assemble_fiber("Chiral", 0, alpha, k, potentials.MagneticPotential(f.B),
                                  operators.finite_difference(n))
    s = operators.smallest_singular(op.offdiag, 2 * p + 4)
    return int(np.sum(s < rel * operators.operator_scale(0, alpha)))


def nullity_equals_index():
    counts = {p: [fd_nullity(0.2, p, k, 64) for k in GENERIC_KS[:2]] for p in (1, 2)}
    ok = all(c == 2 * p for p, cs in counts.items() for c in cs)
    return ok, f"nullities {counts}"


# ----------------------------------------------------------------------------- magic


def bs_k_independence():
    a = np.sort_complex(np.round(operators.assemble_BS(0.5, 10).eigenvalues(), 12))
    b = np.sort_complex(np.round(operators.assemble_BS(0.31 + 0.17j, 10).eigenvalues(), 12))
    big_a = 1 / a[np.abs(a) > 1]
    big_b = 1 / b[np.abs(b) > 1]
    if len(big_a) != len(big_b):
        return False, f"different counts {len(big_a)} vs {len(big_b)}"
    err = _multiset_distance(big_a, big_b)
    return err < 1e-6, f"multiset distance of alphas with |alpha|<1: {err:.2e}"


def _multiset_distance(a, b) -> float:
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(np.subtract.outer(a, b))
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max()) if len(r) else 0.0


def aper_invariance():
    base = magic.magic_angles(1.0, 12, polish=False)
    shifted = magic.magic_angles(1.0, 12, A_per=potentials.fig5_potential(), polish=False)
    a = base.alphas()
    b = np.array([m.value for m in shifted.values])
    err = max(float(np.min(np.abs(a - x))) for x in b)
    err = max(err, max(float(np.min(np.abs(b - x))) for x in a))
    return err < 1e-6, f"largest drift {err:.2e}"


def _min_abs_energy(model, alpha0, alpha1, k, A, N=6):
    op = operators.assemble_fiber(model, alpha0, alpha1, k, A, operators.plane_wave(N, operators.periodic_cell(A)))
    return float(np.abs(operators.eigenvalues(op)).min())


def protected_zero_magic():
    A = potentials.fig5_potential()
    ks = spectra.brillouin_grid(12, operators.periodic_cell(A))
    worst = max(_min_abs_energy("Chiral", 0, MAGIC_ALPHA, k, A, 4) for k in ks)
    anti = max(_min_abs_energy("AntiChiral", 1.0, 0, k, A, 4) for k in ks)
    ok = worst < 1e-5 * operators.operator_scale(0, MAGIC_ALPHA) and anti > 1e-3
    return ok, f"chiral magic max_k min|E| {worst:.2e}; anti-chiral {anti:.2e}"


# ----------------------------------------------------------------------------- spectra


def negation_symmetry():
    bs = spectra.band_structure("Chiral", spectra.ModelParams(alpha1=0.6), [0.1, 0.3j, 0.5 + 0.2j],
                                operators.plane_wave(5))
    err = float(np.abs(bs.energies + bs.energies[:, ::-1]).max())
    return err < 1e-10, f"max |E_i + E_rev(i)| {err:.2e}"


def flat_band_count():
    msgs, ok = [], True
    for p in (1, 2):
        f = flux_spec(p)
        params = spectra.ModelParams(alpha1=0.2, A=potentials.MagneticPotential(f.B))
        bs = spectra.band_structure("Chiral", params, GENERIC_KS, operators.landau_levels(20))
        rep = spectra.flat_band_detect(bs, 1e-3)
        ok &= rep.count == 2 * p and rep.gap > 10 * max(rep.flatness, 1e-300)
        msgs.append(f"p={p}: count {rep.count}, gap {rep.gap:.3f}")
    return ok, "; ".join(msgs)


def band_touching():
    generic = [fd_nullity(MAGIC_ALPHA, 1, k, 96, rel=1e-4) for k in GENERIC_KS]
    touching = fd_nullity(MAGIC_ALPHA, 1, TOUCHING_K, 96, rel=1e-4)
    ok = all(g == 2 for g in generic) and touching == 3
    return ok, f"generic {generic}, at k={TOUCHING_K}: {touching}"


def histogram_convergence():
    errs = []
    for h in (0.01, 0.005):
        matches = spectra.match_landau_peaks(spectra.eigen_histogram(h))
        errs.append(max(m.error for m in matches))
    return errs[1] <= 0.5 * errs[0], f"max peak error h=0.01: {errs[0]:.4f}, h=0.005: {errs[1]:.4f}"


# ----------------------------------------------------------------------------- chern


def chern_integrality():
    f = flux_spec(1)
    out, ok = [], True
    for alpha in (0.0, 0.2):
        r = chern.chern_curvature(chern.build_projector_family("chiral", alpha, f, M=12, nmax=16))
        ok &= r.integral and r.value == -2
        out.append(f"alpha={alpha}: {r.raw_curvature_sum:.4f}")
    return ok, "; ".join(out)


def chern_resolution():
    f = flux_spec(1)
    vals = [chern.chern_curvature(chern.build_projector_family("chiral", 0.2, f, M=M, nmax=16)).value
            for M in (6, 12)]
    return vals[0] == vals[1], f"M=6: {vals[0]}, M=12: {vals[1]}"


def chern_additivity():
    f = flux_spec(1)
    single = chern.chern_curvature(chern.build_projector_family("lll", 0.0, f, M=12)).value
    pair = chern.chern_curvature(chern.build_projector_family("chiral", 0.0, f, M=12, nmax=8)).value
    return pair == 2 * single, f"component {single}, direct sum {pair}"


# ----------------------------------------------------------------------------- registry


CHECKS: list[Check] = [
    Check("dual basis pairing", "lattice", duality),
    Check("cell area orientation", "lattice", area_identity),
    Check("flux quantization", "lattice", flux_consistency),
    Check("theta quasi-periodicity", "special_fn", theta_quasi_periodicity),
    Check("Legendre relation", "special_fn", legendre_relation),
    Check("sigma theta bridge", "special_fn", sigma_bridge),
    Check("modified sigma quasi-periodicity", "special_fn", sigma_tilde_quasi_periodicity),
    Check("wp even and periodic", "special_fn", wp_even_periodic),
    Check("tunneling symmetries", "potentials", tunneling_symmetries),
    Check("periodic potential periodicity", "potentials", aper_periodicity),
    Check("fiber hermiticity", "operators", hermiticity),
    Check("chiral spectral symmetry", "operators", spectral_symmetry),
    Check("fiber covariance under dual shifts", "operators", fiber_covariance),
    Check("free Dirac plane-wave oracle", "operators", free_dirac_oracle),
    Check("zero count equals flux", "zero_modes", zero_count_equals_flux),
    Check("boundary phases of kernel states", "zero_modes", boundary_phases),
    Check("constraint closure", "zero_modes", constraint_closure),
    Check("nullity equals index", "zero_modes", nullity_equals_index, slow=True),
    Check("Birman-Schwinger k independence", "magic", bs_k_independence),
    Check("magic angles invariant under periodic fields", "magic", aper_invariance, slow=True),
    Check("protected zero at magic angle", "magic", protected_zero_magic, slow=True),
    Check("band negation symmetry", "spectra", negation_symmetry),
    Check("flat band count equals 2p", "spectra", flat_band_count),
    Check("band touching nullity", "spectra", band_touching, slow=True),
    Check("histogram peak convergence", "spectra", histogram_convergence, slow=True),
    Check("Chern integrality", "chern", chern_integrality, slow=True),
    Check("Chern resolution stability", "chern", chern_resolution, slow=True),
    Check("Chern additivity", "chern", chern_additivity, slow=True),
]


def run_checks(include_slow: bool = True, select: str | None = None) -> list[CheckResult]:
    chosen = [c for c in CHECKS if (include_slow or not c.slow) and (select is None or select in c.module)]
    return [c.run() for c in chosen]


__all__ = ["Check", "CheckResult", "CHECKS", "run_checks", "MAGIC_ALPHA", "TOUCHING_K"]
