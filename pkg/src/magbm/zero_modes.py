"""Exact magnetic zero modes, flat-band kernels and zero localization.

The kernel of a_k = 2 D_zbar - (B i / 2) z + k on the magnetic fiber space is spanned by

    u(z) = exp(-i k conj(z) / 2) exp(B (z^2 - |z|^2) / 4) exp(gamma1 z) prod_i sigma_tilde(z - z_i),

where the zeros z_i sum to a fixed Z_p and gamma1 is fixed by the boundary condition
u(z + v_j) = exp(-i phi_j(z)) u(z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .grid import GridFunction, GridSpec, boundary_phase, orthonormalize
from .lattice import OMEGA, FluxSpec, Lattice, flux_spec, pairing_array, special_points
from .operators import (
    TWIST,
    assemble_fiber,
    discretization,
    extend_samples,
    fd_annihilator,
    finite_difference,
    plane_wave,
)
from .potentials import MagneticPotential
from .special_fn import F_k, g_k, sigma_params, sigma_tilde, theta_pole_distance


class ZeroModeError(ValueError):
    pass


# ----------------------------------------------------------------------------- configurations


@dataclass(frozen=True)
class ZeroConfig:
    p: int
    zeros: tuple[complex, ...]
    gamma1: complex
    k: complex
    flux: FluxSpec

    def constraint_residuals(self) -> tuple[float, float]:
        """|gamma1 v_j - i k conj(v_j)/2 + i p pi - xi_j sum(z)/p| for j = 1, 2."""
        B, p = self.flux.B, self.p
        total = sum(self.zeros)
        out = []
        for v in self.flux.lattice.periods:
            xi = B / 2 * (np.conj(v) - v)
            out.append(abs(self.gamma1 * v - 0.5j * self.k * np.conj(v) + 1j * p * math.pi - xi * total / p))
        return tuple(out)


def zero_sum(flux: FluxSpec, k: complex) -> complex:
    l1, l2 = flux.lam
    p, B = flux.p, flux.B
    return (2j * math.pi * p / 3) * (l2 * OMEGA**2 - l1 * OMEGA) - 1j * k * p / B


def gamma1_for(flux: FluxSpec, k: complex) -> complex:
    l1, l2 = flux.lam
    return 0.5j * k + 1j * math.pi * flux.B * (l2 - l1) / 3


def _free_zero_sequence(lattice: Lattice):
    """Deterministic, well spread points of the magnetic cell (golden-ratio lattice rule)."""
    g = (math.sqrt(5) - 1) / 2
    j = 1
    while True:
        yield lattice.point((0.17 + j * g) % 1.0, (0.31 + j * g * g) % 1.0)
        j += 1


def zero_configs(flux: FluxSpec, k: complex, count: int | None = None) -> list[ZeroConfig]:
    """``count`` configurations {Z_p - (p-1) w, w, ..., w} with distinct w."""
    p = flux.p
    count = p if count is None else count
    Z = zero_sum(flux, k)
    g1 = gamma1_for(flux, k)
    if p == 1:
        return [ZeroConfig(1, (Z,), g1, complex(k), flux)] * min(count, 1)
    seq = _free_zero_sequence(flux.lattice)
    configs = []
    for _ in range(count):
        w = next(seq)
        configs.append(ZeroConfig(p, (Z - (p - 1) * w,) + (w,) * (p - 1), g1, complex(k), flux))
    return configs


def eval_zero_mode(config: ZeroConfig, z, params=None):
    """Analytic kernel element of a_k for the given zero configuration."""
    z = np.asarray(z, dtype=complex)
    params = params or sigma_params(config.flux.lattice, config.flux)
    B, k = config.flux.B, config.k
    log_pref = -0.5j * k * np.conj(z) + B * (z**2 - np.abs(z) ** 2) / 4 + config.gamma1 * z
    out = np.exp(log_pref)
    for zi in config.zeros:
        out = out * sigma_tilde(z - zi, params)
    return out


# ----------------------------------------------------------------------------- kernel bases


@dataclass
class KernelBasis:
    states: list[GridFunction]
    dim: int
    residuals: list[float]
    gram_min_sv: float
    tolerance: float
    boundary_errors: list[float] = field(default_factory=list)
    configs: list = field(default_factory=list)

    def certified(self) -> bool:
        return (
            all(r < self.tolerance for r in self.residuals)
            and (self.dim <= 1 or self.gram_min_sv > 1e-6)
        )

    def matrix(self) -> np.ndarray:
        """Columns are the flattened states scaled so that columns are l2-orthonormal."""
        w = math.sqrt(self.states[0].grid.cell_weight)
        return np.column_stack([s.vector() for s in self.states]) * w


def fd_residual(op, u: GridFunction) -> float:
    vec = u.vector()
    return float(np.linalg.norm(op @ vec) / np.linalg.norm(vec))


def boundary_error(config: ZeroConfig, grid: GridSpec, params=None) -> float:
    """max_j sup |u(z + v_j) - exp(-i phi_j(z)) u(z)| / sup|u| from the analytic formula."""
    z = grid.points()
    u = eval_zero_mode(config, z, params)
    scale = np.max(np.abs(u))
    err = 0.0
    for v in grid.lattice.periods:
        shifted = eval_zero_mode(config, z + v, params)
        expected = np.exp(-1j * boundary_phase(config.flux.B, v, z)) * u
        err = max(err, float(np.max(np.abs(shifted - expected)) / scale))
    return err


def kernel_a(flux: FluxSpec, k: complex, n: int = 96, offset: complex = 0j,
             tol: float = 1e-6, order: int = 6) -> KernelBasis:
    """Orthonormal basis of ker(a_k) on the component with momentum offset ``offset``.

    A twisted component is handled by exp(i <z, s>) ker(a_{k+s}).
    """
    if flux.B <= 0:
        raise ZeroModeError("kernel_a needs a positive field; use kernel_a_negativeB")
    grid = GridSpec.square(flux.lattice, n)
    z = grid.points()
    params = sigma_params(flux.lattice, flux)
    kk = k + offset
    twist = np.exp(1j * pairing_array(z, offset)) if offset != 0 else 1.0
    op, _ = fd_annihilator(flux, k, n, order, offset)
    for attempt in range(4):
        configs = zero_configs(flux, kk, flux.p + attempt)[attempt:]
        raw = [GridFunction(grid, twist * eval_zero_mode(c, z, params), flux.B, (offset,)) for c in configs]
        raw = [r.normalized() for r in raw]
        states, gram = orthonormalize(raw)
        if flux.p == 1 or gram > 1e-6:
            break
    else:
        raise ZeroModeError("could not draw linearly independent zero configurations")
    residuals = [fd_residual(op, s) for s in raw]
    berr = [boundary_error(c, grid, params) for c in configs]
    return KernelBasis(states, len(states), residuals, gram, tol, berr, configs)


def negative_field_operator(flux: FluxSpec, k: complex, n: int, order: int = 6):
    """2 D_z + conj(A) + conj(k) on functions with the boundary condition of field -B."""
    disc = discretization(finite_difference(n, flux.lattice, order, 0.0), MagneticPotential(-flux.B))
    return disc.derivative(k, 0j).conj().T.tocsr()


def reflect_conjugate(u: GridFunction) -> GridFunction:
    """(Q u)(z) = conj(u(-z)); the result carries the opposite field."""
    n1, n2 = u.grid.shape
    i1 = (-np.arange(n1))[:, None] * np.ones(n2, dtype=int)[None, :]
    i2 = np.ones(n1, dtype=int)[:, None] * (-np.arange(n2))[None, :]
    vals = extend_samples(u, i1, i2)
    return GridFunction(u.grid, np.conj(vals), -u.B, tuple(-np.conj(s) for s in u.offsets), dict(u.meta))


def kernel_a_negativeB(flux: FluxSpec, k: complex, n: int = 96, tol: float = 1e-6) -> KernelBasis:
    base = kernel_a(flux, k, n, tol=tol)
    op = negative_field_operator(flux, k, n)
    states = [reflect_conjugate(s) for s in base.states]
    residuals = [fd_residual(op, s) for s in states]
    return KernelBasis(states, base.dim, residuals, base.gram_min_sv, tol, base.boundary_errors,
                       base.configs)


# ----------------------------------------------------------------------------- zero-field seeds


class ContinuationError(RuntimeError):
    pass


@dataclass
class PlaneWaveSpinor:
    """Two-component field sum_m c_m exp(i <z, q_m>) on offsets (i, 0), lattice lam = (1, 1)."""

    coeffs: np.ndarray
    momenta: tuple[np.ndarray, np.ndarray]

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        m = len(self.momenta[0])
        out = []
        for c, (q, block) in enumerate(zip(self.momenta, (self.coeffs[:m], self.coeffs[m:]))):
            keep = np.abs(block) > 1e-15 * np.max(np.abs(self.coeffs))
            phases = np.exp(1j * pairing_array(z[..., None], q[keep]))
            out.append(phases @ block[keep])
        return np.stack(out)

    def on_grid(self, grid: GridSpec, B: float = 0.0) -> GridFunction:
        return GridFunction(grid, self(grid.points()), B, (TWIST, 0j))


@dataclass
class SeedPair:
    u1: PlaneWaveSpinor
    u2: PlaneWaveSpinor
    alpha: float
    residuals: tuple[float, float]
    path: list[float]
    generic_sv: list[float]
    crossings: list[float]


def _smallest_right_vector(D: np.ndarray):
    _, s, vh = sla.svd(D, check_finite=False)
    return s[::-1], vh[-1].conj()


def continue_seeds(alpha_target: float, steps: int | None = None, N: int = 8,
                   generic_k: complex = 0.31 + 0.17j, flag_below: float = 1e-4,
                   strict: bool = False) -> SeedPair:
    """Track u1 in ker(D_c(alpha) + k0) and u2 in ker(D_c(alpha)) from alpha = 0.

    Each step takes the smallest right singular vector in the plane-wave basis, phase
    aligned with the previous one. A dip of the smallest singular value of D_c + k at a
    generic k signals a magic angle on the path and is recorded (or raised if ``strict``).
    """
    min_steps = math.ceil(abs(alpha_target) / 0.05)
    steps = min_steps if steps is None else steps
    if steps < min_steps:
        raise ContinuationError(f"at least {min_steps} steps are needed to reach {alpha_target}")
    basis = plane_wave(N)
    k0 = special_points().k0
    A = MagneticPotential()
    prev = [None, None]
    path, generic, crossings = [], [], []
    alphas = np.linspace(0.0, alpha_target, steps + 1) if steps else np.array([alpha_target])
    residuals = (0.0, 0.0)
    for alpha in alphas:
        vecs, res = [], []
        for slot, k in enumerate((k0, 0j)):
            D = assemble_fiber("Chiral", 0, alpha, k, A, basis).offdiag.toarray()
            s, v = _smallest_right_vector(D)
            if prev[slot] is not None:
                ov = np.vdot(prev[slot], v)
                v = v * (np.conj(ov) / abs(ov) if abs(ov) > 0 else 1.0)
            vecs.append(v)
            res.append(float(np.linalg.norm(D @ v)))
        prev = vecs
        residuals = tuple(res)
        Dg = assemble_fiber("Chiral", 0, alpha, generic_k, A, basis).offdiag.toarray()
        smin = float(sla.svdvals(Dg, check_finite=False)[-1])
        path.append(float(alpha))
        generic.append(smin)
        if smin < flag_below:
            crossings.append(float(alpha))
            if strict:
                raise ContinuationError(f"kernel dimension jump near alpha = {alpha:.6f}")
    disc = discretization(basis, A)
    momenta = (disc.momenta(TWIST), disc.momenta(0j))
    return SeedPair(PlaneWaveSpinor(prev[0], momenta), PlaneWaveSpinor(prev[1], momenta),
                    float(alpha_target), residuals, path, generic, crossings)


def exact_seeds(grid: GridSpec) -> tuple[GridFunction, GridFunction]:
    """alpha = 0 seeds: u1 = exp(-i <z, k0>) (1, 0), u2 = (0, 1)."""
    z = grid.points()
    k0 = special_points().k0
    one = np.ones_like(z)
    u1 = GridFunction(grid, np.stack([np.exp(-1j * pairing_array(z, k0)), 0 * one]), 0.0, (TWIST, 0j))
    u2 = GridFunction(grid, np.stack([0 * one, one]), 0.0, (TWIST, 0j))
    return u1, u2


def chiral_fd_operator(alpha1: float, flux: FluxSpec, k: complex, n: int, wilson: float = 0.0):
    fib = assemble_fiber("Chiral", 0, alpha1, k, MagneticPotential(flux.B),
                         finite_difference(n, flux.lattice, 4, wilson))
    return fib.offdiag.tocsr()


def flatband_kernel(alpha1: float, flux: FluxSpec, k: complex, seeds: SeedPair | None = None,
                    n: int = 96, tol: float = 1e-4) -> KernelBasis:
    """(u1 (x) ker a_{k-k0}) + (u2 (x) ker a_k): 2p states of ker(D_c(alpha1, B) + k)."""
    grid = GridSpec.square(flux.lattice, n)
    if seeds is None:
        seeds = continue_seeds(alpha1)
    k0 = special_points().k0
    u1 = seeds.u1(grid.points())
    u2 = seeds.u2(grid.points())
    raw = []
    for spinor, kk in ((u1, k - k0), (u2, k)):
        for w in kernel_a(flux, kk, n).states:
            raw.append(GridFunction(grid, spinor * w.samples[0][None], flux.B, (TWIST, 0j)).normalized())
    states, gram = orthonormalize(raw)
    op = chiral_fd_operator(alpha1, flux, k, n)
    residuals = [fd_residual(op, s) for s in raw]
    return KernelBasis(states, len(states), residuals, gram, tol)


# ----------------------------------------------------------------------------- magic-angle translates


def spectral_chiral_residual(u: GridFunction, alpha1: float, k: complex) -> float:
    """||(D_c(alpha1, 0) + k) u|| / ||u|| with spectral derivatives (zero field only)."""
    grid = u.grid
    n1, n2 = grid.shape
    z = grid.points()
    lat = grid.lattice
    from .potentials import eval_modes, tunneling_momenta

    out = np.empty_like(u.samples)
    for c, s in enumerate(u.offsets):
        periodic = u.samples[c] * np.exp(-1j * pairing_array(z, s))
        coef = np.fft.fft2(periodic)
        m1 = np.fft.fftfreq(n1, 1 / n1)[:, None]
        m2 = np.fft.fftfreq(n2, 1 / n2)[None, :]
        eta1, eta2 = lat.mag_dual
        q = s + m1 * eta1 + m2 * eta2
        out[c] = np.fft.ifft2(coef * (q + k)) * np.exp(1j * pairing_array(z, s))
    U = eval_modes(tunneling_momenta("U"), z)
    Um = eval_modes(tunneling_momenta("Uminus"), z)
    out[0] += alpha1 * U * u.samples[1]
    out[1] += alpha1 * Um * u.samples[0]
    return float(np.linalg.norm(out) / np.linalg.norm(u.samples))


def _pole_safe(func, z, pole_mask, eps: float = 1e-6):
    """Evaluate func, replacing grid points on a removable singularity by the symmetric limit."""
    vals = np.array(func(np.where(pole_mask, z + 10 * eps, z)))
    if np.any(pole_mask):
        zp = z[pole_mask]
        acc = 0
        for d in (eps, -eps, 1j * eps, -1j * eps):
            acc = acc + np.asarray(func(zp + d))
        vals[..., pole_mask] = acc / 4
    return vals


def up_translates(u0: PlaneWaveSpinor, flux: FluxSpec, n: int = 48) -> tuple[KernelBasis, list]:
    """u_p(z) = g_p(z + z_S) u0(z) over p in Gamma*_mag / Gamma*, with their L_a eigenphases."""
    lat = flux.lattice
    grid = GridSpec.square(lat, n)
    z = grid.points()
    zS = special_points(lat).zS
    mask = theta_pole_distance(z + zS) < 1e-8
    eta1, eta2 = lat.mag_dual
    states, labels = [], []
    for p1 in range(lat.lam[0]):
        for p2 in range(lat.lam[1]):
            pmom = p1 * eta1 + p2 * eta2
            vals = _pole_safe(lambda w: g_k(w + zS, pmom, check=False) * u0(w), z, mask)
            states.append(GridFunction(grid, vals, 0.0, (TWIST, 0j)).normalized())
            labels.append((p1, p2))
    phases = [moire_eigenphases(s) for s in states]
    ortho, gram = orthonormalize(states)
    return KernelBasis(states, len(states), [0.0] * len(states), gram, 1e-6), list(zip(labels, phases))


def moire_eigenphases(u: GridFunction) -> tuple[complex, complex]:
    """Eigenvalues of the moire translations L_a u = diag(omega^{a1+a2}, 1) u(. + a), a = zeta_1, zeta_2."""
    lat = u.grid.lattice
    n1, n2 = u.grid.shape
    out = []
    for axis in (0, 1):
        d = n1 // lat.lam[0] if axis == 0 else n2 // lat.lam[1]
        I1, I2 = np.meshgrid(np.arange(n1) + (d if axis == 0 else 0),
                             np.arange(n2) + (d if axis == 1 else 0), indexing="ij")
        shifted = _extend_plain(u, I1, I2)
        shifted[0] *= OMEGA
        out.append(complex(np.vdot(u.samples, shifted) / np.vdot(u.samples, u.samples)))
    return tuple(out)


def _extend_plain(u: GridFunction, I1, I2):
    return extend_samples(u, I1, I2)


def vk_from_u0(u0: PlaneWaveSpinor, k: complex, grid: GridSpec) -> GridFunction:
    """v_k(z) = F_k(z + z_S) u0(z), an element of ker(D_c(alpha, 0) + k) at a magic alpha."""
    z = grid.points()
    zS = special_points(grid.lattice).zS
    mask = theta_pole_distance(z + zS) < 1e-8
    vals = _pole_safe(lambda w: F_k(w + zS, k, check=False) * u0(w), z, mask)
    return GridFunction(grid, vals, 0.0, (TWIST, 0j))


# ----------------------------------------------------------------------------- zero localization


@dataclass(frozen=True)
class LocatedZero:
    position: complex
    multiplicity: int


def _plaquette_windings(vals: np.ndarray) -> np.ndarray:
    """Winding of the phase around each plaquette (i, j) -> (i+1, j) -> (i+1, j+1) -> (i, j+1)."""
    c00 = vals[:-1, :-1]
    c10 = vals[1:, :-1]
    c11 = vals[1:, 1:]
    c01 = vals[:-1, 1:]
    total = (np.angle(c10 / c00) + np.angle(c11 / c10) + np.angle(c01 / c11) + np.angle(c00 / c01))
    return np.rint(total / (2 * np.pi)).astype(int)


def zero_locate(u: GridFunction, component: int = 0) -> tuple[list[LocatedZero], int]:
    """Zeros of one component from plaquette winding numbers.

    Returns the located zeros (positions refined by a local affine fit u ~ c0 + c1 dz + c2 dzbar)
    and the total winding over the cell. A zero sitting exactly on a grid node is measured by
    the winding around its ring of eight neighbours.
    """
    n1, n2 = u.grid.shape
    I1, I2 = np.meshgrid(np.arange(-1, n1 + 2), np.arange(-1, n2 + 2), indexing="ij")
    vals = extend_samples(u, I1, I2)[component]
    z = u.grid.lattice.point(I1 / n1, I2 / n2)
    scale = np.max(np.abs(vals))
    on_node = np.abs(vals) < 1e-12 * scale
    safe = np.where(on_node, 1.0, vals)
    # plaquettes with lower-left corner (i, j), i, j in the cell: array offset 1
    wind = _plaquette_windings(safe[1:n1 + 2, 1:n2 + 2])
    touched = (on_node[1:n1 + 1, 1:n2 + 1] | on_node[2:n1 + 2, 1:n2 + 1]
               | on_node[2:n1 + 2, 2:n2 + 2] | on_node[1:n1 + 1, 2:n2 + 2])
    wind = np.where(touched, 0, wind)
    zeros = []
    for i, j in zip(*np.nonzero(wind)):
        a, b = i + 1, j + 1
        corners = [(a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1)]
        zc = np.array([z[x, y] for x, y in corners])
        fc = np.array([vals[x, y] for x, y in corners])
        center = zc.mean()
        dz = zc - center
        M = np.column_stack([np.ones(4), dz, np.conj(dz)])
        c0, c1, c2 = np.linalg.lstsq(M, fc, rcond=None)[0]
        # c0 + c1 d + c2 conj(d) = 0 as a real 2x2 system in (Re d, Im d)
        R = np.array([[c1.real + c2.real, -c1.imag + c2.imag], [c1.imag + c2.imag, c1.real - c2.real]])
        try:
            d = np.linalg.solve(R, -np.array([c0.real, c0.imag]))
            pos = center + d[0] + 1j * d[1]
        except np.linalg.LinAlgError:
            pos = center
        zeros.append(LocatedZero(complex(pos), int(wind[i, j])))
    total = int(wind.sum())
    ring = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)]
    for i, j in zip(*np.nonzero(on_node[1:n1 + 1, 1:n2 + 1])):
        a, b = i + 1, j + 1
        loop = [vals[a + da, b + db] for da, db in ring]
        if any(abs(x) < 1e-12 * scale for x in loop):
            raise ZeroModeError("zeros on neighbouring grid nodes cannot be separated")
        turn = sum(np.angle(loop[(m + 1) % 8] / loop[m]) for m in range(8))
        mult = int(np.rint(turn / (2 * np.pi)))
        zeros.append(LocatedZero(complex(z[a, b]), mult))
        total += mult
    return zeros, total
