"""Bloch-Floquet fiber operators in a plane-wave and a finite-difference backend.

Every fiber operator is assembled from two kinds of blocks acting between spinor
components, each component carrying a momentum offset ``s`` that encodes its Floquet
twist u(z + v_j) = exp(i <v_j, s>) u(z):

* the fiber derivative a_k = 2 D_zbar - A(z) + k and its adjoint,
* multiplication by a trigonometric potential sum_p w_p exp(i <z, p>).

With D = -i d, one has 2 D_zbar exp(i <z, q>) = q exp(i <z, q>), so the plane-wave
backend is exact on the derivative terms. The finite-difference backend samples the
magnetic cell and closes the stencils with magnetic boundary phases, which allows a
constant field in the symmetric gauge A = (B i / 2) z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridFunction, GridSpec, boundary_phase
from .lattice import OMEGA, FluxSpec, Lattice, pairing_array
from .potentials import MagneticPotential, check_periodic, tunneling_momenta

TWIST = 1j  # offset of the omega-bar twisted components (equal to -k0)


class Backend(str, Enum):
    PLANE_WAVE = "PlaneWave"
    FINITE_DIFFERENCE = "FiniteDifference"
    LANDAU_LEVEL = "LandauLevel"


class Model(str, Enum):
    CHIRAL = "Chiral"
    ANTICHIRAL = "AntiChiral"
    FULL = "Full"
    DIRAC_ONLY = "DiracOnly"


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    """Truncation data.

    ``N`` is the momentum radius (plane waves), the grid side per moire period (finite
    differences) or the highest Landau level of the domain (Landau levels). ``wilson`` scales
    the doubler-suppression term of the finite-difference derivative; ``quad_n`` is the
    quadrature grid side used for lowest-level overlaps. A positive ``cutoff`` further
    restricts plane waves to the disk |q| <= cutoff.
    """

    backend: Backend
    N: int
    lattice: Lattice = Lattice()
    stencil_order: int = 4
    wilson: float = 4.0
    quad_n: int = 48
    cutoff: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "backend", Backend(self.backend))
        if self.backend is Backend.PLANE_WAVE and self.N < 4:
            raise AssemblyError("plane-wave truncation needs N >= 4")
        if self.backend is Backend.FINITE_DIFFERENCE:
            if self.N < 32 or self.N % 4:
                raise AssemblyError("finite-difference grid needs n >= 32 divisible by 4")
            if self.stencil_order not in (2, 4, 6, 8):
                raise AssemblyError("stencil order must be 2, 4, 6 or 8")
        if self.backend is Backend.LANDAU_LEVEL and self.N < 2:
            raise AssemblyError("Landau-level truncation needs at least two levels")


def plane_wave(N: int, lattice: Lattice = Lattice(), cutoff: float = 0.0) -> BasisSpec:
    return BasisSpec(Backend.PLANE_WAVE, N, lattice, cutoff=cutoff)


def finite_difference(n: int = 96, lattice: Lattice = Lattice(), order: int = 4,
                      wilson: float = 4.0) -> BasisSpec:
    return BasisSpec(Backend.FINITE_DIFFERENCE, n, lattice, order, wilson)


def landau_levels(nmax: int = 40, lattice: Lattice = Lattice(), quad_n: int = 48) -> BasisSpec:
    return BasisSpec(Backend.LANDAU_LEVEL, nmax, lattice, quad_n=quad_n)


def model_offsets(model: Model) -> tuple[tuple[complex, ...], tuple[complex, ...]]:
    """Momentum offsets of (domain, range) components of the off-diagonal block D.

    For the full model both tuples hold the four layer/sublattice components.
    """
    model = Model(model)
    if model is Model.CHIRAL:
        return (TWIST, 0j), (TWIST, 0j)
    if model is Model.ANTICHIRAL:
        return (0j, TWIST), (TWIST, 0j)
    if model is Model.DIRAC_ONLY:
        return (0j,), (0j,)
    full = (TWIST, TWIST, 0j, 0j)
    return full, full


# ----------------------------------------------------------------------------- backends


def _integer_coords(lattice: Lattice, p: complex, what: str) -> tuple[int, int]:
    x = [pairing_array(v, p) / (2 * math.pi) for v in lattice.periods]
    r = [int(round(float(t))) for t in x]
    if max(abs(x[0] - r[0]), abs(x[1] - r[1])) > 1e-8:
        raise AssemblyError(f"{what} {p} is not a dual vector of the cell {lattice.lam}")
    return r[0], r[1]


class PlaneWaveDisc:
    """Plane waves s + n1 eta1/lam1 + n2 eta2/lam2, restricted to the coset classes reachable
    from the origin through the periodic vector-potential momenta."""

    def __init__(self, basis: BasisSpec, A: MagneticPotential):
        if A.B != 0:
            raise AssemblyError("the plane-wave backend cannot carry a constant magnetic field")
        self.basis = basis
        self.lattice = basis.lattice
        self.A = A
        lam = self.lattice.lam
        gens = [_integer_coords(self.lattice, p, "vector-potential momentum") for p in A.momenta()]
        residues = {(0, 0)}
        frontier = [(0, 0)]
        while frontier:
            r = frontier.pop()
            for g in gens:
                t = ((r[0] + g[0]) % lam[0], (r[1] + g[1]) % lam[1])
                if t not in residues:
                    residues.add(t)
                    frontier.append(t)
        self.residues = sorted(residues)
        N = basis.N
        m = np.arange(-N, N + 1)
        M1, M2 = np.meshgrid(m, m, indexing="ij")
        n1, n2 = [], []
        for r in self.residues:
            n1.append(lam[0] * M1.ravel() + r[0])
            n2.append(lam[1] * M2.ravel() + r[1])
        self.n1 = np.concatenate(n1)
        self.n2 = np.concatenate(n2)
        d1, d2 = self.lattice.mag_dual
        if basis.cutoff > 0:
            inside = np.abs(self.n1 * d1 + self.n2 * d2) <= basis.cutoff
            self.n1, self.n2 = self.n1[inside], self.n2[inside]
        self.size = self.n1.size
        self.lo1, self.lo2 = self.n1.min(), self.n2.min()
        self.lookup = -np.ones((self.n1.max() - self.lo1 + 1, self.n2.max() - self.lo2 + 1), dtype=int)
        self.lookup[self.n1 - self.lo1, self.n2 - self.lo2] = np.arange(self.size)
        self.dual_points = self.n1 * d1 + self.n2 * d2

    def momenta(self, s: complex) -> np.ndarray:
        return s + self.dual_points

    def _shift(self, delta: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        t1 = self.n1 + delta[0] - self.lo1
        t2 = self.n2 + delta[1] - self.lo2
        ok = (t1 >= 0) & (t1 < self.lookup.shape[0]) & (t2 >= 0) & (t2 < self.lookup.shape[1])
        src = np.nonzero(ok)[0]
        dst = self.lookup[t1[ok], t2[ok]]
        keep = dst >= 0
        return src[keep], dst[keep]

    def multiply(self, modes, s_from: complex, s_to: complex) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for p, w in modes:
            if w == 0:
                continue
            delta = _integer_coords(self.lattice, p + s_from - s_to, "coupling momentum")
            src, dst = self._shift(delta)
            rows.append(dst)
            cols.append(src)
            vals.append(np.full(src.size, w, dtype=complex))
        if not rows:
            return sp.csr_matrix((self.size, self.size), dtype=complex)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        )

    def derivative(self, k: complex, s: complex, scale: float = 1.0) -> sp.csr_matrix:
        """scale * 2 D_zbar - A_per + scale * k on the component with offset s."""
        diag = sp.diags(scale * (self.momenta(s) + k))
        return (diag - self.multiply(self.A.per_coeffs, s, s)).tocsr()


def _stencil(order: int) -> dict[int, float]:
    """Central first-derivative weights on unit spacing."""
    table = {
        2: {1: 1 / 2},
        4: {1: 2 / 3, 2: -1 / 12},
        6: {1: 3 / 4, 2: -3 / 20, 3: 1 / 60},
        8: {1: 4 / 5, 2: -1 / 5, 3: 4 / 105, 4: -1 / 280},
    }[order]
    out = {}
    for m, c in table.items():
        out[m] = c
        out[-m] = -c
    return out


class FiniteDifferenceDisc:
    """Uniform grid on the magnetic cell with magnetically twisted periodic closure."""

    def __init__(self, basis: BasisSpec, A: MagneticPotential):
        self.basis = basis
        self.lattice = basis.lattice
        self.A = A
        self.B = A.B
        check_periodic(A.periodic, self.lattice)
        self.grid = GridSpec.square(self.lattice, basis.N)
        self.size = self.grid.size
        self.z = self.grid.points()
        self._cache: dict = {}

    def shift(self, axis: int, m: int, s: complex) -> sp.csr_matrix:
        """(S u)(z) = u(z + m h_axis) with the fiber boundary condition closing the cell."""
        key = ("shift", axis, m, s)
        if key in self._cache:
            return self._cache[key]
        n1, n2 = self.grid.shape
        n = (n1, n2)[axis]
        v = self.lattice.periods[axis]
        twist = np.exp(1j * pairing_array(v, s))
        idx = np.arange(self.size).reshape(n1, n2)
        a = np.arange(n)
        target = a + m
        wrap = np.where(target >= n, 1, np.where(target < 0, -1, 0))
        target = target - wrap * n
        if axis == 0:
            rows = idx
            cols = idx[target, :]
            W = np.broadcast_to(wrap[:, None], (n1, n2))
        else:
            rows = idx
            cols = idx[:, target]
            W = np.broadcast_to(wrap[None, :], (n1, n2))
        zsrc = self.z.reshape(-1)[cols.ravel()].reshape(n1, n2)
        ph = np.ones((n1, n2), dtype=complex)
        fwd = W == 1
        bwd = W == -1
        # u(w + v) = twist e^{-i phi_v(w)} u(w);  u(w - v) = e^{i phi_v(w - v)} u(w) / twist
        ph[fwd] = twist * np.exp(-1j * boundary_phase(self.B, v, zsrc[fwd]))
        ph[bwd] = np.exp(1j * boundary_phase(self.B, v, zsrc[bwd] - v)) / twist
        mat = sp.csr_matrix((ph.ravel(), (rows.ravel(), cols.ravel())), shape=(self.size, self.size))
        self._cache[key] = mat
        return mat

    def partial(self, axis: int, s: complex) -> sp.csr_matrix:
        """d/ds_axis in reduced coordinates."""
        key = ("partial", axis, s)
        if key not in self._cache:
            n = self.grid.shape[axis]
            mat = sum(c * n * self.shift(axis, m, s) for m, c in _stencil(self.basis.stencil_order).items())
            self._cache[key] = mat.tocsr()
        return self._cache[key]

    def wilson_part(self, s: complex) -> sp.csr_matrix:
        """Doubler suppression r/h * sum_axes (-delta^2/4)^3: O(h^5) on smooth fields, r/h at the grid edge."""
        key = ("wilson", s)
        if key not in self._cache:
            r = self.basis.wilson
            total = sp.csr_matrix((self.size, self.size), dtype=complex)
            if r:
                eye = sp.identity(self.size, format="csr")
                for axis in (0, 1):
                    n = self.grid.shape[axis]
                    h = abs(self.lattice.periods[axis]) / n
                    second = (2 * eye - self.shift(axis, 1, s) - self.shift(axis, -1, s)) / 4
                    total = total + (r / h) * (second @ second @ second)
            self._cache[key] = total.tocsr()
        return self._cache[key]

    def zbar_part(self, s: complex) -> sp.csr_matrix:
        """2 D_zbar = -(v2 d_s1 - v1 d_s2) / area."""
        key = ("zbar", s)
        if key not in self._cache:
            v1, v2 = self.lattice.periods
            area = self.lattice.mag_cell_area
            self._cache[key] = (-(v2 * self.partial(0, s) - v1 * self.partial(1, s)) / area).tocsr()
        return self._cache[key]

    def potential_values(self) -> np.ndarray:
        return (0.5j * self.B * self.z + _eval_modes(self.A.per_coeffs, self.z)).reshape(-1)

    def multiply(self, modes, s_from: complex, s_to: complex) -> sp.csr_matrix:
        for p, w in modes:
            if w != 0:
                _integer_coords(self.lattice, p + s_from - s_to, "coupling momentum")
        return sp.diags(_eval_modes(modes, self.z).reshape(-1)).tocsr()

    def derivative(self, k: complex, s: complex, scale: float = 1.0) -> sp.csr_matrix:
        key = ("deriv", s)
        if key not in self._cache:
            self._cache[key] = (
                self.zbar_part(s) + self.wilson_part(s) - sp.diags(self.potential_values())
            ).tocsr()
        base = self._cache[key]
        if scale != 1.0:
            base = base + (scale - 1.0) * self.zbar_part(s)
        return (base + scale * k * sp.identity(self.size, format="csr")).tocsr()


def _eval_modes(modes, z):
    total = np.zeros(np.shape(z), dtype=complex)
    for p, w in modes:
        total += w * np.exp(1j * pairing_array(z, p))
    return total


_DISC_CACHE: dict = {}


def discretization(basis: BasisSpec, A: MagneticPotential):
    """Backend object for the basis; cached so repeated k sweeps reuse stencils and lookups."""
    key = (basis, A)
    disc = _DISC_CACHE.get(key)
    if disc is None:
        if basis.backend is Backend.PLANE_WAVE:
            disc = PlaneWaveDisc(basis, A)
        else:
            disc = FiniteDifferenceDisc(basis, A)
        if len(_DISC_CACHE) > 16:
            _DISC_CACHE.clear()
        _DISC_CACHE[key] = disc
    return disc


# ----------------------------------------------------------------------------- fiber operators


def _conj_modes(modes):
    return [(-p, np.conj(w)) for p, w in modes]


def _scaled(modes, c):
    return [(p, c * w) for p, w in modes]


class FiberOperator:
    """Fiber Hamiltonian at quasi-momentum ``k``.

    ``matrix`` is stored sparse; ``dense()`` gives the full array. For the chiral,
    anti-chiral and Dirac models the Hamiltonian is [[0, D^H], [D, 0]] and ``offdiag``
    holds D, mapping the domain components to the range components.
    """

    def __init__(self, matrix, k, model, basis, hermitian, offdiag=None, offsets=None, disc=None):
        self.matrix = matrix
        self.k = complex(k)
        self.model = Model(model)
        self.basis = basis
        self.hermitian = hermitian
        self.offdiag = offdiag
        self.offsets = offsets
        self.disc = disc

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    @property
    def ncomp(self) -> int:
        return self.shape[0] // self.disc.size


def chiral_block(alpha1: float, k: complex, disc, theta_scale: float = 1.0):
    """D_c(alpha1) + k = [[a_k, alpha1 U], [alpha1 U_-, a_k]] on offsets (i, 0)."""
    U = tunneling_momenta("U")
    Um = tunneling_momenta("Uminus")
    a1 = disc.derivative(k, TWIST, theta_scale)
    a2 = disc.derivative(k, 0j, theta_scale)
    return sp.bmat(
        [[a1, alpha1 * disc.multiply(U, 0j, TWIST)], [alpha1 * disc.multiply(Um, TWIST, 0j), a2]],
        format="csc",
    )


def antichiral_block(alpha0: float, k: complex, disc, theta: float = 0.0):
    """[[alpha0 V, e^{i theta/2} a_k], [e^{i theta/2} a_k^*, alpha0 conj(V)]], domain offsets (0, i)."""
    V = tunneling_momenta("V")
    ph = np.exp(0.5j * theta)
    a = disc.derivative(k, TWIST)
    astar = disc.derivative(k, 0j).conj().T
    return sp.bmat(
        [
            [alpha0 * disc.multiply(V, 0j, TWIST), ph * a],
            [ph * astar, alpha0 * disc.multiply(_conj_modes(V), TWIST, 0j)],
        ],
        format="csc",
    )


def full_hamiltonian(alpha0: float, alpha1: float, k: complex, disc):
    """[[H_D, T], [T^*, H_D]] on (psi1A, psi1B, psi2A, psi2B) with layer-one offsets i."""
    V = tunneling_momenta("V")
    U = tunneling_momenta("U")
    Um = tunneling_momenta("Uminus")
    a1 = disc.derivative(k, TWIST)
    a2 = disc.derivative(k, 0j)
    T = sp.bmat(
        [
            [alpha0 * disc.multiply(V, 0j, TWIST), alpha1 * disc.multiply(_conj_modes(Um), 0j, TWIST)],
            [alpha1 * disc.multiply(U, 0j, TWIST), alpha0 * disc.multiply(V, 0j, TWIST)],
        ]
    )
    HD1 = sp.bmat([[None, a1.conj().T], [a1, None]])
    HD2 = sp.bmat([[None, a2.conj().T], [a2, None]])
    return sp.bmat([[HD1, T], [T.conj().T, HD2]], format="csr")


def assemble_fiber(
    model,
    alpha0: float,
    alpha1: float,
    k: complex,
    A: MagneticPotential,
    basis: BasisSpec,
    theta: float = 0.0,
    tb_scale: float = 1.0,
) -> FiberOperator:
    """Hermitian fiber Hamiltonian of the requested model.

    ``tb_scale`` multiplies the derivative (and k) in the chiral block, giving the
    tight-binding scaled operator 2 theta D_zbar + U-terms used for squeezing.
    """
    model = Model(model)
    if basis.backend is Backend.PLANE_WAVE and A.B != 0:
        raise AssemblyError("plane-wave backend requires B = 0")
    if basis.backend is Backend.LANDAU_LEVEL:
        return _assemble_landau(model, alpha1, k, A, basis, tb_scale)
    disc = discretization(basis, A)
    dom, ran = model_offsets(model)
    if model is Model.FULL:
        H = full_hamiltonian(alpha0, alpha1, k, disc)
        return FiberOperator(H, k, model, basis, True, None, dom, disc)
    if model is Model.CHIRAL:
        D = chiral_block(alpha1, k, disc, tb_scale)
    elif model is Model.ANTICHIRAL:
        D = antichiral_block(alpha0, k, disc, theta)
    else:
        D = disc.derivative(k, 0j).tocsc()
    H = sp.bmat([[None, D.conj().T], [D, None]], format="csr")
    return FiberOperator(H, k, model, basis, True, D, dom + ran, disc)


def _flux_of(A: MagneticPotential, lattice: Lattice) -> FluxSpec:
    p = A.B * lattice.mag_cell_area / (2 * math.pi)
    if A.B <= 0 or abs(p - round(p)) > 1e-9:
        raise AssemblyError("Landau-level backend needs an integer number of positive flux quanta")
    return FluxSpec(int(round(p)), lattice)


def _assemble_landau(model, alpha1, k, A, basis, tb_scale):
    from . import landau

    if A.per_coeffs:
        raise AssemblyError("Landau-level backend takes a constant field only")
    if model not in (Model.CHIRAL, Model.DIRAC_ONLY):
        raise AssemblyError("Landau-level backend supports the chiral and Dirac models")
    flux = _flux_of(A, basis.lattice)
    dom, ran = model_offsets(model)
    frames = landau.frames_for(flux, k, dom, basis.quad_n)
    if model is Model.CHIRAL:
        D = landau.landau_chiral_block(alpha1, frames, basis.N, tb_scale)
    else:
        D = landau.landau_dirac_block(frames, basis.N)
    m, n = D.shape
    H = np.block([[np.zeros((n, n), complex), D.conj().T], [D, np.zeros((m, m), complex)]])
    return FiberOperator(sp.csr_matrix(H), k, model, basis, True, sp.csc_matrix(D), dom + ran, frames)


# ----------------------------------------------------------------------------- Birman-Schwinger


class BirmanSchwinger:
    """T_k = (2 D_zbar - A + k)^{-1} [[0, U], [U_-, 0]] in block form [[0, X], [Y, 0]]."""

    def __init__(self, X: np.ndarray, Y: np.ndarray, k: complex, basis: BasisSpec):
        self.X = X
        self.Y = Y
        self.k = complex(k)
        self.basis = basis

    @property
    def matrix(self) -> np.ndarray:
        n = self.X.shape[0]
        z = np.zeros((n, n), dtype=complex)
        return np.block([[z, self.X], [self.Y, z]])

    def eigenvalues(self) -> np.ndarray:
        """Spectrum via T^2 = diag(XY, YX): every nu in Spec(XY) gives the pair +-sqrt(nu)."""
        nu = sla.eigvals(self.X @ self.Y, overwrite_a=True, check_finite=False)
        r = np.sqrt(nu.astype(complex))
        return np.concatenate([r, -r])


def assemble_BS(k: complex = 0.5, N: int = 16, A_per: MagneticPotential | None = None,
                lattice: Lattice | None = None) -> BirmanSchwinger:
    A_per = A_per or MagneticPotential()
    if A_per.B != 0:
        raise AssemblyError("the Birman-Schwinger operator takes a periodic potential only")
    if lattice is None:
        lattice = periodic_cell(A_per)
    basis = plane_wave(N, lattice)
    disc = discretization(basis, A_per)
    inv = []
    for s in (TWIST, 0j):
        q = disc.momenta(s) + k
        bad = np.argmin(np.abs(q))
        if abs(q[bad]) < 1e-10:
            raise AssemblyError(f"resonant quasi-momentum: momentum {disc.momenta(s)[bad]} cancels k")
        a = disc.derivative(k, s)
        if A_per.per_coeffs:
            inv.append(sla.inv(a.toarray()))
        else:
            inv.append(sp.diags(1 / a.diagonal()))
    U = disc.multiply(tunneling_momenta("U"), 0j, TWIST)
    Um = disc.multiply(tunneling_momenta("Uminus"), TWIST, 0j)
    X = np.asarray(inv[0] @ U.toarray())
    Y = np.asarray(inv[1] @ Um.toarray())
    return BirmanSchwinger(X, Y, k, basis)


def periodic_cell(A: MagneticPotential) -> Lattice:
    """Smallest square scaling lam = (m, m) on which every periodic mode is a dual vector."""
    for m in range(1, 13):
        lat = Lattice((m, m))
        try:
            check_periodic(A, lat)
            return lat
        except ValueError:
            continue
    raise AssemblyError("periodic vector potential is not commensurate with the moire lattice")


# ----------------------------------------------------------------------------- spectra helpers


def eigenvalues(op: FiberOperator) -> np.ndarray:
    """All eigenvalues of a Hermitian fiber, ascending (stable order on ties)."""
    vals = sla.eigvalsh(op.dense(), check_finite=False)
    return np.sort(vals, kind="stable")


def singular_values_dense(D) -> np.ndarray:
    mat = D.toarray() if sp.issparse(D) else np.asarray(D)
    return np.sort(sla.svdvals(mat, check_finite=False))


class _InverseGram(spla.LinearOperator):
    """x -> (D^H D)^{-1} x through one sparse LU of D (or of D^H when ``left``)."""

    def __init__(self, lu, left: bool = False):
        n = lu.shape[0]
        super().__init__(dtype=complex, shape=(n, n))
        self.lu = lu
        self.left = left

    def _matvec(self, x):
        x = np.asarray(x, dtype=complex).reshape(-1)
        if self.left:
            return self.lu.solve(self.lu.solve(x), trans="H")
        return self.lu.solve(self.lu.solve(x, trans="H"))


def smallest_singular(D, count: int, vectors: bool = False, left: bool = False, tol: float = 1e-12):
    """Smallest singular values (ascending) of a square D, with right (or left) singular vectors.

    Small matrices are handled densely; large sparse ones through a single LU factorization
    and Lanczos on the inverse Gram operator.
    """
    n = D.shape[0]
    if n <= 2500 or count >= n // 4:
        mat = D.toarray() if sp.issparse(D) else np.asarray(D)
        u, s, vh = sla.svd(mat, check_finite=False)
        order = np.argsort(s)[:count]
        if not vectors:
            return s[order]
        vecs = u[:, order] if left else vh.conj().T[:, order]
        return s[order], vecs
    lu = spla.splu(sp.csc_matrix(D), permc_spec="COLAMD")
    op = _InverseGram(lu, left)
    ncv = min(n - 1, max(2 * count + 10, 30))
    rng = np.random.default_rng(12345)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    vals, vecs = spla.eigsh(op, k=count, which="LM", ncv=ncv, tol=tol, v0=v0)
    order = np.argsort(-vals)
    sig = 1 / np.sqrt(np.maximum(vals[order], 1e-300))
    if not vectors:
        return sig
    return sig, vecs[:, order]


def operator_scale(alpha0: float = 0.0, alpha1: float = 0.0) -> float:
    """Natural energy unit of a fiber: one, or the sup-norm 3|alpha| of the tunneling terms."""
    return max(1.0, 3 * abs(alpha0), 3 * abs(alpha1))


# ----------------------------------------------------------------------------- magnetic translations


@dataclass(frozen=True)
class MagneticTranslationOp:
    """Magnetic translation by n1 zeta1 + n2 zeta2 (moire lattice steps).

    (T u)(z) = c * exp(i phi_a(z)) u(z + a), with c = omega^{n1 + n2} on twisted components,
    phi_a the constant-field phase and u extended beyond the cell by its boundary condition.
    """

    steps: tuple[int, int]
    B: float
    component_phases: tuple[complex, ...]

    @property
    def vector(self) -> complex:
        from .lattice import ZETA1, ZETA2

        return self.steps[0] * ZETA1 + self.steps[1] * ZETA2


def magnetic_translation(j_or_steps, B: float, offsets=(TWIST, 0j)) -> MagneticTranslationOp:
    steps = (1, 0) if j_or_steps == 1 else (0, 1) if j_or_steps == 2 else tuple(j_or_steps)
    # the ω-bar twisted components pick up ω per moire step
    phases = tuple(OMEGA ** (steps[0] + steps[1]) if abs(s - TWIST) < 1e-12 else 1.0 + 0j for s in offsets)
    return MagneticTranslationOp(steps, B, phases)


def extend_samples(u: GridFunction, i1: np.ndarray, i2: np.ndarray) -> np.ndarray:
    """Values of u at grid indices (i1, i2) outside the cell, via the boundary condition."""
    n1, n2 = u.grid.shape
    v1, v2 = u.grid.lattice.periods
    w1, r1 = np.divmod(i1, n1)
    w2, r2 = np.divmod(i2, n2)
    z0 = u.grid.points()[r1, r2]
    out = u.samples[:, r1, r2].copy()
    t1 = u.twists(0)[:, None]
    t2 = u.twists(1)[:, None]
    flat_w1, flat_w2, z_flat = w1.ravel(), w2.ravel(), z0.ravel()
    res = out.reshape(u.ncomp, -1)
    # build up u(z + w1 v1 + w2 v2) step by step from the in-cell point
    zc = z_flat.copy()
    for direction, v, t, wcount in ((0, v1, t1, flat_w1), (1, v2, t2, flat_w2)):
        steps_left = wcount.copy()
        while np.any(steps_left != 0):
            pos = steps_left > 0
            neg = steps_left < 0
            if np.any(pos):
                res[:, pos] *= t * np.exp(-1j * boundary_phase(u.B, v, zc[pos]))
                zc[pos] += v
                steps_left[pos] -= 1
            if np.any(neg):
                res[:, neg] *= np.exp(1j * boundary_phase(u.B, v, zc[neg] - v)) / t
                zc[neg] -= v
                steps_left[neg] += 1
    return res.reshape((u.ncomp,) + np.shape(i1))


def magnetic_translation_apply(op: MagneticTranslationOp, u: GridFunction) -> GridFunction:
    lat = u.grid.lattice
    n1, n2 = u.grid.shape
    l1, l2 = lat.lam
    if n1 % l1 or n2 % l2:
        raise ValueError("moire steps do not map this grid to itself")
    d1, d2 = op.steps[0] * n1 // l1, op.steps[1] * n2 // l2
    if len(op.component_phases) != u.ncomp:
        raise ValueError("component phase count differs from the spinor size")
    a = np.arange(n1)
    b = np.arange(n2)
    I1, I2 = np.meshgrid(a + d1, b + d2, indexing="ij")
    shifted = extend_samples(u, I1, I2)
    phase = np.exp(1j * boundary_phase(op.B, op.vector, u.grid.points()))
    c = np.asarray(op.component_phases)[:, None, None]
    return u.with_samples(c * phase[None] * shifted)


# ----------------------------------------------------------------------------- ladder states


def fd_annihilator(flux: FluxSpec, k: complex, n: int, order: int = 4, s: complex = 0j,
                   A: MagneticPotential | None = None, wilson: float = 0.0):
    """Finite-difference a_k = 2 D_zbar - A + k on scalar functions of the magnetic cell.

    The doubler-suppression term is off by default: residual checks want the bare stencil.
    """
    A = A or MagneticPotential(flux.B)
    disc = discretization(finite_difference(n, flux.lattice, order, wilson), A)
    return disc.derivative(k, s), disc


def ladder_state(u: GridFunction, n: int, flux: FluxSpec, k: complex, order: int = 6,
                 tol: float = 1e-6) -> GridFunction:
    """(a_k^*)^n u / ((2B)^{n/2} sqrt(n!)) for u in the kernel of a_k; u is normalized first."""
    if u.ncomp != 1:
        raise ValueError("ladder states act on scalar grid functions")
    grid_n = u.grid.shape[0] // flux.lattice.lam[0]
    a, _ = fd_annihilator(flux, k, grid_n, order, u.offsets[0])
    u = u.normalized()
    vec = u.vector()
    res = np.linalg.norm(a @ vec) / np.linalg.norm(vec)
    if res > tol:
        raise ValueError(f"ladder seed is not in ker(a_k): residual {res:.2e}")
    astar = a.conj().T.tocsr()
    for _ in range(n):
        vec = astar @ vec
    vec = vec / ((2 * flux.B) ** (n / 2) * math.sqrt(math.factorial(n)))
    return u.with_samples(vec)
