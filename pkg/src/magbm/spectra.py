"""Band structures, flat-band statistics, exponential squeezing and Landau-level histograms."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .lattice import Lattice
from .operators import (
    Backend,
    BasisSpec,
    FiberOperator,
    Model,
    assemble_fiber,
    eigenvalues,
    operator_scale,
    periodic_cell,
    plane_wave,
    smallest_singular,
)
from .potentials import MagneticPotential

DENSE_LIMIT = 6000


@dataclass(frozen=True)
class ModelParams:
    alpha0: float = 0.0
    alpha1: float = 0.0
    theta: float = 0.0
    A: MagneticPotential = field(default_factory=MagneticPotential)
    tb_scale: float = 1.0

    def as_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "theta": self.theta,
            "B": self.A.B,
            "A_modes": len(self.A.per_coeffs),
            "tb_scale": self.tb_scale,
        }


@dataclass
class BandStructure:
    kpath: list[complex]
    energies: np.ndarray  # (len(kpath), nbands), rows ascending
    model: Model
    params: ModelParams
    backend: str
    meta: dict = field(default_factory=dict)

    def abs_sorted(self) -> np.ndarray:
        return np.sort(np.abs(self.energies), axis=1)

    def to_csv(self) -> str:
        m = self.energies.shape[1]
        head = "k_index,k_re,k_im," + ",".join(f"E_{j + 1}" for j in range(m))
        lines = [head]
        for i, (k, row) in enumerate(zip(self.kpath, self.energies)):
            vals = ",".join(f"{e:.12g}" for e in row)
            lines.append(f"{i},{k.real:.12g},{k.imag:.12g},{vals}")
        return "\n".join(lines) + "\n"


def fiber(model, params: ModelParams, k: complex, basis: BasisSpec) -> FiberOperator:
    return assemble_fiber(model, params.alpha0, params.alpha1, k, params.A, basis,
                          theta=params.theta, tb_scale=params.tb_scale)


def fiber_energies(op: FiberOperator, nbands: int) -> np.ndarray:
    """Eigenvalues of one fiber: all of them for small problems, else the 2*nbands nearest zero."""
    n = op.shape[0]
    if op.basis.backend is Backend.LANDAU_LEVEL or n <= DENSE_LIMIT:
        return eigenvalues(op)
    D = op.offdiag
    if D is not None and D.shape[0] == D.shape[1]:
        s = smallest_singular(D, nbands)
        return np.sort(np.concatenate([-s, s]))
    vals = spla.eigsh(op.matrix, k=2 * nbands, sigma=0, which="LM", return_eigenvectors=False)
    return np.sort(vals)


def band_structure(model, params: ModelParams, kpath, basis: BasisSpec, nbands: int = 4,
                   workers: int = 1) -> BandStructure:
    """Fiber spectra along ``kpath``; rows are merged in input order whatever the worker count."""
    model = Model(model)
    ks = [complex(k) for k in kpath]

    def one(k):
        return fiber_energies(fiber(model, params, k, basis), nbands)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, ks))
    else:
        rows = [one(k) for k in ks]
    width = min(2 * nbands, *(len(r) for r in rows))
    # keep the same number of energies per row, centred on zero
    trimmed = []
    for r in rows:
        r = np.sort(r)
        if np.abs(r + r[::-1]).max() <= 1e-9 * max(1.0, np.abs(r).max()):
            # symmetric spectrum: a central slice keeps degenerate +-E levels paired
            lo = (len(r) - width) // 2
            trimmed.append(r[lo:lo + width])
        else:
            order = np.argsort(np.abs(r), kind="stable")[:width]
            trimmed.append(np.sort(r[order]))
    meta = {"N": basis.N, "nbands": nbands, "lattice": list(basis.lattice.lam)}
    return BandStructure(ks, np.array(trimmed), model, params, basis.backend.value, meta)


# ----------------------------------------------------------------------------- flat bands


@dataclass(frozen=True)
class FlatBandReport:
    count: int
    flatness: float  # largest |E| over the flat bands
    gap: float  # smallest |E| of the first excluded band
    nearest_max: float  # max over k of the smallest |E|

    @property
    def gap_ratio(self) -> float:
        return self.gap / self.flatness if self.flatness > 0 else math.inf


def flat_band_detect(bands: BandStructure, tol: float = 1e-3) -> FlatBandReport:
    mags = bands.abs_sorted()
    col_max = mags.max(axis=0)
    count = 0
    while count < mags.shape[1] and col_max[count] < tol:
        count += 1
    flatness = float(col_max[:count].max()) if count else 0.0
    gap = float(mags[:, count].min()) if count < mags.shape[1] else math.inf
    return FlatBandReport(count, flatness, gap, float(col_max[0]))


def brillouin_grid(M: int, lattice: Lattice = Lattice()) -> list[complex]:
    """M x M uniform grid over the dual cell spanned by the magnetic dual basis."""
    d1, d2 = lattice.mag_dual
    return [complex(i / M * d1 + j / M * d2) for i in range(M) for j in range(M)]


@dataclass(frozen=True)
class AntichiralScan:
    min_positive: float
    dispersion: float
    error_estimate: float
    nearest_band: np.ndarray

    @property
    def is_dispersive(self) -> bool:
        return self.dispersion > 10 * self.error_estimate


def _nearest_positive(alpha0, A, k, N, lattice=None):
    # the fiber is [[0, D^H], [D, 0]], so the nonnegative eigenvalue nearest zero is sigma_min(D)
    op = assemble_fiber(Model.ANTICHIRAL, alpha0, 0.0, k, A, plane_wave(N, lattice or Lattice()))
    return float(np.min(smallest_singular(op.offdiag, 2)))


def antichiral_gap_scan(alpha0: float, A_per: MagneticPotential | None = None, kgrid=12, N: int = 8,
                        workers: int = 1) -> AntichiralScan:
    """Dispersion of the nonnegative band nearest zero, with an N versus N+2 error estimate."""
    A = A_per or MagneticPotential()
    if A.B != 0:
        raise ValueError("the anti-chiral scan needs a purely periodic field")
    cell = periodic_cell(A)
    ks = brillouin_grid(kgrid, cell) if isinstance(kgrid, int) else [complex(k) for k in kgrid]

    def one(k):
        return _nearest_positive(alpha0, A, k, N, cell), _nearest_positive(alpha0, A, k, N + 2, cell)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            pairs = list(pool.map(one, ks))
    else:
        pairs = [one(k) for k in ks]
    coarse = np.array([p[0] for p in pairs])
    fine = np.array([p[1] for p in pairs])
    err = float(np.abs(coarse - fine).max())
    return AntichiralScan(float(fine.min()), float(fine.max() - fine.min()), max(err, 1e-14), fine)


# ----------------------------------------------------------------------------- squeezing


@dataclass
class SqueezeReport:
    theta_list: list[float]
    band_maxima: list[float]
    group_sizes: list[int]
    fit_slope: float
    fit_intercept: float
    fit_r2: float
    counts: list[int]
    c2_estimate: float
    spectra: list[np.ndarray]

    @property
    def conclusive(self) -> bool:
        return self.fit_r2 >= 0.9

    def envelope(self, theta: float) -> float:
        return math.exp(self.fit_intercept + self.fit_slope / theta)

    @property
    def count_ratio(self) -> float:
        return self.counts[-1] / self.counts[0]


def squeezing_spectrum(theta: float, k: complex, count: int, A: MagneticPotential | None = None,
                       n_factor: float = 6.0) -> np.ndarray:
    """Smallest singular values of 2 theta D_zbar + U-terms + theta k (these are the |E| of the fiber)."""
    A = A or MagneticPotential()
    N = max(8, int(n_factor / theta))
    op = assemble_fiber(Model.CHIRAL, 0.0, 1.0, k, A, plane_wave(N), tb_scale=theta)
    return np.sort(smallest_singular(op.offdiag, count))


def squeezing_experiment(theta_list, k: complex = 0.5, A: MagneticPotential | None = None,
                         c2: float = 1.5, n_factor: float = 6.0, workers: int = 1) -> SqueezeReport:
    """Fit log max|E| of the central group against 1/theta.

    The central group at theta holds the ceil(c2 / theta) smallest |E|. After the fit, the
    count at each theta is the number of |E| lying under the fitted envelope.
    """
    thetas = [float(t) for t in theta_list]
    if len(thetas) < 5 or any(not 0 < t <= 0.2 for t in thetas):
        raise ValueError("need at least five theta values in (0, 0.2]")
    thetas.sort(reverse=True)
    sizes = [math.ceil(c2 / t) for t in thetas]
    need = [2 * s + 10 for s in sizes]

    def one(args):
        t, m = args
        return squeezing_spectrum(t, k, m, A, n_factor)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            spectra = list(pool.map(one, zip(thetas, need)))
    else:
        spectra = [one(a) for a in zip(thetas, need)]
    maxima = [float(s[m - 1]) for s, m in zip(spectra, sizes)]
    x = 1 / np.array(thetas)
    y = np.log(maxima)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    env = np.exp(intercept + slope * x)
    counts = [int(np.sum(s <= e * (1 + 1e-9))) for s, e in zip(spectra, env)]
    c2_est = float(np.mean([c * t for c, t in zip(counts, thetas)]))
    return SqueezeReport(thetas, maxima, sizes, float(slope), float(intercept), float(r2), counts,
                         c2_est, spectra)


def squeezing_convergence(theta: float, k: complex = 0.5, c2: float = 1.5, n_factor: float = 6.0) -> float:
    """Relative change of the central-group maximum when the plane-wave radius is doubled."""
    m = math.ceil(c2 / theta)
    coarse = squeezing_spectrum(theta, k, m + 5, n_factor=n_factor)[m - 1]
    fine = squeezing_spectrum(theta, k, m + 5, n_factor=2 * n_factor)[m - 1]
    return float(abs(fine - coarse) / fine)


# ----------------------------------------------------------------------------- Landau levels


@dataclass(frozen=True)
class LandauLevel:
    energy: float
    n: int
    branches: tuple[str, ...]


def landau_predict(B0: float, n_max: int, h: float = 1.0) -> list[LandauLevel]:
    """Levels sgn(n) sqrt(2 |n| B h) for B_a = 3 - B0 and B_b = 3 + B0, merged with provenance."""
    Ba, Bb = 3 - B0, 3 + B0
    if abs(Ba) < 1e-12 or abs(Bb) < 1e-12:
        raise ValueError("B0 = +-3 makes one commutator vanish")
    raw: list[tuple[float, int, str]] = []
    for name, Bx in (("a", Ba), ("b", Bb)):
        for n in range(-n_max, n_max + 1):
            raw.append((math.copysign(math.sqrt(2 * abs(n) * abs(Bx) * h), n), n, name))
    raw.sort()
    merged: list[LandauLevel] = []
    for e, n, name in raw:
        if merged and abs(merged[-1].energy - e) < 1e-12:
            last = merged[-1]
            merged[-1] = LandauLevel(last.energy, last.n, last.branches + (name,))
        else:
            merged.append(LandauLevel(e, n, (name,)))
    return merged


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    h: float
    dimension: int
    method: str
    scaled_axis: bool = False

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def smoothed(self) -> np.ndarray:
        c = np.asarray(self.counts, float)
        pad = np.concatenate([c[:1], c, c[-1:]])
        return (pad[:-2] + pad[1:-1] + pad[2:]) / 3

    def peaks(self) -> list[tuple[float, float]]:
        """(position, height) of interior local maxima of the 3-bin moving average."""
        s = self.smoothed()
        x = self.centers
        out = []
        for i in range(1, len(s) - 1):
            if s[i] > s[i - 1] and s[i] >= s[i + 1]:
                out.append((float(x[i]), float(s[i])))
        return out

    def to_csv(self) -> str:
        lines = ["bin_center,count"]
        lines += [f"{c:.10g},{v:.10g}" for c, v in zip(self.centers, self.counts)]
        return "\n".join(lines) + "\n"


def _chebyshev_moments(D, bound: float, moments: int, vectors: int, seed: int) -> np.ndarray:
    """Moments tr T_m(H / bound) of H = [[0, D^H], [D, 0]] for square D.

    Odd moments vanish by the chiral symmetry, and T_2m(x) = T_m(2x^2 - 1) turns the even ones
    into traces over D^H D on the domain alone, which halves the work.
    """
    n = D.shape[1]
    Dc = D.tocsr()
    Dh = D.conj().T.tocsr()
    scale = 2 / bound**2

    def step(x):
        return scale * (Dh @ (Dc @ x)) - x

    rng = np.random.default_rng(seed)
    half = (moments + 1) // 2
    nu = np.zeros(half)
    for _ in range(vectors):
        v = np.exp(2j * np.pi * rng.random(n))
        t0, t1 = v, step(v)
        nu[0] += n
        if half > 1:
            nu[1] += np.vdot(v, t1).real
        for m in range(2, half):
            t0, t1 = t1, 2 * step(t1) - t0
            nu[m] += np.vdot(v, t1).real
    mu = np.zeros(moments)
    mu[::2] = 2 * nu[: len(mu[::2])] / vectors  # domain and range carry the same trace
    return mu


def _jackson(M: int) -> np.ndarray:
    m = np.arange(M)
    a = math.pi / (M + 1)
    return ((M - m + 1) * np.cos(a * m) + np.sin(a * m) / math.tan(a)) / (M + 1)


def _binned_counts(mu: np.ndarray, edges: np.ndarray, bound: float) -> np.ndarray:
    """Integrate the damped Chebyshev density over each bin in closed form."""
    phi = np.arccos(np.clip(edges / bound, -1, 1))
    m = np.arange(1, len(mu))
    cumulative = mu[0] * (math.pi - phi) / math.pi
    cumulative = cumulative - (2 / math.pi) * (np.sin(np.outer(phi, m)) / m) @ mu[1:]
    return np.diff(cumulative)


def eigen_histogram(h: float, k: complex = 0.5, bins: int = 200, window: float | None = None,
                    alpha1: float = 1.0, scaled_axis: bool = False, margin: float = 0.6,
                    moments: int | None = None, vectors: int | None = None, seed: int = 0,
                    exact_limit: int = 4000) -> Histogram:
    """Histogram of the eigenvalues of the h-scaled chiral fiber inside [-window, window].

    The derivative carries h and the tunneling keeps strength alpha1. Plane waves are kept
    on the disk where h|q| <= window + 3 alpha1 + margin, outside of which no state can reach
    the window. Small problems are diagonalized; large ones use a Jackson-damped Chebyshev
    expansion of the spectral density with a random-phase trace estimate, integrated over
    each bin.
    """
    if not 0 < h <= 0.05:
        raise ValueError("h must lie in (0, 0.05]")
    if window is None:
        window = 1.2 * math.sqrt(24 * h)
    cutoff = (window + 3 * abs(alpha1) + margin) / h
    d1, d2 = Lattice().mag_dual
    inradius = abs(d1) * abs(math.sin(np.angle(d2 / d1)))
    N = int(math.ceil(cutoff / inradius)) + 2
    op = assemble_fiber(Model.CHIRAL, 0.0, alpha1, k, MagneticPotential(), plane_wave(N, cutoff=cutoff),
                        tb_scale=h)
    H = op.matrix
    n = H.shape[0]
    edges = np.linspace(-window, window, bins + 1)
    if n <= exact_limit:
        vals = sla.eigvalsh(H.toarray(), check_finite=False)
        counts = np.histogram(vals, edges)[0].astype(float)
        method = "exact"
    else:
        qmax = max(np.abs(op.disc.momenta(s) + k).max() for s in (0j, 1j))
        bound = 1.01 * (h * qmax + 3 * abs(alpha1)) + 0.1
        width = edges[1] - edges[0]
        M = moments or int(math.ceil(math.pi * bound / width))
        R = vectors or int(min(8, max(1, math.ceil(2.5e6 / n))))
        mu = _chebyshev_moments(op.offdiag, bound, M, R, seed) * _jackson(M)
        counts = _binned_counts(mu, edges, bound)
        method = f"chebyshev(M={M}, R={R})"
    if scaled_axis:
        edges = edges / math.sqrt(3)
    return Histogram(edges, counts, h, n, method, scaled_axis)


@dataclass(frozen=True)
class PeakMatch:
    level: int
    predicted: float
    found: float
    height: float

    @property
    def error(self) -> float:
        return abs(self.found - self.predicted)


def match_landau_peaks(hist: Histogram, n_max: int = 4, B0: float = 0.0) -> list[PeakMatch]:
    """Nearest positive-side peak to each predicted level 0..n_max (energies on the raw axis)."""
    peaks = hist.peaks()
    scale = math.sqrt(3) if hist.scaled_axis else 1.0
    levels = sorted({lv.energy for lv in landau_predict(B0, n_max, hist.h) if lv.energy >= 0})
    out = []
    for e in levels:
        pos = min(peaks, key=lambda p: abs(p[0] * scale - e))
        n = round(e * e / (2 * (3 - B0) * hist.h))
        out.append(PeakMatch(n, e, pos[0] * scale, pos[1]))
    return out


__all__ = [
    "ModelParams",
    "BandStructure",
    "FlatBandReport",
    "AntichiralScan",
    "SqueezeReport",
    "LandauLevel",
    "Histogram",
    "PeakMatch",
    "band_structure",
    "fiber",
    "fiber_energies",
    "flat_band_detect",
    "brillouin_grid",
    "antichiral_gap_scan",
    "squeezing_spectrum",
    "squeezing_experiment",
    "squeezing_convergence",
    "landau_predict",
    "eigen_histogram",
    "match_landau_peaks",
    "operator_scale",
]
