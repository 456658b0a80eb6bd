"""Chern numbers of zero-energy band groups: link-variable curvature and density counting.

Frames are computed in the Landau-level basis, which is exact for the chiral fiber in a
constant field. Bases at different k are related by a bosonic displacement: if u_{n,i}(k)
are the levels built on ker a_k, then

    <u_{n,i}(k1), e_q u_{m,j}(k2)> = Disp(g)_{nm} exp(|g|^2 / 2) <u_{0,i}(k1), e_q u_{0,j}(k2)>,

with g = (k1 - k2 + q) / sqrt(2B). Links across the zone boundary use a_{k+G} = e_{-G} a_k e_G.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .landau import displacement_matrix, frames_for, landau_chiral_block, landau_dirac_block
from .lattice import FluxSpec, pairing_array
from .operators import TWIST

CHIRAL_OFFSETS = (TWIST, 0j)


class ChernError(RuntimeError):
    pass


class DimensionJumpError(ChernError):
    def __init__(self, k: complex, index: tuple[int, int], found: int, expected: int):
        self.k = k
        self.index = index
        self.found = found
        self.expected = expected
        super().__init__(f"band group dimension {found} != {expected} at k = {k:.6g} (grid point {index})")


@dataclass
class ProjectorFamily:
    kgrid: np.ndarray  # (M, M) complex
    frames: list[list[np.ndarray]]  # frames[i][j] has orthonormal columns
    dim: int
    min_gap: float
    source: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.kgrid.shape[0]


@dataclass(frozen=True)
class ChernResult:
    value: int
    raw_curvature_sum: float
    method: str
    resolution: int
    min_gap: float = float("nan")

    @property
    def integral(self) -> bool:
        return abs(self.raw_curvature_sum - self.value) < 0.05

    def to_json(self) -> str:
        return json.dumps({"method": self.method, "value": self.value, "raw": self.raw_curvature_sum,
                           "M": self.resolution, "min_gap": self.min_gap})


def _cross_overlap(flux: FluxSpec, k1: complex, k2: complex, q: complex, offsets, levels: int,
                   quad_n: int) -> np.ndarray:
    """Block-diagonal matrix of <u(k1), e_q u(k2)> over the components and levels 0..levels-1."""
    fr1 = frames_for(flux, k1, offsets, quad_n)
    fr2 = frames_for(flux, k2, offsets, quad_n)
    g = (k1 - k2 + q) / math.sqrt(2 * flux.B)
    disp = displacement_matrix(g, levels) * math.exp(abs(g) ** 2 / 2)
    e = np.exp(1j * pairing_array(fr1.z, q))
    blocks = []
    for s in offsets:
        lll = fr1.frames[s].conj().T @ (e[:, None] * fr2.frames[s])
        blocks.append(np.kron(disp, lll))
    return sla.block_diag(*blocks)


def _fiber_block(flux, k, alpha, nmax, quad_n, operator):
    fr = frames_for(flux, k, CHIRAL_OFFSETS if operator == "chiral" else (0j,), quad_n)
    if operator == "chiral":
        return landau_chiral_block(alpha, fr, nmax)
    return landau_dirac_block(fr, nmax)


def _kernel_frame(D: np.ndarray, tol: float):
    """Right null space of a wide matrix, plus the smallest singular value kept out of it."""
    u, s, vh = sla.svd(D, check_finite=False)
    rows, cols = D.shape
    nsmall = int(np.sum(s < tol))
    dim = cols - rows + nsmall
    kept = s[s >= tol]
    gap = float(kept.min()) if kept.size else math.inf
    return vh[cols - dim:].conj().T, dim, gap


def build_projector_family(model: str, alpha: float, flux: FluxSpec, band_selector: str = "zero",
                           M: int = 12, nmax: int = 20, quad_n: int = 48, tol: float = 1e-6,
                           shift: complex = 0.0, expected_dim: int | None = None) -> ProjectorFamily:
    """Frames of the zero-energy group on an M x M grid of the magnetic Brillouin zone.

    ``model`` is "chiral" (the flat bands ker D_c(alpha) + k, dimension 2p) or "lll" (ker a_k
    of the scalar magnetic Dirac operator, dimension p). A change of dimension anywhere on the
    grid raises DimensionJumpError naming the offending k.
    """
    if band_selector != "zero":
        raise ValueError(f"unknown band selector {band_selector!r}")
    if model not in ("chiral", "lll"):
        raise ValueError(f"unknown model {model!r}")
    expected = expected_dim or (2 * flux.p if model == "chiral" else flux.p)
    d1, d2 = flux.lattice.mag_dual
    kgrid = np.array([[shift + i / M * d1 + j / M * d2 for j in range(M)] for i in range(M)])
    frames, gaps = [], []
    for i in range(M):
        row = []
        for j in range(M):
            k = complex(kgrid[i, j])
            if model == "chiral":
                D = _fiber_block(flux, k, alpha, nmax, quad_n, "chiral")
                F, dim, gap = _kernel_frame(D, tol)
            else:
                # ker a_k is exactly the lowest level in this basis
                F, dim, gap = np.eye(flux.p), flux.p, math.sqrt(2 * flux.B)
            if dim != expected:
                raise DimensionJumpError(k, (i, j), dim, expected)
            row.append(F)
            gaps.append(gap)
        frames.append(row)
    source = {"model": model, "alpha": alpha, "p": flux.p, "lambda": list(flux.lam), "nmax": nmax,
              "quad_n": quad_n}
    return ProjectorFamily(kgrid, frames, expected, float(min(gaps)), source)


def _link(fam: ProjectorFamily, a: tuple[int, int], b: tuple[int, int]) -> complex:
    M = fam.M
    flux = FluxSpec(fam.source["p"], _lattice(fam))
    offsets = CHIRAL_OFFSETS if fam.source["model"] == "chiral" else (0j,)
    levels = fam.source["nmax"] + 1 if fam.source["model"] == "chiral" else 1
    d1, d2 = flux.lattice.mag_dual
    bi, bj = b
    G = 0j
    if bi == M:
        bi, G = 0, G + d1
    if bj == M:
        bj, G = 0, G + d2
    k1 = complex(fam.kgrid[a])
    k2 = complex(fam.kgrid[bi, bj])
    # the frame at k2 + G is e_{-G} applied to the frame at k2
    O = _cross_overlap(flux, k1, k2, -G, offsets, levels, fam.source["quad_n"])
    F1 = fam.frames[a[0]][a[1]]
    F2 = fam.frames[bi][bj]
    det = np.linalg.det(F1.conj().T @ O @ F2)
    if abs(det) < 1e-8:
        raise ChernError(f"vanishing link determinant between grid points {a} and {b}")
    return det / abs(det)


def _lattice(fam: ProjectorFamily):
    from .lattice import make_lattice

    return make_lattice(tuple(fam.source["lambda"]))


def chern_curvature(fam: ProjectorFamily) -> ChernResult:
    """Sum of plaquette field strengths of the link variables, divided by 2 pi.

    The orientation makes the lowest Landau level of a positive field carry -1.
    """
    M = fam.M
    U1 = np.empty((M, M), complex)
    U2 = np.empty((M, M), complex)
    for i in range(M):
        for j in range(M):
            U1[i, j] = _link(fam, (i, j), (i + 1, j))
            U2[i, j] = _link(fam, (i, j), (i, j + 1))
    total = 0.0
    for i in range(M):
        for j in range(M):
            ip, jp = (i + 1) % M, (j + 1) % M
            total += np.angle(U1[i, j] * U2[ip, j] / (U1[i, jp] * U2[i, j]))
    raw = -total / (2 * math.pi)
    return ChernResult(int(round(raw)), float(raw), "Curvature", M, fam.min_gap)


# ----------------------------------------------------------------------------- density counting


@dataclass(frozen=True)
class WindowCount:
    flux: FluxSpec
    count: int
    edge_gap: float  # smallest level found above the window


def zero_window_count(alpha: float, flux: FluxSpec, operator: str = "DstarD", window: float = 1e-2,
                      ks=(0.31 + 0.17j, -0.23 + 0.41j, 0.12 - 0.37j), nmax: int = 60,
                      quad_n: int = 48, gap_factor: float = 10.0) -> WindowCount:
    """Number of eigenvalues of D*D, DD* or H below window**2 (window for H) per fiber.

    The count must agree at every sample k and the next level must sit at least
    ``gap_factor`` times above the window; otherwise the window edge is not in a gap.
    """
    counts, gaps = [], []
    for k in ks:
        D = _fiber_block(flux, complex(k), alpha, nmax, quad_n, "chiral")
        s = sla.svdvals(D, check_finite=False)
        small = int(np.sum(s < window))
        index = D.shape[1] - D.shape[0]
        n = {"DstarD": small + index, "DDstar": small, "H": 2 * small + index}.get(operator)
        if n is None:
            raise ValueError(f"unknown operator {operator!r}")
        counts.append(n)
        above = s[s >= window]
        gaps.append(float(above.min()) if above.size else math.inf)
    if len(set(counts)) != 1 or min(gaps) < gap_factor * window:
        raise ChernError(f"window edge not in a gap at flux p={flux.p}, lambda={flux.lam}: "
                         f"counts {counts}, next level {min(gaps):.3g}")
    return WindowCount(flux, counts[0], min(gaps))


def chern_streda(alpha: float, flux_pair, operator: str = "DstarD", window: float = 1e-2,
                 **kw) -> ChernResult:
    """c = -2 pi (rho(B2) - rho(B1)) / (B2 - B1), rho = window count / magnetic cell area."""
    f1, f2 = flux_pair
    w1 = zero_window_count(alpha, f1, operator, window, **kw)
    w2 = zero_window_count(alpha, f2, operator, window, **kw)
    rho1 = w1.count / f1.lattice.mag_cell_area
    rho2 = w2.count / f2.lattice.mag_cell_area
    raw = -2 * math.pi * (rho2 - rho1) / (f2.B - f1.B)
    return ChernResult(int(round(raw)), float(raw), "Streda", 0, min(w1.edge_gap, w2.edge_gap))


__all__ = [
    "ProjectorFamily",
    "ChernResult",
    "ChernError",
    "DimensionJumpError",
    "WindowCount",
    "build_projector_family",
    "chern_curvature",
    "chern_streda",
    "zero_window_count",
]
