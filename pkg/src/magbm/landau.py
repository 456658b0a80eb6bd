"""Landau-level Galerkin backend for chiral fibers in a constant field.

On a component with momentum offset s the fiber derivative a_k has a p-dimensional kernel
(the analytic zero modes), and b = a_k / sqrt(2B) acts as a bosonic annihilator. Levels
u_{n,j} = (b^*)^n u_{0,j} / sqrt(n!) form an orthonormal basis. A plane wave e_q satisfies
e_q^{-1} b e_q = b + q / sqrt(2B), so

    <u_{n,i}, e_q u_{m,j}> = <n| Disp(beta) |m> * exp(|beta|^2 / 2) <u_{0,i}, e_q u_{0,j}>,

with beta = q / sqrt(2B) and Disp the bosonic displacement operator. Only lowest-level
overlaps need quadrature; they are integrals of smooth periodic functions, so a modest grid
gives them to machine precision.

The range of D keeps levels n < nmax and the domain keeps n <= nmax. The truncated D is then
rectangular with index exactly 2p, matching the continuum Fredholm index; a square
truncation would pair every physical zero mode with a spurious near-zero partner.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .lattice import FluxSpec, pairing_array
from .potentials import tunneling_momenta


def displacement_matrix(beta: complex, size: int, pad: int = 60) -> np.ndarray:
    """<n| exp(beta b^* - conj(beta) b) |m> for n, m < size, computed on a padded Fock space."""
    dim = size + pad
    b = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)
    gen = beta * b.conj().T - np.conj(beta) * b
    return sla.expm(gen)[:size, :size]


class LandauFrames:
    """Orthonormal lowest-level frames of each component at fixed k, plus overlap cache."""

    def __init__(self, flux: FluxSpec, k: complex, offsets, quad_n: int = 48):
        from .zero_modes import kernel_a

        self.flux = flux
        self.k = complex(k)
        self.offsets = tuple(offsets)
        self.p = flux.p
        frames = {}
        for s in set(self.offsets):
            kb = kernel_a(flux, k, quad_n, offset=s)
            frames[s] = kb.matrix()  # l2-orthonormal columns
            self.grid = kb.states[0].grid
        self.frames = frames
        self.z = self.grid.points().reshape(-1)

    def lll_overlap(self, q: complex, s_from: complex, s_to: complex) -> np.ndarray:
        e = np.exp(1j * pairing_array(self.z, q))
        return self.frames[s_to].conj().T @ (e[:, None] * self.frames[s_from])


def landau_multiply(frames: LandauFrames, modes, s_from, s_to, n_rows: int, n_cols: int) -> np.ndarray:
    """Matrix of sum_q w_q e_q from levels 0..n_cols-1 of s_from to levels 0..n_rows-1 of s_to."""
    B = frames.flux.B
    p = frames.p
    size = max(n_rows, n_cols)
    out = np.zeros((n_rows * p, n_cols * p), dtype=complex)
    for q, w in modes:
        if w == 0:
            continue
        beta = q / math.sqrt(2 * B)
        cyc = displacement_matrix(beta, size)[:n_rows, :n_cols]
        kappa = np.exp(abs(beta) ** 2 / 2) * frames.lll_overlap(q, s_from, s_to)
        out += w * np.kron(cyc, kappa)
    return out


def landau_lowering(B: float, p: int, nmax: int) -> np.ndarray:
    """a_k from levels 0..nmax onto levels 0..nmax-1: a_k u_n = sqrt(2 B n) u_{n-1}."""
    mat = np.zeros((nmax, nmax + 1))
    for n in range(1, nmax + 1):
        mat[n - 1, n] = math.sqrt(2 * B * n)
    return np.kron(mat, np.eye(p))


def landau_chiral_block(alpha1: float, frames: LandauFrames, nmax: int, tb_scale: float = 1.0) -> np.ndarray:
    """Rectangular D_c(alpha1) + k on components with offsets (i, 0)."""
    s1, s2 = frames.offsets
    p = frames.p
    low = tb_scale * landau_lowering(frames.flux.B, p, nmax)
    U = tunneling_momenta("U")
    Um = tunneling_momenta("Uminus")
    X = alpha1 * landau_multiply(frames, U, s2, s1, nmax, nmax + 1)
    Y = alpha1 * landau_multiply(frames, Um, s1, s2, nmax, nmax + 1)
    return np.block([[low, X], [Y, low]])


def landau_dirac_block(frames: LandauFrames, nmax: int) -> np.ndarray:
    return landau_lowering(frames.flux.B, frames.p, nmax)


@lru_cache(maxsize=64)
def _cached_frames(flux: FluxSpec, k: complex, offsets: tuple, quad_n: int) -> LandauFrames:
    return LandauFrames(flux, k, offsets, quad_n)


def frames_for(flux: FluxSpec, k: complex, offsets, quad_n: int = 48) -> LandauFrames:
    return _cached_frames(flux, complex(k), tuple(offsets), quad_n)
