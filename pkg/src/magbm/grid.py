"""Sampled spinor fields on the magnetic unit cell and their boundary conventions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice, pairing_array


def boundary_phase(B: float, v: complex, z):
    """phi_v(z) = (B i / 4)(conj(v) z - v conj(z)), real; magnetic translation by v is e^{i phi_v} u(. + v)."""
    z = np.asarray(z, dtype=complex)
    return (0.25j * B * (np.conj(v) * z - v * np.conj(z))).real


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid z_ab = (a/n1) v1 + (b/n2) v2 on the magnetic cell of ``lattice``."""

    lattice: Lattice
    shape: tuple[int, int]

    @classmethod
    def square(cls, lattice: Lattice, n: int) -> "GridSpec":
        """n points per moire period along each direction, i.e. shape (n lam1, n lam2)."""
        return cls(lattice, (n * lattice.lam[0], n * lattice.lam[1]))

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def points(self) -> np.ndarray:
        n1, n2 = self.shape
        s1 = np.arange(n1) / n1
        s2 = np.arange(n2) / n2
        S1, S2 = np.meshgrid(s1, s2, indexing="ij")
        return self.lattice.point(S1, S2)

    @property
    def cell_weight(self) -> float:
        return self.lattice.mag_cell_area / self.size


@dataclass
class GridFunction:
    """Spinor samples of shape (ncomp, n1, n2).

    A function in the fiber space obeys, for each component c,
        u_c(z + v_j) = twist_c_j * exp(-i phi_{v_j}(z)) u_c(z),
    with twist_c_j = exp(i <v_j, offset_c>) and the magnetic phase of strength B.
    """

    grid: GridSpec
    samples: np.ndarray
    B: float = 0.0
    offsets: tuple[complex, ...] = (0j,)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim == 2:
            self.samples = self.samples[None]
        if self.samples.shape[1:] != self.grid.shape:
            raise ValueError(f"samples of shape {self.samples.shape} do not fit grid {self.grid.shape}")
        if len(self.offsets) != self.samples.shape[0]:
            raise ValueError("one momentum offset per component is required")

    @property
    def ncomp(self) -> int:
        return self.samples.shape[0]

    def vector(self) -> np.ndarray:
        return self.samples.reshape(-1)

    def with_samples(self, samples) -> "GridFunction":
        return GridFunction(self.grid, np.asarray(samples).reshape(self.samples.shape), self.B,
                            self.offsets, dict(self.meta))

    def inner(self, other: "GridFunction") -> complex:
        return complex(np.vdot(self.samples, other.samples)) * self.grid.cell_weight

    def norm(self) -> float:
        return math.sqrt(self.inner(self).real)

    def normalized(self) -> "GridFunction":
        return self.with_samples(self.samples / self.norm())

    def twists(self, j: int) -> np.ndarray:
        v = self.grid.lattice.periods[j]
        return np.array([np.exp(1j * pairing_array(v, s)) for s in self.offsets])

    def to_csv(self, path) -> None:
        z = self.grid.points().reshape(-1)
        cols = [z.real, z.imag]
        for c in range(self.ncomp):
            flat = self.samples[c].reshape(-1)
            cols += [flat.real, flat.imag]
        header = "x y " + " ".join(f"re(u{c + 1}) im(u{c + 1})" for c in range(self.ncomp))
        np.savetxt(path, np.column_stack(cols), header=header, fmt="%.12e")


def orthonormalize(states: list[GridFunction]) -> tuple[list[GridFunction], float]:
    """Orthonormalize by QR; also return the smallest singular value of the Gram matrix of the
    normalized inputs, a linear-independence certificate."""
    if not states:
        return [], 0.0
    w = math.sqrt(states[0].grid.cell_weight)
    mat = np.column_stack([s.vector() for s in states]) * w
    unit = mat / np.linalg.norm(mat, axis=0)
    gram_min = float(np.linalg.svd(unit, compute_uv=False)[-1] ** 2)
    q, _ = np.linalg.qr(mat)
    return [states[i].with_samples(q[:, i] / w) for i in range(len(states))], gram_min
