"""Triangular moire lattice, its dual, magnetic superlattices and flux bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OMEGA = complex(math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3))
SQRT3 = math.sqrt(3.0)

ZETA1 = 4j * math.pi * OMEGA / 3
ZETA2 = 4j * math.pi * OMEGA**2 / 3
ETA1 = SQRT3 * OMEGA**2
ETA2 = -SQRT3 * OMEGA


def pairing(z: complex, k: complex) -> float:
    """Real pairing <z, k> = Re(z conj(k)) used for every Floquet phase."""
    return (z * k.conjugate()).real


@dataclass(frozen=True)
class Lattice:
    """Moire lattice Gamma together with the magnetic superlattice spanned by lam_j * zeta_j."""

    lam: tuple[int, int] = (1, 1)

    def __post_init__(self):
        l1, l2 = self.lam
        if int(l1) != l1 or int(l2) != l2 or l1 < 1 or l2 < 1:
            raise ValueError(f"lattice scaling must be positive integers, got {self.lam}")
        object.__setattr__(self, "lam", (int(l1), int(l2)))

    zeta1 = ZETA1
    zeta2 = ZETA2
    eta1 = ETA1
    eta2 = ETA2

    @property
    def v1(self) -> complex:
        return self.lam[0] * ZETA1

    @property
    def v2(self) -> complex:
        return self.lam[1] * ZETA2

    @property
    def periods(self) -> tuple[complex, complex]:
        return self.v1, self.v2

    @property
    def q(self) -> int:
        return self.lam[0] * self.lam[1]

    @property
    def cell_area(self) -> float:
        return 8 * math.pi**2 / (3 * SQRT3)

    @property
    def mag_cell_area(self) -> float:
        return self.q * self.cell_area

    @property
    def mag_dual(self) -> tuple[complex, complex]:
        """Dual basis of the magnetic superlattice, eta_j / lam_j."""
        return ETA1 / self.lam[0], ETA2 / self.lam[1]

    def point(self, s1, s2):
        """Map reduced coordinates (s1, s2) to z = s1 v1 + s2 v2."""
        return s1 * self.v1 + s2 * self.v2

    def reduced(self, z):
        """Reduced coordinates of z with respect to (v1, v2)."""
        # <v_i, eta_j/lam_j> = 2 pi delta_ij
        d1, d2 = self.mag_dual
        return pairing_array(z, d1) / (2 * math.pi), pairing_array(z, d2) / (2 * math.pi)

    def reduce_mod(self, z):
        """Representative of z modulo the magnetic superlattice in the cell [0,1)^2."""
        s1, s2 = self.reduced(z)
        return self.point(s1 - np.floor(s1), s2 - np.floor(s2))

    def lattice_distance(self, z, w, sublattice: str = "mag") -> float:
        """Distance between z and w modulo Gamma ('moire') or Gamma_mag ('mag')."""
        lat = self if sublattice == "mag" else Lattice()
        s1, s2 = lat.reduced(z - w)
        s1, s2 = s1 - round(s1), s2 - round(s2)
        best = math.inf
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                best = min(best, abs(lat.point(s1 + a, s2 + b)))
        return best


def pairing_array(z, k: complex):
    return (np.asarray(z) * np.conj(k)).real


@dataclass(frozen=True)
class FluxSpec:
    """Rational constant flux: p Dirac flux quanta through the magnetic cell of ``lattice``."""

    p: int
    lattice: Lattice

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 0:
            raise ValueError(f"flux quanta must be a non-negative integer, got {self.p}")

    @property
    def q(self) -> int:
        return self.lattice.q

    @property
    def lam(self) -> tuple[int, int]:
        return self.lattice.lam

    @property
    def B(self) -> float:
        return 2 * math.pi * self.p / self.lattice.mag_cell_area

    @property
    def flux_per_cell(self) -> float:
        """Phi = B |C/Gamma| = 2 pi p / q."""
        return self.B * self.lattice.cell_area


def make_lattice(lam=(1, 1)) -> Lattice:
    return Lattice(tuple(lam))


def flux_spec(p: int, lattice: Lattice | None = None) -> FluxSpec:
    if int(p) != p or p < 1:
        raise ValueError(f"flux quanta p must be >= 1, got {p}")
    return FluxSpec(int(p), lattice or Lattice())


def zero_flux(lattice: Lattice | None = None) -> FluxSpec:
    """B = 0 on the given cell; used by the finite-difference backend for cross-checks."""
    return FluxSpec(0, lattice or Lattice())


@dataclass(frozen=True)
class SpecialPoints:
    k0: complex
    zS: complex


def special_points(lattice: Lattice | None = None) -> SpecialPoints:
    """Dirac momentum k0 = (eta1 + eta2)/3 and stacking point zS."""
    k0 = (ETA1 + ETA2) / 3
    zS = 4j * math.pi * (OMEGA**2 - OMEGA) / 9
    return SpecialPoints(k0=complex(k0), zS=complex(zS))
