"""Interlayer tunneling potentials and magnetic vector potentials."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .lattice import OMEGA, SQRT3, Lattice, pairing_array


class TunnelingKind(str, Enum):
    U = "U"
    V = "V"
    UMINUS = "Uminus"


@dataclass(frozen=True)
class TunnelingPotential:
    kind: TunnelingKind
    fourier_modes: tuple[tuple[complex, complex], ...]

    def __call__(self, z):
        return eval_tunneling(self, z)


def tunneling_momenta(kind) -> list[tuple[complex, complex]]:
    """Plane-wave modes (momentum, weight) with pot(z) = sum weight exp(i <z, momentum>).

    The exponent (z w^-l - zbar w^l)/2 equals i Im(z w^-l) = i <z, i w^l>.
    """
    kind = TunnelingKind(kind)
    modes = []
    for ell in range(3):
        k = 1j * OMEGA**ell
        weight = 1.0 + 0j if kind is TunnelingKind.V else OMEGA**ell
        if kind is TunnelingKind.UMINUS:
            k = -k
        modes.append((complex(k), complex(weight)))
    return modes


def tunneling(kind) -> TunnelingPotential:
    kind = TunnelingKind(kind)
    return TunnelingPotential(kind, tuple(tunneling_momenta(kind)))


def _direct_sum(kind: TunnelingKind, z):
    z = np.asarray(z, dtype=complex)
    if kind is TunnelingKind.UMINUS:
        z = -z
    total = np.zeros(z.shape, dtype=complex)
    for ell in range(3):
        w = OMEGA**ell
        weight = 1.0 if kind is TunnelingKind.V else w
        total += weight * np.exp((z * np.conj(w) - np.conj(z) * w) / 2)
    return total


def eval_tunneling(pot: TunnelingPotential | str, z):
    """Evaluate U, V or U_-(z) = U(-z) from the defining trigonometric sum."""
    kind = pot.kind if isinstance(pot, TunnelingPotential) else TunnelingKind(pot)
    return _direct_sum(kind, z)


def eval_modes(modes, z):
    """Evaluate sum weight * exp(i <z, k>) for a list of (k, weight) pairs."""
    z = np.asarray(z, dtype=complex)
    total = np.zeros(z.shape, dtype=complex)
    for k, c in modes:
        total += c * np.exp(1j * pairing_array(z, k))
    return total


@dataclass(frozen=True)
class MagneticPotential:
    """A(z) = (B i / 2) z + sum_k A_k exp(i <z, k>), stored in complexified form A1 + i A2."""

    B: float = 0.0
    per_coeffs: tuple[tuple[complex, complex], ...] = field(default_factory=tuple)

    def __post_init__(self):
        merged: dict[tuple[float, float], complex] = {}
        for k, c in self.per_coeffs:
            k = complex(k)
            if abs(k) < 1e-12:
                raise ValueError("periodic vector potential must have no zero mode")
            key = (round(k.real, 12), round(k.imag, 12))
            merged[key] = merged.get(key, 0) + complex(c)
        coeffs = tuple(sorted(((complex(*key), c) for key, c in merged.items() if c != 0),
                              key=lambda kc: (kc[0].real, kc[0].imag)))
        object.__setattr__(self, "per_coeffs", coeffs)
        object.__setattr__(self, "B", float(self.B))

    @classmethod
    def from_real_fields(cls, B: float = 0.0, a1_modes=(), a2_modes=()):
        """Build from real components A1, A2 given as modes; conjugate partners are added.

        Each ``(k, c)`` in ``a1_modes`` contributes c e^{i<z,k>} + conj(c) e^{-i<z,k>} to A1.
        """
        coeffs = []
        for k, c in a1_modes:
            coeffs += [(k, c), (-k, np.conj(c))]
        for k, c in a2_modes:
            coeffs += [(k, 1j * c), (-k, 1j * np.conj(c))]
        return cls(B, tuple(coeffs))

    @property
    def periodic(self) -> "MagneticPotential":
        return MagneticPotential(0.0, self.per_coeffs)

    def momenta(self) -> list[complex]:
        return [k for k, _ in self.per_coeffs]

    def __call__(self, z):
        return eval_A(self, z)


def eval_A(pot: MagneticPotential, z):
    z = np.asarray(z, dtype=complex)
    return 0.5j * pot.B * z + eval_modes(pot.per_coeffs, z)


def real_components(pot: MagneticPotential, z):
    """Real fields (A1, A2) with A1 + i A2 = A(z)."""
    a = eval_A(pot, z)
    return a.real, a.imag


def fig5_potential() -> MagneticPotential:
    """A1(z) = 2 sqrt(3) cos(Im z), A2 = 0."""
    return MagneticPotential.from_real_fields(0.0, a1_modes=[(1j, SQRT3)])


def check_periodic(pot: MagneticPotential, lattice: Lattice, tol: float = 1e-9) -> None:
    """Reject periodic modes that are not in the dual of the magnetic lattice."""
    d1, d2 = lattice.mag_dual
    for k, _ in pot.per_coeffs:
        for v in lattice.periods:
            x = pairing_array(v, k) / (2 * math.pi)
            if abs(x - round(float(x))) > tol:
                raise ValueError(f"periodic mode {k} is not periodic on the lattice {lattice.lam}")


@dataclass(frozen=True)
class GaugeScalar:
    """Periodic phi with 2 i d_zbar phi = A_per, so (2 D_zbar - A_per) = e^{-phi} 2 D_zbar e^{phi}."""

    modes: tuple[tuple[complex, complex], ...]

    def __call__(self, z):
        return eval_modes(self.modes, z)


def gauge_phi(pot: MagneticPotential) -> GaugeScalar:
    """Gauge scalar of the periodic part.

    With d_zbar e^{i<z,k>} = (i k / 2) e^{i<z,k>} one gets 2 i d_zbar e^{i<z,k>} = -k e^{i<z,k>},
    hence phi_k = -A_k / k.
    """
    modes = []
    for k, c in pot.per_coeffs:
        modes.append((k, -c / k))
    return GaugeScalar(tuple(modes))


def load_per_coeffs(path) -> tuple[tuple[complex, complex], ...]:
    """Read 'k_re k_im A_re A_im' lines; '#' starts a comment."""
    coeffs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 numbers, got {len(parts)}")
        kr, ki, ar, ai = map(float, parts)
        coeffs.append((complex(kr, ki), complex(ar, ai)))
    return tuple(coeffs)


def save_per_coeffs(path, pot: MagneticPotential) -> None:
    lines = ["# k_re k_im A_re A_im"]
    for k, c in pot.per_coeffs:
        lines.append(f"{k.real:.17g} {k.imag:.17g} {c.real:.17g} {c.imag:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
