"""Magic angles from the Birman-Schwinger spectrum, counting fits and direct verification."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .lattice import SQRT3, FluxSpec
from .operators import (
    AssemblyError,
    assemble_BS,
    assemble_fiber,
    landau_levels,
    operator_scale,
    plane_wave,
)
from .potentials import MagneticPotential


class TruncationError(ValueError):
    pass


@dataclass(frozen=True)
class MagicAngle:
    value: complex
    multiplicity: int
    is_real: bool


@dataclass
class MagicAngleSet:
    values: list[MagicAngle]
    truncation_N: int
    k_used: complex
    radius: float
    residual_bound: float = float("nan")
    real_checks: dict = field(default_factory=dict)

    def alphas(self) -> np.ndarray:
        return np.array([m.value for m in self.values])

    def real_positive(self) -> list[float]:
        return sorted(m.value.real for m in self.values if m.is_real and m.value.real > 0)

    def count_within(self, R: float) -> int:
        return sum(m.multiplicity for m in self.values if abs(m.value) <= R)

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": [self.k_used.real, self.k_used.imag],
                "N": self.truncation_N,
                "alphas": [
                    {"re": m.value.real, "im": m.value.imag, "mult": m.multiplicity} for m in self.values
                ],
            }
        )


def tail_bound(N: int, k: complex) -> float:
    """Upper bound for the norm of the discarded part of T_k.

    Momenta outside the truncation have modulus at least 1.5 N - 1.5 (inscribed radius of
    the hexagonal index box minus the twist), and the tunneling potentials are bounded by 3.
    """
    shell = 1.5 * N - 1.5 - abs(k)
    return 3.0 / shell if shell > 0 else math.inf


def cluster(values: np.ndarray, radius: float) -> list[tuple[complex, int]]:
    """Greedy single-linkage clustering; returns (mean, size) per cluster."""
    remaining = list(values)
    out = []
    while remaining:
        seed = remaining.pop(0)
        members = [seed]
        changed = True
        while changed:
            changed = False
            for v in list(remaining):
                if min(abs(v - m) for m in members) < radius:
                    members.append(v)
                    remaining.remove(v)
                    changed = True
        out.append((complex(np.mean(members)), len(members)))
    return out


def sigma_min_chiral(alpha: float, k: complex, N: int = 8, A_per: MagneticPotential | None = None) -> float:
    A = A_per or MagneticPotential()
    D = assemble_fiber("Chiral", 0, alpha, k, A, plane_wave(N)).offdiag.toarray()
    return float(sla.svdvals(D, check_finite=False)[-1])


def polish_real(alpha: float, k: complex = 0.31 + 0.17j, N: int = 8, width: float = 1e-3) -> float:
    """Minimize the smallest singular value of D_c(alpha) + k near a real magic candidate."""
    res = minimize_scalar(lambda a: sigma_min_chiral(a, k, N), bounds=(alpha - width, alpha + width),
                          method="bounded", options={"xatol": 1e-11})
    return float(res.x)


def magic_angles(R: float = 1.0, N: int = 16, k: complex = 0.5, A_per: MagneticPotential | None = None,
                 cluster_radius: float = 1e-6, polish: bool = True, real_tol: float = 1e-7) -> MagicAngleSet:
    if tail_bound(N, k) * R >= 0.5:
        raise TruncationError(f"truncation N={N} is too small for radius {R}")
    bs = assemble_BS(k, N, A_per)
    mu = bs.eigenvalues()
    mu = mu[np.abs(mu) > 1e-300]
    alphas = 1 / mu
    alphas = alphas[np.abs(alphas) <= R]
    groups = cluster(alphas, cluster_radius)
    values, checks = [], {}
    for a, mult in groups:
        is_real = abs(a.imag) <= real_tol * max(1.0, abs(a))
        if is_real:
            a = complex(a.real)
            if polish:
                polished = polish_real(abs(a.real)) * np.sign(a.real)
                checks[a.real] = polished
                a = complex(polished)
        values.append(MagicAngle(complex(a), mult, is_real))
    values.sort(key=lambda m: (round(abs(m.value), 9), math.atan2(m.value.imag, m.value.real)))
    out = MagicAngleSet(values, N, complex(k), R, real_checks=checks)
    reals = [m.value.real for m in values if m.is_real]
    if reals:
        reports = [verify_magic(a, ks=[0.31 + 0.17j, -0.4 + 0.22j]) for a in reals]
        out.residual_bound = max(max(r.smallest) for r in reports)
    return out


# ----------------------------------------------------------------------------- counting


@dataclass(frozen=True)
class CountingFit:
    a: float
    b: float
    c: float
    relative_residual: float
    radii: tuple[float, ...]
    counts: tuple[int, ...]


def counting_fit(values, radii) -> CountingFit:
    """Least-squares n(R) ~ a R^2 + b R + c of the cumulative multiplicity count."""
    if isinstance(values, MagicAngleSet):
        pts = [(abs(m.value), m.multiplicity) for m in values.values]
    else:
        pts = [(abs(complex(v)), 1) for v in values]
    if not pts:
        raise ValueError("no magic angles to count")
    radii = tuple(float(r) for r in radii)
    if len(radii) < 4:
        raise ValueError("at least four radii are needed for a quadratic fit")
    counts = tuple(sum(m for r0, m in pts if r0 <= R) for R in radii)
    M = np.column_stack([np.square(radii), radii, np.ones(len(radii))])
    coef, *_ = np.linalg.lstsq(M, np.array(counts, float), rcond=None)
    resid = np.linalg.norm(M @ coef - counts) / max(np.linalg.norm(counts), 1.0)
    return CountingFit(float(coef[0]), float(coef[1]), float(coef[2]), float(resid), radii, counts)


# ----------------------------------------------------------------------------- verification


@dataclass
class MagicReport:
    alpha: complex
    ks: list[complex]
    smallest: list[float]
    scale: float
    threshold: float

    @property
    def is_magic(self) -> bool:
        return all(s < self.threshold * self.scale for s in self.smallest)


def verify_magic(alpha, flux: FluxSpec | None = None, ks=None, N: int = 10, nmax: int = 40,
                 threshold: float = 1e-5) -> MagicReport:
    """Smallest singular value of the chiral fiber at each sample k.

    Zero field uses plane waves. With a constant field the fiber always carries the 2p
    index zero modes, so the Landau-level value reported is the smallest singular value
    beyond them.
    """
    if ks is None:
        rng = np.random.default_rng(7)
        ks = list(rng.uniform(-1, 1, 5) + 1j * rng.uniform(-1, 1, 5))
    ks = [complex(k) for k in ks]
    scale = operator_scale(0.0, abs(alpha))
    out = []
    for k in ks:
        if flux is None:
            D = assemble_fiber("Chiral", 0, alpha, k, MagneticPotential(), plane_wave(N)).offdiag
        else:
            D = assemble_fiber("Chiral", 0, alpha, k, MagneticPotential(flux.B),
                               landau_levels(nmax, flux.lattice)).offdiag
        # for the rectangular Landau truncation the index directions are exact zeros of D and
        # are not among these values; the minimum then measures kernel beyond the index
        s = sla.svdvals(D.toarray(), check_finite=False)
        out.append(float(s.min()))
    return MagicReport(complex(alpha), ks, out, scale, threshold)


__all__ = [
    "MagicAngle",
    "MagicAngleSet",
    "MagicReport",
    "CountingFit",
    "TruncationError",
    "magic_angles",
    "counting_fit",
    "verify_magic",
    "polish_real",
    "sigma_min_chiral",
    "tail_bound",
    "SQRT3",
    "AssemblyError",
]
