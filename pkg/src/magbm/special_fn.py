"""Jacobi theta, Weierstrass functions and the theta multipliers used for zero modes.

Conventions
-----------
``theta1(x, tau)`` has period 1 in ``x`` up to sign:

    theta1(x | tau) = -sum_n exp(pi i (n + 1/2)^2 tau + 2 pi i (n + 1/2)(x + 1/2)),

so theta1(x + 1) = -theta1(x) and theta1(x + tau) = -exp(-pi i tau - 2 pi i x) theta1(x).
The Weierstrass functions are attached to the period lattice v1 Z + v2 Z of a
:class:`~magbm.lattice.Lattice` and are evaluated through theta1 with tau = v2 / v1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import OMEGA, SQRT3, FluxSpec, Lattice, pairing


class PoleError(ValueError):
    """Raised when a meromorphic function is evaluated at (or numerically on) a pole."""


@dataclass(frozen=True)
class ThetaParams:
    tau: complex = OMEGA
    truncation: int = 40

    def __post_init__(self):
        if complex(self.tau).imag <= 0:
            raise ValueError(f"theta parameter needs Im(tau) > 0, got {self.tau}")
        if self.truncation < 8:
            raise ValueError("theta truncation must be at least 8")


def _theta_terms(x, params: ThetaParams, order: int):
    x = np.asarray(x, dtype=complex)
    n = np.arange(-params.truncation, params.truncation) + 0.5
    shape = x.shape
    xf = x.reshape(-1, 1)
    phase = 1j * np.pi * n**2 * params.tau + 2j * np.pi * n * (xf + 0.5)
    terms = np.exp(phase)
    if order:
        terms = terms * (2j * np.pi * n) ** order
    return -terms.sum(axis=1).reshape(shape)


def theta1(x, params: ThetaParams = ThetaParams()):
    """Odd Jacobi theta function of period-one argument ``x``."""
    return _theta_terms(x, params, 0)


def theta1_derivative(x, params: ThetaParams = ThetaParams(), order: int = 1):
    """``order``-th derivative of theta1 with respect to ``x``."""
    return _theta_terms(x, params, order)


@dataclass(frozen=True)
class SigmaParams:
    """Weierstrass data of the lattice v1 Z + v2 Z, optionally with a flux for sigma_tilde."""

    lattice: Lattice
    eta_w1: complex
    eta_w2: complex
    theta: ThetaParams
    flux: FluxSpec | None = None
    gamma2: complex | None = None
    xi1: complex | None = None
    xi2: complex | None = None
    S1: complex | None = None
    S2: complex | None = None

    @property
    def v1(self) -> complex:
        return self.lattice.v1

    @property
    def v2(self) -> complex:
        return self.lattice.v2


def sigma_params(lattice: Lattice, flux: FluxSpec | None = None, truncation: int = 40) -> SigmaParams:
    v1, v2 = lattice.v1, lattice.v2
    theta = ThetaParams(tau=v2 / v1, truncation=truncation)
    d1 = complex(theta1_derivative(0.0, theta, 1))
    d3 = complex(theta1_derivative(0.0, theta, 3))
    # zeta(v1/2) from the cubic Taylor coefficient of theta1 at the origin
    eta_w1 = -d3 / (6 * v1 * d1)
    eta_w2 = (eta_w1 * v2 - 1j * math.pi) / v1
    if flux is None:
        return SigmaParams(lattice, eta_w1, eta_w2, theta)
    if flux.lattice != lattice:
        raise ValueError("flux lattice differs from the sigma lattice")
    if flux.p < 1:
        raise ValueError("sigma_tilde needs at least one flux quantum")
    B, p = flux.B, flux.p
    xi1 = B / 2 * (v1.conjugate() - v1)
    xi2 = B / 2 * (v2.conjugate() - v2)
    gamma2 = (2 * eta_w1 - xi1 / p) / v1
    return SigmaParams(
        lattice, eta_w1, eta_w2, theta, flux, gamma2, xi1, xi2, xi1 * v1 / 2, xi2 * v2 / 2
    )


def _ratio_and_logderivs(z, params: SigmaParams):
    x = np.asarray(z, dtype=complex) / params.v1
    th = theta1(x, params.theta)
    d1 = theta1_derivative(x, params.theta, 1)
    d2 = theta1_derivative(x, params.theta, 2)
    return th, d1, d2


def _check_poles(th, z, params: SigmaParams):
    d0 = abs(complex(theta1_derivative(0.0, params.theta, 1)))
    dist = np.abs(th) / d0
    if np.any(dist < 1e-13):
        bad = np.asarray(z).ravel()[np.argmin(dist.ravel())]
        raise PoleError(f"evaluation at lattice point {bad}")


def wsigma(z, params: SigmaParams):
    """Weierstrass sigma function of the lattice (entire, odd)."""
    z = np.asarray(z, dtype=complex)
    v1 = params.v1
    th = theta1(z / v1, params.theta)
    d0 = complex(theta1_derivative(0.0, params.theta, 1))
    return v1 * np.exp(params.eta_w1 * z**2 / v1) * th / d0


def wzeta(z, params: SigmaParams):
    """Weierstrass zeta function, the logarithmic derivative of sigma."""
    th, d1, _ = _ratio_and_logderivs(z, params)
    _check_poles(th, z, params)
    v1 = params.v1
    return 2 * params.eta_w1 * np.asarray(z) / v1 + d1 / (v1 * th)


def wp(z, params: SigmaParams):
    """Weierstrass p-function, minus the derivative of zeta."""
    th, d1, d2 = _ratio_and_logderivs(z, params)
    _check_poles(th, z, params)
    v1 = params.v1
    return -2 * params.eta_w1 / v1 - (d2 * th - d1**2) / (v1**2 * th**2)


def sigma_tilde(z, params: SigmaParams):
    """Gauge-modified sigma with sigma_tilde(z + v_j) = -exp((xi_j z + S_j)/p) sigma_tilde(z)."""
    if params.flux is None:
        raise ValueError("sigma_tilde requires sigma parameters built with a flux")
    z = np.asarray(z, dtype=complex)
    return np.exp(-params.gamma2 * z**2 / 2) * wsigma(z, params)


# ---------------------------------------------------------------- lattice oracles


def _lattice_points(params: SigmaParams, radius: int):
    # the coordinate box must contain the whole disc for the symmetric truncation
    m = np.arange(-3 * radius, 3 * radius + 1)
    m1, m2 = np.meshgrid(m, m, indexing="ij")
    w = (m1 * params.v1 + m2 * params.v2).ravel()
    scale = min(abs(params.v1), abs(params.v2))
    w = w[(np.abs(w) > 0) & (np.abs(w) <= radius * scale * (1 + 1e-9))]
    return w


def sigma_product(z, params: SigmaParams, radius: int = 10):
    """Truncated Weierstrass product over a disc of lattice points (test oracle)."""
    w = _lattice_points(params, radius)
    z = np.asarray(z, dtype=complex)
    zz = z.reshape(-1, 1)
    r = zz / w
    log_terms = np.log1p(-r) + r + r**2 / 2
    return (z.ravel() * np.exp(log_terms.sum(axis=1))).reshape(z.shape)


def wp_sum(z, params: SigmaParams, radius: int = 10):
    """Truncated lattice sum for the p-function (test oracle)."""
    w = _lattice_points(params, radius)
    z = np.asarray(z, dtype=complex)
    zz = z.reshape(-1, 1)
    return (1 / z.ravel() ** 2 + (1 / (zz - w) ** 2 - 1 / w**2).sum(axis=1)).reshape(z.shape)


# ---------------------------------------------------------------- theta multipliers

MOIRE_THETA = ThetaParams(tau=OMEGA, truncation=40)


def _to_theta_coordinate(z):
    # Gamma = zeta1 Z + zeta2 Z is sent onto Z + omega Z
    return 3 * np.asarray(z, dtype=complex) / (4j * math.pi * OMEGA)


def _to_theta_momentum(kbold: complex) -> complex:
    return kbold / (SQRT3 * OMEGA)


def _theta_ratio(x, kk, params: ThetaParams, check: bool):
    den = theta1(x, params)
    if check:
        d0 = abs(complex(theta1_derivative(0.0, params, 1)))
        if np.any(np.abs(den) < 1e-13 * d0):
            raise PoleError("theta multiplier evaluated at a pole")
    return theta1(x + kk, params) / den


def g_k(z, kbold: complex, check: bool = True):
    """Holomorphic multiplier with g(z + a) = exp(i <a, kbold>) g(z) for a in Gamma."""
    x = _to_theta_coordinate(z)
    kk = _to_theta_momentum(kbold)
    pref = np.exp(2 * math.pi * x * (kk - np.conj(kk)) / SQRT3)
    return pref * _theta_ratio(x, kk, MOIRE_THETA, check)


def F_k(z, kbold: complex, check: bool = True):
    """Gamma-periodic multiplier with 2 D_zbar F = -kbold F away from its pole."""
    x = _to_theta_coordinate(z)
    kk = _to_theta_momentum(kbold)
    pref = np.exp(2 * math.pi * (x - np.conj(x)) * kk / SQRT3)
    return -(1 / math.pi) * (2 / 3) ** 3 * pref * _theta_ratio(x, kk, MOIRE_THETA, check)


def theta_pole_distance(z):
    """|theta1| of the multiplier denominator relative to theta1'(0); small values flag a pole."""
    x = _to_theta_coordinate(z)
    d0 = abs(complex(theta1_derivative(0.0, MOIRE_THETA, 1)))
    return np.abs(theta1(x, MOIRE_THETA)) / d0


__all__ = [
    "PoleError",
    "ThetaParams",
    "SigmaParams",
    "theta1",
    "theta1_derivative",
    "sigma_params",
    "wsigma",
    "wzeta",
    "wp",
    "sigma_tilde",
    "sigma_product",
    "wp_sum",
    "g_k",
    "F_k",
    "theta_pole_distance",
    "pairing",
]
