"""Engineered thermal reservoir seen by the effective qubit.

Natural units throughout (hbar = k_B = 1).  The bath temperature is held
as an inverse temperature ``beta`` so that ``beta = 0`` (infinite
temperature) is representable.  Functions accept floats or numpy arrays
of frequencies.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

ADIABATIC_ELIMINATION_RATIO = 0.1


@dataclass(frozen=True)
class BathSpec:
    beta: float
    gamma0: float

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")

    @classmethod
    def from_beta_omega(cls, beta_omega1: float, omega1: float, gamma0: float) -> "BathSpec":
        return cls(beta=beta_omega1 / omega1, gamma0=gamma0)


@dataclass(frozen=True)
class RatePoint:
    gamma_plus: float
    gamma_minus: float
    omega_laser: float
    omega1: float


def _check_frequency(omega1):
    if np.any(np.asarray(omega1) <= 0):
        raise ValueError(f"qubit frequency must be positive, got {omega1}")


def nbar(omega1, bath: BathSpec):
    """Mean thermal occupation ``1/(exp(beta*omega1) - 1)``; ``inf`` when beta is 0."""
    _check_frequency(omega1)
    x = bath.beta * np.asarray(omega1, dtype=float)
    with np.errstate(divide="ignore"):
        # exp(-x)/(1-exp(-x)) stays finite for large x
        n = np.exp(-x) / -np.expm1(-x)
    return float(n) if n.ndim == 0 else n


def rates_for(omega1, bath: BathSpec):
    """Detailed-balance rates keeping the bath temperature fixed at frequency ``omega1``.

    Returns a :class:`RatePoint` for scalar input and a tuple of arrays
    ``(gamma_plus, gamma_minus, omega_laser)`` for array input.
    """
    n = nbar(omega1, bath)
    if np.any(np.isinf(n)):
        raise ValueError("rates diverge at infinite temperature (beta*omega1 = 0)")
    gamma_minus = bath.gamma0 * (n + 1.0)
    gamma_plus = bath.gamma0 * n
    omega_laser = bath.gamma0 * np.sqrt((n + 1.0) * n)
    if np.ndim(omega1) == 0:
        return RatePoint(float(gamma_plus), float(gamma_minus), float(omega_laser), float(omega1))
    return gamma_plus, gamma_minus, omega_laser


def effective_temperature(gamma_plus: float, gamma_minus: float, omega1: float) -> float:
    """Return ``beta * omega1 = ln(gamma_minus / gamma_plus)``."""
    _check_frequency(omega1)
    if gamma_plus <= 0:
        raise ValueError("gamma_plus must be positive (zero means zero temperature)")
    if gamma_plus > gamma_minus:
        raise ValueError("gamma_plus > gamma_minus describes a negative temperature")
    return math.log(gamma_minus / gamma_plus)


def gamma_plus_from_raw(omega_laser: float, gamma_metastable: float) -> float:
    """Incoherent pumping rate ``4 Omega^2 / Gamma`` after eliminating the metastable level."""
    if omega_laser < 0:
        raise ValueError("laser Rabi frequency must be non-negative")
    if gamma_metastable <= 0:
        raise ValueError("metastable decay rate must be positive")
    if omega_laser / gamma_metastable > ADIABATIC_ELIMINATION_RATIO:
        warnings.warn(
            f"Omega/Gamma = {omega_laser / gamma_metastable:.3g} is outside the "
            "adiabatic-elimination regime (Omega << Gamma)",
            stacklevel=2,
        )
    return 4.0 * omega_laser**2 / gamma_metastable


def thermal_population(omega1, bath: BathSpec):
    """Steady excited-state population ``gamma_plus/(gamma_plus + gamma_minus)``."""
    _check_frequency(omega1)
    x = bath.beta * np.asarray(omega1, dtype=float)
    p = 0.5 * (1.0 - np.tanh(0.5 * x))
    return float(p) if p.ndim == 0 else p
