"""Driving Hamiltonians ``H(t) = H0 + H_d(t)`` for the effective qubit.

Two presets are exposed: a linear ramp of the level splitting (Landauer
erasure-type drive, stepped in the lab frame) and a resonant Rabi drive,
stepped in the frame rotating at ``omega1_0`` where it is static.  For the
rotating frame the state is ``exp(+i H0 t)|psi>``; the jump operators only
pick up phases under that map, so click statistics are frame independent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .qubit import SIGMA, SIGMA_DAG, SIGMA_X, SIGMA_Z

_T_TOL = 1e-9


class DriveKind(str, enum.Enum):
    LANDAUER = "landauer"
    RABI = "rabi"
    NONE = "none"


class Frame(str, enum.Enum):
    LAB = "lab"
    ROTATING = "rotating"


@dataclass(frozen=True)
class DriveProtocol:
    kind: DriveKind
    omega1_0: float
    epsilon: float = 0.0
    g: float = 0.0
    t_i: float = 0.0
    t_f: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DriveKind(self.kind))
        if not self.t_f > self.t_i:
            raise ValueError(f"t_f must exceed t_i (got t_i={self.t_i}, t_f={self.t_f})")
        if self.epsilon < 0 or self.g < 0:
            raise ValueError("epsilon and g must be non-negative")
        if not self.omega1_0 > 0:
            raise ValueError("omega1_0 must be positive")

    @property
    def duration(self) -> float:
        return self.t_f - self.t_i

    @property
    def natural_frame(self) -> Frame:
        return Frame.ROTATING if self.kind is DriveKind.RABI else Frame.LAB

    @property
    def omega1_final(self) -> float:
        return effective_frequency(self, self.t_f)


@dataclass(frozen=True, eq=False)
class HamiltonianSample:
    """Hamiltonian data for one step.

    ``h`` generates the evolution in ``frame``; ``h_energy`` is the operator
    whose expectation in the same frame equals the lab-frame energy
    ``<H0 + H_d(t)>``; ``dh`` is the drive increment over one step in the
    same frame (its expectation is the work of that step).
    """

    h: np.ndarray
    dh: np.ndarray
    h_energy: np.ndarray
    omega1_eff: float
    frame: Frame


def _check_time(protocol: DriveProtocol, t):
    t = np.asarray(t, dtype=float)
    span = _T_TOL * max(1.0, abs(protocol.t_f))
    if np.any(t < protocol.t_i - span) or np.any(t > protocol.t_f + span):
        raise ValueError(f"time outside drive window [{protocol.t_i}, {protocol.t_f}]")
    return t


def effective_frequency(protocol: DriveProtocol, t):
    """Qubit transition frequency ``<e|H|e> - <g|H|g>`` at time ``t``."""
    t = _check_time(protocol, t)
    if protocol.kind is DriveKind.LANDAUER:
        w = protocol.omega1_0 * (1.0 + protocol.epsilon * (t - protocol.t_i))
    else:
        w = np.full_like(t, protocol.omega1_0)
    return float(w) if w.ndim == 0 else w


def to_general_form(protocol: DriveProtocol, t):
    """Lab-frame drive as ``(delta, mu)`` with ``H_d = delta sz + mu s + mu* s^dag``."""
    t = _check_time(protocol, t)
    if protocol.kind is DriveKind.LANDAUER:
        delta = 0.5 * protocol.omega1_0 * protocol.epsilon * (t - protocol.t_i)
        mu = np.zeros_like(t, dtype=complex)
    elif protocol.kind is DriveKind.RABI:
        delta = np.zeros_like(t)
        mu = 0.5 * protocol.g * np.exp(1j * protocol.omega1_0 * t)
    else:
        delta = np.zeros_like(t)
        mu = np.zeros_like(t, dtype=complex)
    if t.ndim == 0:
        return float(delta), complex(mu)
    return delta, mu


def hamiltonian_arrays(protocol: DriveProtocol, times, dt: float, frame: Frame | None = None):
    """Stacks ``(h, dh, h_energy)`` of shape ``(len(times), 2, 2)`` plus ``omega1_eff``.

    Drive-on values are returned at every time, including the window edges;
    the switch-on/off of the Rabi drive is booked separately by the engine.
    """
    frame = Frame(frame) if frame is not None else protocol.natural_frame
    times = np.atleast_1d(_check_time(protocol, times))
    n = times.size
    w0 = protocol.omega1_0
    h0 = 0.5 * w0 * SIGMA_Z
    omega = np.atleast_1d(effective_frequency(protocol, times))

    if protocol.kind is DriveKind.LANDAUER:
        if frame is not Frame.LAB:
            raise ValueError("the Landauer ramp is stepped in the lab frame")
        h = 0.5 * omega[:, None, None] * SIGMA_Z
        dh = np.broadcast_to(0.5 * w0 * protocol.epsilon * dt * SIGMA_Z, (n, 2, 2)).copy()
        return h, dh, h, omega

    if protocol.kind is DriveKind.RABI:
        g = protocol.g
        if frame is Frame.ROTATING:
            h = np.broadcast_to(0.5 * g * SIGMA_X, (n, 2, 2)).copy()
            # e^{iH0t} dH_d e^{-iH0t} = i (g w0 / 2) (s - s^dag) dt
            dh = np.broadcast_to(0.5j * g * w0 * dt * (SIGMA - SIGMA_DAG), (n, 2, 2)).copy()
            return h, dh, h + h0, omega
        ph = np.exp(1j * w0 * times)[:, None, None]
        hd = 0.5 * g * (SIGMA * ph + SIGMA_DAG * ph.conj())
        h = h0 + hd
        dh = 0.5j * g * w0 * dt * (SIGMA * ph - SIGMA_DAG * ph.conj())
        return h, dh, h, omega

    h = np.broadcast_to(h0, (n, 2, 2)).copy()
    if frame is Frame.ROTATING:
        h_step = np.zeros((n, 2, 2), dtype=complex)
        return h_step, np.zeros((n, 2, 2), dtype=complex), h, omega
    return h, np.zeros((n, 2, 2), dtype=complex), h, omega


def sample(protocol: DriveProtocol, t: float, dt: float, frame: Frame | None = None) -> HamiltonianSample:
    h, dh, he, omega = hamiltonian_arrays(protocol, t, dt, frame)
    frame = Frame(frame) if frame is not None else protocol.natural_frame
    return HamiltonianSample(h=h[0], dh=dh[0], h_energy=he[0], omega1_eff=float(omega[0]), frame=frame)


def boundary_hamiltonian(protocol: DriveProtocol, t: float) -> np.ndarray:
    """Energy operator at ``t_i`` or ``t_f``, where the Rabi drive is switched off."""
    if protocol.kind is DriveKind.RABI:
        return 0.5 * protocol.omega1_0 * SIGMA_Z
    return 0.5 * effective_frequency(protocol, t) * SIGMA_Z


def max_offdiagonal_norm(protocol: DriveProtocol) -> float:
    """Largest coherence-driving Hamiltonian strength in the stepping frame."""
    if protocol.kind is DriveKind.RABI:
        return 0.5 * protocol.g
    return 0.0
