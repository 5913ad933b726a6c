"""Per-trajectory energetics: work, classical heat, quantum heat and entropy production.

Sign convention: every quantity is energy *received* by the qubit.  A
detected emission (outcome 1) therefore carries classical heat
``-omega1`` and an absorption (outcome 2) ``+omega1``.

Within one step the ledger orders events as jump first, then the drive
increment.  On a click step the work is evaluated on the post-jump
eigenstate; this makes the quantum heat vanish identically for drives that
never create coherence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import qubit
from .drive import HamiltonianSample

FIRST_LAW_TOL = 1e-8
SPLIT_TOL = 1e-8

LEDGER_COLUMNS = (
    "trajectory_index",
    "u_i",
    "u_f",
    "W",
    "Q_cl",
    "Q_q",
    "Q_cl_measured",
    "dis",
    "dis_measured",
    "n_clicks1",
    "n_clicks2",
)


class FirstLawError(ArithmeticError):
    pass


@dataclass(frozen=True)
class EnergyLedger:
    u_initial: float
    u_final: float
    work: float
    q_classical: float
    q_quantum: float
    q_classical_measured: float
    entropy_production: float = math.nan
    entropy_production_measured: float = math.nan
    n_clicks1: int = 0
    n_clicks2: int = 0
    trajectory_index: int = 0

    @property
    def delta_u(self) -> float:
        return self.u_final - self.u_initial

    @property
    def first_law_residual(self) -> float:
        return self.delta_u - self.work - self.q_classical - self.q_quantum


@dataclass(frozen=True)
class FreeEnergyPair:
    z_initial: float
    z_final: float
    delta_f: float


@dataclass(eq=False)
class LedgerBatch:
    """Column-oriented ledgers for many trajectories."""

    trajectory_index: np.ndarray
    u_initial: np.ndarray
    u_final: np.ndarray
    work: np.ndarray
    q_classical: np.ndarray
    q_quantum: np.ndarray
    q_classical_measured: np.ndarray
    entropy_production: np.ndarray
    entropy_production_measured: np.ndarray
    n_clicks1: np.ndarray
    n_clicks2: np.ndarray

    def __len__(self) -> int:
        return len(self.trajectory_index)

    @property
    def delta_u(self) -> np.ndarray:
        return self.u_final - self.u_initial

    @property
    def first_law_residual(self) -> np.ndarray:
        return self.delta_u - self.work - self.q_classical - self.q_quantum

    def row(self, i: int) -> EnergyLedger:
        return EnergyLedger(
            u_initial=float(self.u_initial[i]),
            u_final=float(self.u_final[i]),
            work=float(self.work[i]),
            q_classical=float(self.q_classical[i]),
            q_quantum=float(self.q_quantum[i]),
            q_classical_measured=float(self.q_classical_measured[i]),
            entropy_production=float(self.entropy_production[i]),
            entropy_production_measured=float(self.entropy_production_measured[i]),
            n_clicks1=int(self.n_clicks1[i]),
            n_clicks2=int(self.n_clicks2[i]),
            trajectory_index=int(self.trajectory_index[i]),
        )

    def __iter__(self):
        return (self.row(i) for i in range(len(self)))

    @classmethod
    def concatenate(cls, batches) -> "LedgerBatch":
        batches = list(batches)
        names = [f.name for f in fields(cls)]
        return cls(**{n: np.concatenate([getattr(b, n) for b in batches]) for n in names})

    @classmethod
    def from_ledgers(cls, ledgers) -> "LedgerBatch":
        ledgers = list(ledgers)
        names = [f.name for f in fields(cls)]
        return cls(**{n: np.array([getattr(l, n) for l in ledgers]) for n in names})

    def check_first_law(self, n_steps: int, omega1_0: float) -> None:
        bound = FIRST_LAW_TOL * max(n_steps, 1) * omega1_0
        resid = np.abs(self.first_law_residual)
        finite = np.isfinite(resid)
        if np.any(resid[finite] > bound):
            worst = int(np.argmax(np.where(finite, resid, -1.0)))
            raise FirstLawError(
                f"first-law residual {resid[worst]:.3e} exceeds {bound:.3e} "
                f"(trajectory {int(self.trajectory_index[worst])})"
            )


# --------------------------------------------------------------------------- increments


def _energy_operator(h) -> np.ndarray:
    return h.h_energy if isinstance(h, HamiltonianSample) else np.asarray(h)


def internal_energy(state: np.ndarray, h) -> float:
    """``<H>`` for a pure state ``(2,)`` or density matrix ``(2, 2)``."""
    op = _energy_operator(h)
    state = np.asarray(state)
    if state.ndim == 1:
        return float(np.real(qubit.expectation(op, state)))
    return float(np.real(np.trace(state @ op)))


def _post_jump(outcome: int) -> np.ndarray:
    return qubit.GROUND if outcome == 1 else qubit.EXCITED


def work_increment(psi: np.ndarray, h: HamiltonianSample, outcome: int) -> float:
    """Drive work of one step; on a click step the increment acts on the post-jump state."""
    target = psi if outcome == 0 else _post_jump(outcome)
    target = np.asarray(target)
    if target.ndim == 1:
        return float(np.real(qubit.expectation(h.dh, target)))
    return float(np.real(np.trace(target @ h.dh)))


def classical_heat_increment(omega1_eff: float, outcome: int) -> float:
    if outcome == 1:
        return -float(omega1_eff)
    if outcome == 2:
        return float(omega1_eff)
    return 0.0


def general_hamiltonian(omega1_eff: float, mu: complex) -> np.ndarray:
    """``(omega/2) sz + mu s + mu* s^dag``; a ``delta sz`` term is absorbed into ``omega``."""
    return 0.5 * omega1_eff * qubit.SIGMA_Z + mu * qubit.SIGMA + np.conj(mu) * qubit.SIGMA_DAG


def quantum_heat_jump(psi_before: np.ndarray, omega1_eff: float, mu: complex, outcome: int) -> float:
    """Energy change caused by the jump that is not carried by the emitted/absorbed quantum."""
    if outcome not in (1, 2):
        raise ValueError("quantum_heat_jump needs a click outcome")
    h = general_hamiltonian(omega1_eff, mu)
    du = internal_energy(_post_jump(outcome), h) - internal_energy(psi_before, h)
    return du - classical_heat_increment(omega1_eff, outcome)


def quantum_heat_jump_closed_form(psi_before: np.ndarray, omega1_eff: float, mu: complex, outcome: int) -> float:
    pg = abs(psi_before[0]) ** 2
    pe = abs(psi_before[1]) ** 2
    coh = 2.0 * float(np.real(mu * qubit.expectation(qubit.SIGMA, psi_before)))
    if outcome == 1:
        return omega1_eff * pg - coh
    if outcome == 2:
        return -omega1_eff * pe - coh
    raise ValueError("quantum_heat_jump_closed_form needs a click outcome")


def quantum_heat_nojump(psi_before: np.ndarray, ops, h, p1: float, p2: float) -> float:
    """First-order quantum heat of a no-click step from the jump operators' back-action."""
    _, m1, m2 = ops
    op = _energy_operator(h)
    eye = qubit.IDENTITY
    a1 = qubit.anticommutator(m1.conj().T @ m1 - p1 * eye, op)
    a2 = qubit.anticommutator(m2.conj().T @ m2 - p2 * eye, op)
    return -0.5 * float(np.real(qubit.expectation(a1, psi_before) + qubit.expectation(a2, psi_before)))


def quantum_heat_nojump_closed_form(
    psi_before: np.ndarray, omega1_eff: float, mu: complex, gamma_plus: float, gamma_minus: float, dt: float
) -> float:
    pg = abs(psi_before[0]) ** 2
    pe = abs(psi_before[1]) ** 2
    s = qubit.expectation(qubit.SIGMA, psi_before)
    drift = (gamma_minus - gamma_plus) * dt
    return -drift * float(np.real(mu * s)) * (pg - pe) - omega1_eff * drift * pe * pg


# --------------------------------------------------------------------------- free energy and entropy


def _log_cosh(x: float) -> float:
    x = abs(x)
    if x < 1.0:
        return 0.5 * math.log1p(math.sinh(x) ** 2)
    return x + math.log1p(math.exp(-2.0 * x)) - math.log(2.0)


def _log_partition(beta: float, omega: float) -> float:
    return math.log(2.0) + _log_cosh(0.5 * beta * omega)


def partition_function(beta: float, omega: float) -> float:
    return 2.0 * math.cosh(0.5 * beta * omega) if 0.5 * beta * omega < 700 else math.inf


def free_energy_change(beta: float, omega1_initial: float, omega1_final: float) -> FreeEnergyPair:
    if omega1_initial <= 0 or omega1_final <= 0:
        raise ValueError("frequencies must be positive")
    zi = partition_function(beta, omega1_initial)
    zf = partition_function(beta, omega1_final)
    if beta == 0:
        return FreeEnergyPair(zi, zf, 0.0)
    delta_f = -(_log_cosh(0.5 * beta * omega1_final) - _log_cosh(0.5 * beta * omega1_initial)) / beta
    return FreeEnergyPair(zi, zf, delta_f)


def thermal_log_weight(beta: float, omega: float, energy: float) -> float:
    """``log(exp(-beta E) / Z)`` for an eigenenergy ``E = +-omega/2``."""
    return -beta * energy - _log_partition(beta, omega)


def entropy_production(ledger, delta_f: float, beta: float, measured: bool = False):
    """``beta (dU - Q_cl - dF)``; works on an :class:`EnergyLedger` or a :class:`LedgerBatch`.

    For the unit-efficiency value the equivalent work/quantum-heat split
    ``beta (W - dF) + beta Q_q`` is checked on the way.
    """
    du = np.asarray(ledger.u_final) - np.asarray(ledger.u_initial)
    q = np.asarray(ledger.q_classical_measured if measured else ledger.q_classical)
    dis = beta * (du - q - delta_f)
    if not measured:
        split = beta * (np.asarray(ledger.work) - delta_f) + beta * np.asarray(ledger.q_quantum)
        scale = SPLIT_TOL * np.maximum(1.0, np.abs(dis))
        ok = ~np.isfinite(dis) | (np.abs(split - dis) <= scale)
        if not np.all(ok):
            raise FirstLawError("entropy-production split disagrees with the direct form")
    return float(dis) if np.ndim(dis) == 0 else dis


class KahanAccumulator:
    """Compensated running sum for scalar streams."""

    __slots__ = ("total", "_c")

    def __init__(self, start: float = 0.0):
        self.total = float(start)
        self._c = 0.0

    def add(self, x: float) -> None:
        y = x - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t
