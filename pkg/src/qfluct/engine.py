"""Quantum-jump unraveling of the driven qubit and the Lindblad reference integrator.

Each step of length ``dt`` is split symmetrically around a detection
window: half a unitary step ``V``, the measurement with rates taken at
the midpoint, then the second half.  The Kraus set is

    M1 = sqrt(Gm dt) V sigma V,   M2 = sqrt(Gp dt) V sigma^dag V,
    M0 = V sqrt(1 - Gm dt |e><e| - Gp dt |g><g|) V,

which agrees with ``1 - i dt H - (M1^dag M1 + M2^dag M2)/2`` to first
order.  It is exactly complete, so ``p0 = 1 - p1 - p2`` holds
identically, and so is its adjoint set with detailed-balance factors,
which makes the discrete-time fluctuation relations exact.

Ensembles are propagated as batches: every trajectory in a batch shares
the step operators (they depend on time only) and consumes its own
uniform stream, keyed on ``(seed, trajectory_index)`` through a Philox
counter generator.  Column ``n`` of a trajectory's stream is used at
step ``n`` whatever the batch composition, so results do not depend on
how trajectories are grouped or scheduled.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import qubit
from .bath import BathSpec, RatePoint, rates_for
from .drive import (
    DriveKind,
    DriveProtocol,
    Frame,
    HamiltonianSample,
    boundary_hamiltonian,
    hamiltonian_arrays,
    max_offdiagonal_norm,
)

DT_SAFETY = 0.02
MAX_STEP_FRACTION = 0.05
RESYMMETRIZE_EVERY = 1000
_TINY = 1e-300

# uniform columns reserved per trajectory: [initial draw, steps..., final draw]
INITIAL_COLUMN = 0
STEP_OFFSET = 1


class StepSizeError(ValueError):
    pass


class ImpossibleBranchError(ArithmeticError):
    pass


class Outcome(enum.IntEnum):
    NO_CLICK = 0
    CLICK1 = 1
    CLICK2 = 2


@dataclass(frozen=True)
class SimConfig:
    dt: float
    n_steps: int
    eta: float = 1.0
    seed: int = 0
    trajectory_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"sim.eta must lie in [0, 1], got {self.eta}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.n_steps > 0 and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def for_protocol(
        cls,
        protocol: DriveProtocol,
        bath: BathSpec,
        eta: float = 1.0,
        seed: int = 0,
        safety: float = DT_SAFETY,
        frame: Frame | None = None,
        trajectory_index: int = 0,
    ) -> "SimConfig":
        dt, n_steps = choose_dt(protocol, bath, safety, frame)
        config = cls(dt=dt, n_steps=n_steps, eta=eta, seed=seed, trajectory_index=trajectory_index)
        check_step_size(config, protocol, bath, frame)
        return config


def _max_total_rate(protocol: DriveProtocol, bath: BathSpec) -> float:
    # Gp + Gm = gamma0 (2 nbar + 1) decreases with omega1; the ramp only raises omega1
    w = min(protocol.omega1_0, protocol.omega1_final)
    gp, gm = rates_for(w, bath).gamma_plus, rates_for(w, bath).gamma_minus
    return gp + gm


def _max_drive_rate(protocol: DriveProtocol, frame: Frame | None) -> float:
    frame = Frame(frame) if frame is not None else protocol.natural_frame
    rate = max(protocol.epsilon, protocol.g, 2.0 * max_offdiagonal_norm(protocol))
    if protocol.kind is DriveKind.RABI and frame is Frame.LAB:
        rate = max(rate, protocol.omega1_0)
    return rate


def choose_dt(
    protocol: DriveProtocol, bath: BathSpec, safety: float = DT_SAFETY, frame: Frame | None = None
) -> tuple[float, int]:
    """Step size keeping every per-step jump probability and drive phase below ``safety``."""
    bound = safety / _max_total_rate(protocol, bath)
    drive = _max_drive_rate(protocol, frame)
    if drive > 0:
        bound = min(bound, safety / drive)
    n_steps = max(1, math.ceil(protocol.duration / bound - 1e-9))
    return protocol.duration / n_steps, n_steps


def check_step_size(config: SimConfig, protocol: DriveProtocol, bath: BathSpec, frame: Frame | None = None):
    if config.n_steps == 0:
        return
    jump = config.dt * _max_total_rate(protocol, bath)
    if jump >= MAX_STEP_FRACTION:
        raise StepSizeError(f"dt*(Gp+Gm) = {jump:.3g} >= {MAX_STEP_FRACTION}; reduce dt")
    drive = config.dt * _max_drive_rate(protocol, frame)
    if drive >= MAX_STEP_FRACTION:
        raise StepSizeError(f"dt*|H_drive| = {drive:.3g} >= {MAX_STEP_FRACTION}; reduce dt")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    outcomes: np.ndarray
    initial_state: int
    final_state: int
    seed: int = 0
    trajectory_index: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.outcomes)

    @property
    def n_noclick(self) -> int:
        return int(np.count_nonzero(self.outcomes == Outcome.NO_CLICK))

    def key(self) -> tuple:
        return (self.initial_state, self.final_state, bytes(np.asarray(self.outcomes, dtype=np.int8)))


@dataclass(eq=False)
class Schedule:
    """Time-only step data shared by every trajectory of a run.

    Step ``n`` is split symmetrically: half a unitary step ``v1``, the
    detection window with rates taken at the midpoint ``t_mid``, then the
    second half ``v2``.  ``dh1``/``dh2`` are the energy-operator increments
    over the two halves and ``omega`` is the transition frequency at the
    midpoint, where a click is booked.
    """

    protocol: DriveProtocol
    bath: BathSpec
    dt: float
    n_steps: int
    frame: Frame
    times: np.ndarray
    t_mid: np.ndarray
    omega: np.ndarray
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    h: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    dh1: np.ndarray
    dh2: np.ndarray
    h_energy: np.ndarray
    h_start: np.ndarray = field(repr=False)
    h_end: np.ndarray = field(repr=False)

    @property
    def emit(self) -> np.ndarray:
        return self.gamma_minus * self.dt

    @property
    def absorb(self) -> np.ndarray:
        return self.gamma_plus * self.dt

    def hamiltonian_sample(self, n: int) -> HamiltonianSample:
        return HamiltonianSample(
            h=self.h[n],
            dh=self.dh1[n] + self.dh2[n],
            h_energy=self.h_energy[n],
            omega1_eff=float(self.omega[n]),
            frame=self.frame,
        )

    def rate_point(self, n: int) -> RatePoint:
        return rates_for(float(self.omega[n]), self.bath)

    def operators(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return kraus_from_parts(self.v1[n], self.v2[n], self.emit[n], self.absorb[n])


def kraus_from_parts(v1: np.ndarray, v2: np.ndarray, emit: float, absorb: float):
    damp = np.diag([math.sqrt(1.0 - absorb), math.sqrt(1.0 - emit)]).astype(complex)
    return (
        v2 @ damp @ v1,
        math.sqrt(emit) * (v2 @ qubit.SIGMA @ v1),
        math.sqrt(absorb) * (v2 @ qubit.SIGMA_DAG @ v1),
    )


def jump_operators(h: HamiltonianSample, rates: RatePoint, dt: float):
    """Return ``(M0, M1, M2)`` for one step of length ``dt`` with ``h`` held fixed."""
    emit, absorb = rates.gamma_minus * dt, rates.gamma_plus * dt
    if emit + absorb > 1.0:
        raise StepSizeError("jump probabilities exceed one; reduce dt")
    half = qubit.unitary_step(h.h, 0.5 * dt)
    return kraus_from_parts(half, half, emit, absorb)


@functools.lru_cache(maxsize=32)
def build_schedule(
    protocol: DriveProtocol, bath: BathSpec, dt: float, n_steps: int, frame: Frame | None = None
) -> Schedule:
    frame = Frame(frame) if frame is not None else protocol.natural_frame
    times = protocol.t_i + dt * np.arange(n_steps + 1)
    if n_steps:
        times[-1] = protocol.t_f
    t_mid = 0.5 * (times[:-1] + times[1:])
    _, _, h_energy, _ = hamiltonian_arrays(protocol, times, dt, frame)
    h_mid, dh_half, e_mid, omega = hamiltonian_arrays(protocol, t_mid, 0.5 * dt, frame)
    h_q1, _, _, _ = hamiltonian_arrays(protocol, 0.5 * (times[:-1] + t_mid), dt, frame)
    h_q3, _, _, _ = hamiltonian_arrays(protocol, 0.5 * (t_mid + times[1:]), dt, frame)
    v1 = qubit.unitary_step(h_q1, 0.5 * dt)
    v2 = qubit.unitary_step(h_q3, 0.5 * dt)
    if frame is Frame.LAB:
        # exact differences of the energy operator: the ledger telescopes to rounding level
        dh1 = e_mid - h_energy[:-1]
        dh2 = h_energy[1:] - e_mid
    else:
        dh1 = dh2 = dh_half
    if n_steps:
        gp, gm, _ = rates_for(omega, bath)
    else:
        gp = gm = np.zeros(0)
    for arr in (times, t_mid, omega, gp, gm, h_mid, v1, v2, dh1, dh2, h_energy):
        arr.setflags(write=False)
    return Schedule(
        protocol=protocol,
        bath=bath,
        dt=dt,
        n_steps=n_steps,
        frame=frame,
        times=times,
        t_mid=t_mid,
        omega=omega,
        gamma_plus=gp,
        gamma_minus=gm,
        h=h_mid,
        v1=v1,
        v2=v2,
        dh1=dh1,
        dh2=dh2,
        h_energy=h_energy,
        h_start=boundary_hamiltonian(protocol, protocol.t_i),
        h_end=boundary_hamiltonian(protocol, protocol.t_f),
    )


def schedule_for(config: SimConfig, protocol: DriveProtocol, bath: BathSpec, frame: Frame | None = None) -> Schedule:
    return build_schedule(protocol, bath, float(config.dt), int(config.n_steps), frame)


# --------------------------------------------------------------------------- RNG


def trajectory_generator(seed: int, trajectory_index: int, stream: int = 0) -> np.random.Generator:
    key = np.array([seed, trajectory_index], dtype=np.uint64)
    counter = np.array([0, 0, stream, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def trajectory_uniforms(seed: int, indices, n_columns: int, stream: int = 0) -> np.ndarray:
    indices = np.atleast_1d(indices)
    out = np.empty((indices.size, n_columns))
    for row, idx in enumerate(indices):
        out[row] = trajectory_generator(seed, int(idx), stream).random(n_columns)
    return out


# --------------------------------------------------------------------------- single steps


def _select(u: float, p1: float, p2: float) -> Outcome:
    if u < p1:
        return Outcome.CLICK1
    if u < p1 + p2:
        return Outcome.CLICK2
    return Outcome.NO_CLICK


def _uniform(rng) -> float:
    return float(rng) if isinstance(rng, (float, np.floating)) else float(rng.random())


def step_perfect(psi: np.ndarray, ops, rng) -> tuple[np.ndarray, Outcome]:
    """One unit-efficiency jump step; ``rng`` is a Generator or a uniform in [0, 1)."""
    m0, m1, m2 = ops
    p1 = float(np.real(qubit.expectation(m1.conj().T @ m1, psi)))
    p2 = float(np.real(qubit.expectation(m2.conj().T @ m2, psi)))
    k = _select(_uniform(rng), p1, p2)
    new = qubit.apply((m0, m1, m2)[k], psi)
    norm = np.linalg.norm(new)
    if norm < _TINY:
        raise ImpossibleBranchError(f"sampled branch {k.name} has zero norm")
    return new / norm, k


def noclick_map(rho: np.ndarray, ops, eta: float) -> np.ndarray:
    """Unnormalized no-detection map ``M0 rho M0^dag + (1-eta)(M1 rho M1^dag + M2 rho M2^dag)``."""
    m0, m1, m2 = ops
    out = m0 @ rho @ m0.conj().T
    if eta < 1.0:
        out = out + (1.0 - eta) * (m1 @ rho @ m1.conj().T + m2 @ rho @ m2.conj().T)
    return out


def click_probabilities(rho: np.ndarray, ops, eta: float) -> tuple[float, float]:
    _, m1, m2 = ops
    p1 = eta * float(np.real(np.trace(m1.conj().T @ m1 @ rho)))
    p2 = eta * float(np.real(np.trace(m2.conj().T @ m2 @ rho)))
    return p1, p2


def step_finite_eta(rho: np.ndarray, ops, eta: float, rng) -> tuple[np.ndarray, Outcome]:
    """One step of the conditional density matrix under detection efficiency ``eta``."""
    m0, m1, m2 = ops
    p1, p2 = click_probabilities(rho, ops, eta)
    k = _select(_uniform(rng), p1, p2)
    if k is Outcome.NO_CLICK:
        new = noclick_map(rho, ops, eta)
    else:
        # eta cancels in the normalization and would only risk underflow
        m = (m0, m1, m2)[k]
        new = m @ rho @ m.conj().T
    tr = float(np.real(np.trace(new)))
    if tr < _TINY:
        raise ImpossibleBranchError(f"sampled branch {k.name} has zero weight")
    return qubit.hermitize(new / tr), k


# --------------------------------------------------------------------------- batched propagation


class _Kahan:
    __slots__ = ("s", "c")

    def __init__(self, start):
        self.s = np.array(start, dtype=float)
        self.c = np.zeros_like(self.s)

    def add(self, x):
        y = x - self.c
        t = self.s + y
        self.c = (t - self.s) - y
        self.s = t


def _pure_energy(op, g, e):
    return op[0, 0].real * (g.real**2 + g.imag**2) + op[1, 1].real * (e.real**2 + e.imag**2) + 2.0 * np.real(
        np.conj(g) * op[0, 1] * e
    )


def _rho_energy(op, rgg, ree, rge):
    # Tr(rho op) with rho_eg = conj(rho_ge)
    return op[0, 0].real * rgg + op[1, 1].real * ree + 2.0 * np.real(op[1, 0] * rge)


@dataclass(frozen=True, eq=False)
class StepEvent:
    n: int
    t: float
    state: np.ndarray
    outcome: np.ndarray
    hamiltonian: HamiltonianSample
    rates: RatePoint


@dataclass(eq=False)
class Propagation:
    """Per-trajectory results of a batch; energies are lab-frame values."""

    final_state: np.ndarray
    u_start: np.ndarray
    u_end: np.ndarray
    work: np.ndarray
    q_classical: np.ndarray
    q_quantum: np.ndarray
    q_classical_measured: np.ndarray
    n_clicks1: np.ndarray
    n_clicks2: np.ndarray
    outcomes: np.ndarray | None = None
    snapshots: np.ndarray | None = None
    max_increment_q_quantum: np.ndarray | None = None


def propagate(
    schedule: Schedule,
    initial: np.ndarray,
    uniforms: np.ndarray,
    eta: float = 1.0,
    keep_outcomes: bool = False,
    observe: np.ndarray | None = None,
    callback: Callable[[StepEvent], None] | None = None,
) -> Propagation:
    """Propagate a batch over the schedule.

    ``initial`` is ``(B, 2)`` pure states (unit efficiency only) or
    ``(B, 2, 2)`` density matrices; ``uniforms`` has shape ``(B, n_steps)``.
    ``observe`` lists step indices (0..n_steps) at which the state is
    snapshotted as ``(rho_gg, Re rho_ge, Im rho_ge)``.
    """
    initial = np.asarray(initial, dtype=complex)
    if initial.ndim == 1:
        initial = initial[None, :]
    pure = initial.ndim == 2
    if pure and eta != 1.0:
        raise ValueError("pure-state stepping requires eta = 1; pass density matrices")
    if pure:
        return _propagate_pure(schedule, initial, uniforms, keep_outcomes, observe, callback)
    return _propagate_rho(schedule, initial, uniforms, eta, keep_outcomes, observe, callback)


def _snapshot_pure(g, e):
    return np.stack([g.real**2 + g.imag**2, np.real(g * np.conj(e)), np.imag(g * np.conj(e))], axis=-1)


def _snapshot_rho(rgg, rge):
    return np.stack([rgg, rge.real, rge.imag], axis=-1)


def _observe_plan(observe, n_steps, batch):
    if observe is None:
        return None, None
    observe = np.asarray(observe, dtype=int)
    slots = {int(s): i for i, s in enumerate(observe)}
    return slots, np.empty((batch, observe.size, 3))


def _half_pure(v, g, e):
    return v[0, 0] * g + v[0, 1] * e, v[1, 0] * g + v[1, 1] * e


def _half_rho(v, gg, ee, ge):
    """Components of ``v rho v^dag`` with ``rho_eg = conj(rho_ge)``."""
    v00, v01, v10, v11 = v[0, 0], v[0, 1], v[1, 0], v[1, 1]
    cross0 = 2.0 * np.real(v00 * ge * np.conj(v01))
    cross1 = 2.0 * np.real(v10 * ge * np.conj(v11))
    ngg = abs(v00) ** 2 * gg + abs(v01) ** 2 * ee + cross0
    nee = abs(v10) ** 2 * gg + abs(v11) ** 2 * ee + cross1
    nge = v00 * np.conj(v10) * gg + v01 * np.conj(v11) * ee + v00 * np.conj(v11) * ge + v01 * np.conj(v10) * np.conj(ge)
    return ngg, nee, nge


def _propagate_pure(schedule, psi0, uniforms, keep_outcomes, observe, callback):
    n_steps = schedule.n_steps
    batch = psi0.shape[0]
    g = psi0[:, 0].copy()
    e = psi0[:, 1].copy()
    emit, absorb, omega = schedule.emit, schedule.absorb, schedule.omega
    v1s, v2s, dh1, dh2, h_energy = schedule.v1, schedule.v2, schedule.dh1, schedule.dh2, schedule.h_energy

    u_start = _pure_energy(schedule.h_start, g, e)
    u = _pure_energy(h_energy[0], g, e)
    work = _Kahan(u - u_start)  # switch-on of the drive
    q_cl = _Kahan(np.zeros(batch))
    q_q = _Kahan(np.zeros(batch))
    max_qq = np.zeros(batch)
    n1 = np.zeros(batch, dtype=np.int64)
    n2 = np.zeros(batch, dtype=np.int64)
    outcomes = np.zeros((batch, n_steps), dtype=np.int8) if keep_outcomes else None
    slots, snaps = _observe_plan(observe, n_steps, batch)
    if slots is not None and 0 in slots:
        snaps[:, slots[0]] = _snapshot_pure(g, e)

    for n in range(n_steps):
        w_n = _pure_energy(dh1[n], g, e)
        g, e = _half_pure(v1s[n], g, e)
        pg = g.real**2 + g.imag**2
        pe = e.real**2 + e.imag**2
        p1 = emit[n] * pe
        p2 = absorb[n] * pg
        r = uniforms[:, n]
        k1 = r < p1
        k2 = (~k1) & (r < p1 + p2)
        jump = k1 | k2

        dg = math.sqrt(1.0 - absorb[n])
        de = math.sqrt(1.0 - emit[n])
        norm = np.sqrt(dg * dg * pg + de * de * pe)
        if np.any(norm[~jump] < _TINY):
            raise ImpossibleBranchError("no-click branch with zero norm was sampled")
        norm = np.where(jump, 1.0, norm)
        g = np.where(k1, 1.0 + 0j, np.where(k2, 0j, (dg / norm) * g))
        e = np.where(k1, 0j, np.where(k2, 1.0 + 0j, (de / norm) * e))
        w_n = w_n + _pure_energy(dh2[n], g, e)
        g, e = _half_pure(v2s[n], g, e)
        qcl_n = np.where(k1, -omega[n], np.where(k2, omega[n], 0.0))
        u_next = _pure_energy(h_energy[n + 1], g, e)
        qq_n = u_next - u - w_n - qcl_n
        u = u_next
        work.add(w_n)
        q_cl.add(qcl_n)
        q_q.add(qq_n)
        np.maximum(max_qq, np.abs(qq_n), out=max_qq)
        n1 += k1
        n2 += k2
        if outcomes is not None:
            outcomes[:, n] = k1 + 2 * k2
        if slots is not None and (n + 1) in slots:
            snaps[:, slots[n + 1]] = _snapshot_pure(g, e)
        if callback is not None:
            callback(
                StepEvent(
                    n=n,
                    t=float(schedule.times[n + 1]),
                    state=np.stack([g, e], axis=-1),
                    outcome=(k1 + 2 * k2).astype(np.int8),
                    hamiltonian=schedule.hamiltonian_sample(n),
                    rates=schedule.rate_point(n),
                )
            )

    u_end = _pure_energy(schedule.h_end, g, e)
    work.add(u_end - u)  # switch-off of the drive
    return Propagation(
        final_state=np.stack([g, e], axis=-1),
        u_start=u_start,
        u_end=u_end,
        work=work.s,
        q_classical=q_cl.s,
        q_quantum=q_q.s,
        q_classical_measured=q_cl.s.copy(),
        n_clicks1=n1,
        n_clicks2=n2,
        outcomes=outcomes,
        snapshots=snaps,
        max_increment_q_quantum=max_qq,
    )


def _propagate_rho(schedule, rho0, uniforms, eta, keep_outcomes, observe, callback):
    n_steps = schedule.n_steps
    batch = rho0.shape[0]
    rgg = rho0[:, 0, 0].real.copy()
    ree = rho0[:, 1, 1].real.copy()
    rge = rho0[:, 0, 1].copy()
    emit, absorb, omega = schedule.emit, schedule.absorb, schedule.omega
    v1s, v2s, dh1, dh2, h_energy = schedule.v1, schedule.v2, schedule.dh1, schedule.dh2, schedule.h_energy
    hidden = 1.0 - eta

    u_start = _rho_energy(schedule.h_start, rgg, ree, rge)
    u = _rho_energy(h_energy[0], rgg, ree, rge)
    work = _Kahan(u - u_start)
    q_meas = _Kahan(np.zeros(batch))
    q_q = _Kahan(np.zeros(batch))
    n1 = np.zeros(batch, dtype=np.int64)
    n2 = np.zeros(batch, dtype=np.int64)
    outcomes = np.zeros((batch, n_steps), dtype=np.int8) if keep_outcomes else None
    slots, snaps = _observe_plan(observe, n_steps, batch)
    if slots is not None and 0 in slots:
        snaps[:, slots[0]] = _snapshot_rho(rgg, rge)

    for n in range(n_steps):
        w_n = _rho_energy(dh1[n], rgg, ree, rge)
        rgg, ree, rge = _half_rho(v1s[n], rgg, ree, rge)
        p1 = eta * emit[n] * ree
        p2 = eta * absorb[n] * rgg
        r = uniforms[:, n]
        k1 = r < p1
        k2 = (~k1) & (r < p1 + p2)
        jump = k1 | k2

        dg2 = 1.0 - absorb[n]
        de2 = 1.0 - emit[n]
        ngg = dg2 * rgg
        nee = de2 * ree
        nge = math.sqrt(dg2 * de2) * rge
        if hidden > 0.0:
            ngg = ngg + hidden * emit[n] * ree
            nee = nee + hidden * absorb[n] * rgg
        tr = ngg + nee
        if np.any(tr[~jump] < _TINY):
            raise ImpossibleBranchError("no-click branch with zero weight was sampled")
        tr = np.where(jump, 1.0, tr)
        rgg = np.where(k1, 1.0, np.where(k2, 0.0, ngg / tr))
        ree = np.where(k1, 0.0, np.where(k2, 1.0, nee / tr))
        rge = np.where(jump, 0j, nge / tr)
        w_n = w_n + _rho_energy(dh2[n], rgg, ree, rge)
        rgg, ree, rge = _half_rho(v2s[n], rgg, ree, rge)
        if (n + 1) % RESYMMETRIZE_EVERY == 0:
            s = rgg + ree
            rgg, ree, rge = rgg / s, ree / s, rge / s
        qcl_n = np.where(k1, -omega[n], np.where(k2, omega[n], 0.0))
        u_next = _rho_energy(h_energy[n + 1], rgg, ree, rge)
        q_q.add(u_next - u - w_n - qcl_n)
        u = u_next
        work.add(w_n)
        q_meas.add(qcl_n)
        n1 += k1
        n2 += k2
        if outcomes is not None:
            outcomes[:, n] = k1 + 2 * k2
        if slots is not None and (n + 1) in slots:
            snaps[:, slots[n + 1]] = _snapshot_rho(rgg, rge)
        if callback is not None:
            rho = np.empty((batch, 2, 2), dtype=complex)
            rho[:, 0, 0], rho[:, 1, 1], rho[:, 0, 1], rho[:, 1, 0] = rgg, ree, rge, np.conj(rge)
            callback(
                StepEvent(
                    n=n,
                    t=float(schedule.times[n + 1]),
                    state=rho,
                    outcome=(k1 + 2 * k2).astype(np.int8),
                    hamiltonian=schedule.hamiltonian_sample(n),
                    rates=schedule.rate_point(n),
                )
            )

    u_end = _rho_energy(schedule.h_end, rgg, ree, rge)
    work.add(u_end - u)
    final = np.empty((batch, 2, 2), dtype=complex)
    final[:, 0, 0], final[:, 1, 1], final[:, 0, 1], final[:, 1, 0] = rgg, ree, rge, np.conj(rge)
    if eta == 1.0:
        q_cl = q_meas.s.copy()
        q_quantum = q_q.s
    else:
        # heat carried by undetected photons is not observable from the record
        q_cl = np.full(batch, np.nan)
        q_quantum = np.full(batch, np.nan)
    return Propagation(
        final_state=final,
        u_start=u_start,
        u_end=u_end,
        work=work.s,
        q_classical=q_cl,
        q_quantum=q_quantum,
        q_classical_measured=q_meas.s,
        n_clicks1=n1,
        n_clicks2=n2,
        outcomes=outcomes,
        snapshots=snaps,
    )


# --------------------------------------------------------------------------- single trajectory


def run_trajectory(
    config: SimConfig,
    protocol: DriveProtocol,
    bath: BathSpec,
    initial: np.ndarray,
    callback: Callable[[StepEvent], None] | None = None,
    frame: Frame | None = None,
):
    """Simulate one trajectory; returns ``(TrajectoryRecord, final_state, Propagation)``.

    ``initial`` may be a pure state (requires ``eta = 1``) or a density
    matrix.  The record's ``final_state`` is the basis state with the larger
    population; the projective final measurement lives in ``experiment``.
    """
    check_step_size(config, protocol, bath, frame)
    schedule = schedule_for(config, protocol, bath, frame)
    initial = np.asarray(initial, dtype=complex)
    if initial.ndim == 1 and config.eta < 1.0:
        initial = qubit.density_from_pure(initial)
    batch_init = initial[None]
    uniforms = trajectory_uniforms(config.seed, config.trajectory_index, config.n_steps + 2)
    res = propagate(
        schedule,
        batch_init,
        uniforms[:, STEP_OFFSET : STEP_OFFSET + config.n_steps],
        eta=config.eta,
        keep_outcomes=True,
        callback=callback,
    )
    final = res.final_state[0]
    pop_e = abs(final[1]) ** 2 if final.ndim == 1 else final[1, 1].real
    pop_e0 = abs(initial[1]) ** 2 if initial.ndim == 1 else initial[1, 1].real
    record = TrajectoryRecord(
        outcomes=res.outcomes[0],
        initial_state=int(pop_e0 > 0.5),
        final_state=int(pop_e > 0.5),
        seed=config.seed,
        trajectory_index=config.trajectory_index,
    )
    return record, final, res


# --------------------------------------------------------------------------- Lindblad reference


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, gamma_plus: float, gamma_minus: float) -> np.ndarray:
    s, sd = qubit.SIGMA, qubit.SIGMA_DAG
    out = -1j * (h @ rho - rho @ h)
    out += gamma_minus * (s @ rho @ sd - 0.5 * (qubit.PROJ_E @ rho + rho @ qubit.PROJ_E))
    out += gamma_plus * (sd @ rho @ s - 0.5 * (qubit.PROJ_G @ rho + rho @ qubit.PROJ_G))
    return out


def integrate_lindblad(
    protocol: DriveProtocol,
    bath: BathSpec,
    rho0: np.ndarray,
    dt: float,
    n_steps: int,
    frame: Frame | None = None,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta solution of the master equation.

    Returns the density matrices at ``t_i + n dt`` for ``n = 0..n_steps``
    in the stepping frame of the protocol.
    """
    check_step_size(SimConfig(dt=dt, n_steps=n_steps), protocol, bath, frame)
    half = protocol.t_i + 0.5 * dt * np.arange(2 * n_steps + 1)
    half = np.minimum(half, protocol.t_f)
    h, _, _, omega = hamiltonian_arrays(protocol, half, dt, frame)
    gp, gm, _ = rates_for(omega, bath)
    out = np.empty((n_steps + 1, 2, 2), dtype=complex)
    rho = np.array(rho0, dtype=complex)
    out[0] = rho
    for n in range(n_steps):
        a, b, c = 2 * n, 2 * n + 1, 2 * n + 2
        k1 = lindblad_rhs(rho, h[a], gp[a], gm[a])
        k2 = lindblad_rhs(rho + 0.5 * dt * k1, h[b], gp[b], gm[b])
        k3 = lindblad_rhs(rho + 0.5 * dt * k2, h[b], gp[b], gm[b])
        k4 = lindblad_rhs(rho + dt * k3, h[c], gp[c], gm[c])
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[n + 1] = rho
    return out
