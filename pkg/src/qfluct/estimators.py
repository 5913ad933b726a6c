"""Fluctuation-theorem estimators.

Everything probabilistic is kept in log space.  The finite-efficiency
correction ``sigma`` of a detection record is estimated by self-normalized
sequential importance sampling over the unit-efficiency trajectories that
are compatible with the record.  For dynamics that never create coherence
the hidden flips are drawn from the two-state chain conditioned on the
whole record (backward completion probabilities), so all draws share the
weight P(record).  Otherwise, at each no-click step a hidden branch (no
event, undetected emission, undetected absorption) is proposed in
proportion to its probability mass, detected clicks are forced, and the
log-weight collects the per-step total mass of the allowed branches.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import qubit
from .bath import BathSpec
from .drive import DriveKind, DriveProtocol, Frame, boundary_hamiltonian
from .engine import Outcome, Schedule, TrajectoryRecord, build_schedule, trajectory_generator
from .ledger import LedgerBatch, thermal_log_weight

FICTITIOUS_STREAM = 1
DEFAULT_FICTITIOUS = 10_000
ESS_WARN_FRACTION = 0.01


class DegenerateRecordError(ValueError):
    pass


# --------------------------------------------------------------------------- ensemble statistics


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0


@dataclass(frozen=True)
class EnsembleStats:
    n_traj: int
    je_mean: float
    je_stderr: float
    mean_dis: float
    dis_stderr: float
    histogram: Histogram | None = None


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    if n < 2:
        raise ValueError("need at least two trajectories")
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(n))


def histogram(values, n_bins: int, range: tuple[float, float]) -> Histogram:
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    lo, hi = float(range[0]), float(range[1])
    if not hi > lo:
        raise ValueError("histogram range must be increasing")
    v = np.asarray(values, dtype=float).ravel()
    v = v[~np.isnan(v)]
    edges = np.linspace(lo, hi, n_bins + 1)
    under = int(np.count_nonzero(v < lo))
    over = int(np.count_nonzero(v > hi))
    counts, _ = np.histogram(v[(v >= lo) & (v <= hi)], bins=edges)
    return Histogram(edges=edges, counts=counts, underflow=under, overflow=over)


def auto_histogram(values, n_bins: int = 50) -> Histogram:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return histogram(v, n_bins, (-1.0, 1.0))
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return histogram(v, n_bins, (lo, hi))


def _entropy_column(ledgers, use_measured: bool) -> np.ndarray:
    if not isinstance(ledgers, LedgerBatch):
        ledgers = LedgerBatch.from_ledgers(ledgers)
    return np.asarray(ledgers.entropy_production_measured if use_measured else ledgers.entropy_production)


def _stats_from(dis: np.ndarray, exponent: np.ndarray, n_bins: int | None) -> EnsembleStats:
    je_mean, je_err = _mean_stderr(np.exp(-exponent))
    dis_mean, dis_err = _mean_stderr(dis)
    hist = auto_histogram(dis, n_bins) if n_bins else None
    return EnsembleStats(len(dis), je_mean, je_err, dis_mean, dis_err, hist)


def jarzynski_estimator(ledgers, use_measured: bool = False, n_bins: int | None = 50) -> EnsembleStats:
    """Mean and standard error of ``exp(-dis)`` over trajectories."""
    dis = _entropy_column(ledgers, use_measured)
    return _stats_from(dis, dis, n_bins)


def corrected_jarzynski(ledgers, sigmas, n_bins: int | None = 50) -> EnsembleStats:
    """Mean and standard error of ``exp(-dis_measured - sigma)``."""
    dis = _entropy_column(ledgers, True)
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != dis.shape:
        raise ValueError("need exactly one sigma per ledger")
    return _stats_from(dis, dis + sigmas, n_bins)


# --------------------------------------------------------------------------- path probabilities


def _state_index(s) -> int:
    if isinstance(s, str):
        return {"g": 0, "e": 1}[s]
    return int(s)


def record_schedule(record_or_steps, protocol: DriveProtocol, bath: BathSpec, frame: Frame | None = None) -> Schedule:
    n = record_or_steps.n_steps if isinstance(record_or_steps, TrajectoryRecord) else int(record_or_steps)
    dt = protocol.duration / max(n, 1)
    return build_schedule(protocol, bath, dt, n, frame)


def boundary_energy(protocol: DriveProtocol, t: float, index: int) -> float:
    return float(boundary_hamiltonian(protocol, t)[index, index].real)


def initial_log_weight(protocol: DriveProtocol, bath: BathSpec, index: int) -> float:
    w = protocol.omega1_0
    return thermal_log_weight(bath.beta, w, boundary_energy(protocol, protocol.t_i, index))


def final_log_weight(protocol: DriveProtocol, bath: BathSpec, index: int) -> float:
    w = protocol.omega1_0 if protocol.kind is DriveKind.RABI else protocol.omega1_final
    return thermal_log_weight(bath.beta, w, boundary_energy(protocol, protocol.t_f, index))


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def forward_log_probability(
    record: TrajectoryRecord,
    protocol: DriveProtocol,
    bath: BathSpec,
    eta: float,
    initial=None,
    frame: Frame | None = None,
) -> float:
    """Log-probability of drawing the initial state, the record and the final projection."""
    i = _state_index(record.initial_state if initial is None else initial)
    sched = record_schedule(record, protocol, bath, frame)
    logp = initial_log_weight(protocol, bath, i)
    rho = np.zeros((2, 2), dtype=complex)
    rho[i, i] = 1.0
    for n, k in enumerate(record.outcomes):
        m0, m1, m2 = sched.operators(n)
        if k == Outcome.NO_CLICK:
            new = m0 @ rho @ m0.conj().T
            if eta < 1.0:
                new += (1.0 - eta) * (m1 @ rho @ m1.conj().T + m2 @ rho @ m2.conj().T)
        else:
            m = m1 if k == Outcome.CLICK1 else m2
            new = eta * (m @ rho @ m.conj().T)
        p = float(np.real(np.trace(new)))
        if p <= 0.0:
            return -math.inf
        logp += math.log(p)
        rho = new / p
    return logp + _safe_log(float(np.real(rho[record.final_state, record.final_state])))


def reversed_log_probability(
    record: TrajectoryRecord,
    protocol: DriveProtocol,
    bath: BathSpec,
    final=None,
    frame: Frame | None = None,
) -> float:
    """Log-probability of the time-reversed record under unit efficiency.

    The reversed run starts from the final eigenstate drawn thermally at
    the final frequency and applies the adjoint step operators in reverse
    order, a reversed emission carrying ``exp(-beta omega)`` and a
    reversed absorption ``exp(+beta omega)``.
    """
    f = _state_index(record.final_state if final is None else final)
    sched = record_schedule(record, protocol, bath, frame)
    beta = bath.beta
    logp = final_log_weight(protocol, bath, f)
    psi = np.zeros(2, dtype=complex)
    psi[f] = 1.0
    for n in range(record.n_steps - 1, -1, -1):
        k = record.outcomes[n]
        m0, m1, m2 = sched.operators(n)
        if k == Outcome.NO_CLICK:
            new = m0.conj().T @ psi
            tilt = 0.0
        elif k == Outcome.CLICK1:
            new = m1.conj().T @ psi
            tilt = -beta * sched.omega[n]
        else:
            new = m2.conj().T @ psi
            tilt = beta * sched.omega[n]
        p = float(np.real(np.vdot(new, new)))
        if p <= 0.0:
            return -math.inf
        logp += math.log(p) + tilt
        psi = new / math.sqrt(p)
    return logp + _safe_log(abs(psi[record.initial_state]) ** 2)


def record_heat(record: TrajectoryRecord, protocol: DriveProtocol, bath: BathSpec, frame: Frame | None = None) -> float:
    """Classical heat booked by the detected clicks of a record."""
    sched = record_schedule(record, protocol, bath, frame)
    k = np.asarray(record.outcomes)
    w = sched.omega[: record.n_steps]
    return float(np.sum(w[k == Outcome.CLICK2]) - np.sum(w[k == Outcome.CLICK1]))


# --------------------------------------------------------------------------- no-click decomposition


@dataclass(frozen=True, eq=False)
class NoClickBranch:
    label: str
    operator: np.ndarray
    weight: float

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return self.weight * (self.operator @ rho @ self.operator.conj().T)


@dataclass(frozen=True, eq=False)
class NoClickDecomposition:
    branches: tuple[NoClickBranch, NoClickBranch, NoClickBranch]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return sum(b.apply(rho) for b in self.branches)

    def masses(self, rho: np.ndarray) -> np.ndarray:
        return np.array([float(np.real(np.trace(b.apply(rho)))) for b in self.branches])


def decompose_noclick(ops, eta: float) -> NoClickDecomposition:
    """Split the no-detection map into purity-preserving branches ``00``, ``01``, ``02``."""
    if not 0.0 <= eta < 1.0:
        raise ValueError("decomposition applies to 0 <= eta < 1")
    m0, m1, m2 = ops
    hidden = 1.0 - eta
    return NoClickDecomposition(
        (NoClickBranch("00", m0, 1.0), NoClickBranch("01", m1, hidden), NoClickBranch("02", m2, hidden))
    )


# --------------------------------------------------------------------------- fictitious trajectories


@dataclass(frozen=True)
class FictitiousSample:
    q_cl_fictitious: float
    log_weight: float


@dataclass(frozen=True, eq=False)
class FictitiousBatch:
    """Sampled fictitious trajectories; ``log_weight = -inf`` marks a record-incompatible draw."""

    q_cl_fictitious: np.ndarray
    log_weight: np.ndarray

    def __len__(self) -> int:
        return len(self.log_weight)

    def __iter__(self):
        for q, lw in zip(self.q_cl_fictitious, self.log_weight):
            if np.isfinite(lw):
                yield FictitiousSample(float(q), float(lw))


@dataclass(frozen=True)
class SigmaEstimate:
    sigma: float
    stderr: float
    n_fictitious: int
    effective_sample_size: float


def _is_diagonal(sched: Schedule) -> bool:
    return sched.protocol.kind is not DriveKind.RABI or sched.protocol.g == 0.0


@dataclass(frozen=True, eq=False)
class _RecordTables:
    # per-state cumulative -log survival of a hidden flip, next forced-flip step, log P(record | initial state)
    neg_surv: tuple[np.ndarray, np.ndarray]
    next_forced: tuple[np.ndarray, np.ndarray]
    log_completion: np.ndarray


_TABLE_CACHE: dict = {}


def _transfer_matrices(outcomes: np.ndarray, sched: Schedule, eta: float):
    """Per-step masses m[s, s'] of going from state s to s' consistent with the record."""
    n = len(outcomes)
    a, b = sched.emit[:n], sched.absorb[:n]
    quiet = outcomes == Outcome.NO_CLICK
    hidden = 1.0 - eta
    m00 = np.where(quiet, 1.0 - b, 0.0)
    m11 = np.where(quiet, 1.0 - a, 0.0)
    m01 = np.where(quiet, hidden * b, np.where(outcomes == Outcome.CLICK2, eta * b, 0.0))
    m10 = np.where(quiet, hidden * a, np.where(outcomes == Outcome.CLICK1, eta * a, 0.0))
    return m00, m01, m10, m11


def _suffix_products(m00, m01, m10, m11):
    """Products m_n m_{n+1} ... m_{N-1} for every n by doubling, rescaled to unit max entry.

    All factors are non-negative, so the rescaled products carry no cancellation.
    Returns the four entries and the log of the removed scale.
    """
    mats = [x.astype(float, copy=True) for x in (m00, m01, m10, m11)]
    n = len(m00)
    scale = np.zeros(n)
    d = 1
    while d < n:
        h = n - d
        x00, x01, x10, x11 = (x[:h] for x in mats)
        y00, y01, y10, y11 = (x[d:] for x in mats)
        prod = [x00 * y00 + x01 * y10, x00 * y01 + x01 * y11, x10 * y00 + x11 * y10, x10 * y01 + x11 * y11]
        c = np.maximum(np.maximum(prod[0], prod[1]), np.maximum(prod[2], prod[3]))
        c = np.where(c > 0, c, 1.0)
        new_scale = scale[:h] + scale[d:] + np.log(c)
        for x, y in zip(mats, prod):
            x[:h] = y / c
        scale[:h] = new_scale
        d *= 2
    return mats, scale


def _record_tables(record, sched: Schedule, eta: float) -> _RecordTables:
    outcomes = np.asarray(record.outcomes, dtype=np.int8)
    key = (id(sched), eta, record.final_state, outcomes.tobytes())
    hit = _TABLE_CACHE.get(key)
    if hit is not None and hit[0] is sched:
        return hit[1]
    n = len(outcomes)
    f = record.final_state
    m00, m01, m10, m11 = _transfer_matrices(outcomes, sched, eta)
    (p00, p01, p10, p11), scale = _suffix_products(m00, m01, m10, m11)
    # completion probabilities from each state before step n, up to a per-step scale
    to_g = np.append((p00, p01)[f], 1.0 - f)
    to_e = np.append((p10, p11)[f], float(f))
    with np.errstate(divide="ignore"):
        if n:
            log_completion = scale[0] + np.log(np.array([to_g[0], to_e[0]]))
        else:
            log_completion = np.log(np.array([to_g[0], to_e[0]]))
    vg, ve = to_g[1:], to_e[1:]
    quiet = outcomes == Outcome.NO_CLICK
    with np.errstate(divide="ignore", invalid="ignore"):
        flip_g = m01 * ve / (m00 * vg + m01 * ve)
        flip_e = m10 * vg / (m11 * ve + m10 * vg)
    neg_surv, next_forced = [], []
    big = np.iinfo(np.int64).max // 2
    for flip in (flip_g, flip_e):
        flip = np.where(quiet & np.isfinite(flip), flip, 0.0)
        forced = flip >= 1.0
        log_stay = np.log1p(-np.where(forced, 0.0, flip))
        cum = np.zeros(n + 1)
        np.cumsum(-log_stay, out=cum[1:])
        neg_surv.append(cum)
        marks = np.append(np.where(forced, np.arange(n), big), big)
        next_forced.append(np.minimum.accumulate(marks[::-1])[::-1])
    tables = _RecordTables(tuple(neg_surv), tuple(next_forced), log_completion)
    if len(_TABLE_CACHE) > 64:
        _TABLE_CACHE.clear()
    _TABLE_CACHE[key] = (sched, tables)
    return tables


def _sample_diagonal(record, sched, eta, n_samples, rng, log_pi):
    """Event-driven sampler for dynamics that never create coherence.

    Hidden flips are drawn from the chain conditioned on the whole record,
    so every draw is compatible and carries log P(record) as its weight.
    """
    tab = _record_tables(record, sched, eta)
    log_p = log_pi + tab.log_completion[record.initial_state]
    if not np.isfinite(log_p):
        return FictitiousBatch(np.zeros(n_samples), np.full(n_samples, -np.inf))
    omega = sched.omega
    n_steps = record.n_steps
    state = np.full(n_samples, record.initial_state, dtype=np.int8)
    lw = np.full(n_samples, log_p)
    q = np.zeros(n_samples)
    outcomes = np.asarray(record.outcomes)
    clicks = np.flatnonzero(outcomes != Outcome.NO_CLICK)
    start = 0
    for end in list(clicks) + [n_steps]:
        pos = np.full(n_samples, start, dtype=np.int64)
        active = pos < end
        while active.any():
            idx = np.flatnonzero(active)
            st = state[idx]
            p0 = pos[idx]
            log_u = np.log(rng.random(idx.size))
            k = np.empty(idx.size, dtype=np.int64)
            for s in (0, 1):
                sel = st == s
                if sel.any():
                    surv = tab.neg_surv[s]
                    k[sel] = np.minimum(
                        np.searchsorted(surv, surv[p0[sel]] - log_u[sel], side="right"),
                        tab.next_forced[s][p0[sel]] + 1,
                    )
            jumped = k <= end
            j = idx[jumped]
            if j.size:
                m = k[jumped] - 1
                q[j] += np.where(state[j] == 1, -omega[m], omega[m])
                state[j] = 1 - state[j]
            pos[idx] = np.where(jumped, k, end)
            active = pos < end
        if end < n_steps:
            kind = outcomes[end]
            need = 1 if kind == Outcome.CLICK1 else 0
            lw[state != need] = -np.inf
            q += -omega[end] if kind == Outcome.CLICK1 else omega[end]
            state[:] = 1 - need
        start = end + 1
    lw[state != record.final_state] = -np.inf
    return FictitiousBatch(q, lw)


def _sample_general(record, sched, eta, n_samples, rng, log_pi):
    """Step-by-step sampler on pure states, vectorized over samples."""
    g = np.zeros(n_samples, dtype=complex)
    e = np.zeros(n_samples, dtype=complex)
    (g if record.initial_state == 0 else e)[:] = 1.0
    lw = np.full(n_samples, log_pi)
    q = np.zeros(n_samples)
    hidden = 1.0 - eta
    one, zero = np.ones(n_samples, dtype=complex), np.zeros(n_samples, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        for n, k in enumerate(record.outcomes):
            v1, v2 = sched.v1[n], sched.v2[n]
            g, e = v1[0, 0] * g + v1[0, 1] * e, v1[1, 0] * g + v1[1, 1] * e
            pg = g.real**2 + g.imag**2
            pe = e.real**2 + e.imag**2
            a, b, w = sched.emit[n], sched.absorb[n], sched.omega[n]
            if k == Outcome.CLICK1:
                lw += np.log(eta * a * pe)
                g, e = one, zero
                q -= w
            elif k == Outcome.CLICK2:
                lw += np.log(eta * b * pg)
                g, e = zero, one
                q += w
            else:
                m00 = (1.0 - b) * pg + (1.0 - a) * pe
                m01 = hidden * a * pe
                m02 = hidden * b * pg
                total = m00 + m01 + m02
                lw += np.log(total)
                r = rng.random(n_samples) * total
                c1 = r < m01
                c2 = (~c1) & (r < m01 + m02)
                nrm = np.sqrt(np.where(m00 > 0, m00, 1.0))
                g = np.where(c1, 1.0 + 0j, np.where(c2, 0j, math.sqrt(1.0 - b) * g / nrm))
                e = np.where(c1, 0j, np.where(c2, 1.0 + 0j, math.sqrt(1.0 - a) * e / nrm))
                q += np.where(c1, -w, np.where(c2, w, 0.0))
            g, e = v2[0, 0] * g + v2[0, 1] * e, v2[1, 0] * g + v2[1, 1] * e
        pf = (g.real**2 + g.imag**2) if record.final_state == 0 else (e.real**2 + e.imag**2)
        lw += np.log(pf)
    lw[np.isnan(lw)] = -np.inf
    return FictitiousBatch(q, lw)


def sample_fictitious(
    record: TrajectoryRecord,
    protocol: DriveProtocol,
    bath: BathSpec,
    eta: float,
    n_samples: int = DEFAULT_FICTITIOUS,
    rng=None,
    frame: Frame | None = None,
    method: str = "auto",
) -> FictitiousBatch:
    """Draw unit-efficiency trajectories compatible with ``record``.

    ``exp(log_weight)`` has expectation equal to the forward probability
    of the record.  ``method`` is ``"auto"``, ``"event"`` (diagonal
    dynamics only) or ``"step"``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if rng is None:
        rng = trajectory_generator(record.seed, record.trajectory_index, FICTITIOUS_STREAM)
    sched = record_schedule(record, protocol, bath, frame)
    log_pi = initial_log_weight(protocol, bath, record.initial_state)
    diagonal = _is_diagonal(sched)
    if method == "event" and not diagonal:
        raise ValueError("event-driven sampling needs dynamics without coherence")
    if method == "event" or (method == "auto" and diagonal):
        batch = _sample_diagonal(record, sched, eta, n_samples, rng, log_pi)
    elif method in ("auto", "step"):
        batch = _sample_general(record, sched, eta, n_samples, rng, log_pi)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    if not np.isfinite(batch.log_weight).any():
        raise DegenerateRecordError("no sampled fictitious trajectory is compatible with the record")
    return batch


def sigma_eta(
    record: TrajectoryRecord,
    samples: FictitiousBatch | None,
    q_cl_measured: float,
    beta: float,
    eta: float | None = None,
) -> SigmaEstimate:
    """Self-normalized estimate of the finite-efficiency correction of one record."""
    if eta == 1.0 or record.n_noclick == 0:
        return SigmaEstimate(0.0, 0.0, 0 if samples is None else len(samples), float(0 if samples is None else len(samples)))
    if samples is None or len(samples) == 0:
        raise ValueError("need at least one fictitious sample")
    lw = np.asarray(samples.log_weight, dtype=float)
    q = np.asarray(samples.q_cl_fictitious, dtype=float)
    ok = np.isfinite(lw)
    if not ok.any():
        raise DegenerateRecordError("all fictitious samples have zero weight")
    lw, q = lw[ok], q[ok]
    tilt = beta * (q - q_cl_measured)
    log_norm = logsumexp(lw)
    log_ratio = logsumexp(lw + tilt) - log_norm
    logp = lw - log_norm
    p = np.exp(logp)
    # delta method on the ratio estimator, relative to the ratio itself
    rel = np.exp(logp + tilt - log_ratio) - p
    stderr = float(math.sqrt(np.sum(rel**2)))
    ess = float(1.0 / np.sum(p**2))
    if ess < ESS_WARN_FRACTION * len(samples):
        warnings.warn(
            f"effective sample size {ess:.1f} is below {ESS_WARN_FRACTION:.0%} of {len(samples)} samples",
            RuntimeWarning,
            stacklevel=2,
        )
    return SigmaEstimate(float(-log_ratio), stderr, len(samples), ess)


def estimate_sigma(
    record: TrajectoryRecord,
    protocol: DriveProtocol,
    bath: BathSpec,
    eta: float,
    q_cl_measured: float,
    n_samples: int = DEFAULT_FICTITIOUS,
    rng=None,
    frame: Frame | None = None,
) -> SigmaEstimate:
    if eta == 1.0 or record.n_noclick == 0:
        return sigma_eta(record, None, q_cl_measured, bath.beta, eta)
    samples = sample_fictitious(record, protocol, bath, eta, n_samples, rng, frame)
    return sigma_eta(record, samples, q_cl_measured, bath.beta, eta)
