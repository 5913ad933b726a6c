"""Two-point-measurement ensembles, scenario presets and parameter sweeps.

All rates, drive strengths and durations in a scenario are given relative
to the emission rate at the start of the drive, ``Gamma_-(t_i)``, which
sets the time unit.  The bare qubit frequency ``omega1_0`` sets the energy
unit.  Trajectories are processed in fixed-size blocks whose size depends
only on the number of steps, and every trajectory draws from its own
counter-based stream, so a run is reproducible for any number of threads.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import itertools
import math
import os
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .bath import BathSpec, nbar, thermal_population
from .drive import DriveKind, DriveProtocol, Frame, boundary_hamiltonian
from .engine import Outcome, SimConfig, StepSizeError, TrajectoryRecord
from .estimators import (
    DEFAULT_FICTITIOUS,
    EnsembleStats,
    FICTITIOUS_STREAM,
    auto_histogram,
    corrected_jarzynski,
    jarzynski_estimator,
    sample_fictitious,
    sigma_eta,
)
from .ledger import LedgerBatch, free_energy_change

UNIFORMS_PER_BLOCK = 4_000_000
MIN_BLOCK = 64
MAX_BLOCK = 10_000
POINT_SHIFT = 40  # trajectory streams of sweep point p start at p << POINT_SHIFT


RATE_UNITS = ("emission", "spontaneous")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ScenarioParams:
    """Dimensionless scenario description; ``build`` turns it into physical objects."""

    kind: str = "landauer"
    epsilon: float = 0.0
    g: float = 0.0
    omega1: float = 1.0
    duration: float = 1.0
    beta_omega1: float = 3.0
    gamma0: float | None = None
    eta: float = 1.0
    dt_safety: float = engine.DT_SAFETY
    frame: str | None = None
    rabi_cycles: float | None = None
    rate_unit: str = "emission"

    def bath(self) -> BathSpec:
        beta = self.beta_omega1 / self.omega1
        if self.gamma0 is not None:
            return BathSpec(beta=beta, gamma0=self.gamma0)
        if self.rate_unit == "spontaneous":
            return BathSpec(beta=beta, gamma0=1.0)
        # choose gamma0 so the initial emission rate is the unit rate
        n0 = nbar(self.omega1, BathSpec(beta=beta, gamma0=1.0))
        return BathSpec(beta=beta, gamma0=1.0 / (n0 + 1.0))

    def reference_rate(self) -> float:
        """Rate that sets the time unit: the initial emission rate or the bare spontaneous rate."""
        b = self.bath()
        if self.rate_unit == "spontaneous":
            return b.gamma0
        return b.gamma0 * (nbar(self.omega1, b) + 1.0)

    def duration_time(self) -> float:
        """Drive duration in physical time; a Rabi drive may be sized to whole Rabi periods."""
        rate = self.reference_rate()
        if self.kind == "rabi" and self.rabi_cycles is not None:
            return 2.0 * math.pi * self.rabi_cycles / (self.g * rate)
        return self.duration / rate

    def protocol(self) -> DriveProtocol:
        rate = self.reference_rate()
        return DriveProtocol(
            kind=self.kind,
            omega1_0=self.omega1,
            epsilon=self.epsilon * rate,
            g=self.g * rate,
            t_i=0.0,
            t_f=self.duration_time(),
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    params: ScenarioParams
    n_traj: int = 10_000
    seed: int = 0
    sweep_params: tuple[str, ...] = ()
    sweep_grid: tuple[tuple[float, ...], ...] = ()
    n_fictitious: int = DEFAULT_FICTITIOUS
    description: str = ""

    @property
    def protocol(self) -> DriveProtocol:
        return self.params.protocol()

    @property
    def bath(self) -> BathSpec:
        return self.params.bath()

    def points(self) -> list[ScenarioParams]:
        if not self.sweep_params:
            return [self.params]
        out = []
        for combo in itertools.product(*self.sweep_grid):
            updates = {_PARAM_FIELD[k]: v for k, v in zip(self.sweep_params, combo)}
            out.append(dataclasses.replace(self.params, **updates))
        return out

    def point_labels(self) -> list[dict[str, float]]:
        if not self.sweep_params:
            return [{}]
        return [dict(zip(self.sweep_params, c)) for c in itertools.product(*self.sweep_grid)]


_PARAM_FIELD = {
    "drive.kind": "kind",
    "drive.epsilon": "epsilon",
    "drive.g": "g",
    "drive.omega1": "omega1",
    "drive.duration": "duration",
    "drive.frame": "frame",
    "drive.rabi_cycles": "rabi_cycles",
    "bath.beta_omega1": "beta_omega1",
    "bath.gamma0": "gamma0",
    "bath.rate_unit": "rate_unit",
    "sim.eta": "eta",
    "sim.dt_rule": "dt_safety",
}
SWEEPABLE = ("drive.epsilon", "drive.g", "drive.omega1", "drive.duration", "bath.beta_omega1", "bath.gamma0", "sim.eta")
CONFIG_KEYS = (
    "scenario.name",
    *_PARAM_FIELD,
    "sim.n_traj",
    "sim.seed",
    "sim.n_fictitious",
    "sweep.param",
    "sweep.grid",
)


def _float(key, value) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{key}: must be finite")
    return x


def _int(key, value) -> int:
    x = _float(key, value)
    if x != int(x):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return int(x)


def validate_params(p: ScenarioParams, key_prefix: str = "") -> None:
    if p.kind not in {k.value for k in DriveKind}:
        raise ConfigError(f"drive.kind: unknown drive {p.kind!r}")
    if not 0.0 <= p.eta <= 1.0:
        raise ConfigError(f"sim.eta must lie in [0, 1], got {p.eta}")
    for key, v in (("drive.epsilon", p.epsilon), ("drive.g", p.g)):
        if v < 0:
            raise ConfigError(f"{key} must be non-negative, got {v}")
    for key, v in (("drive.omega1", p.omega1), ("drive.duration", p.duration)):
        if not v > 0:
            raise ConfigError(f"{key} must be positive, got {v}")
    if not p.beta_omega1 > 0:
        raise ConfigError(f"bath.beta_omega1 must be positive, got {p.beta_omega1}")
    if p.rate_unit not in RATE_UNITS:
        raise ConfigError(f"bath.rate_unit must be one of {', '.join(RATE_UNITS)}, got {p.rate_unit!r}")
    if p.gamma0 is not None and not p.gamma0 > 0:
        raise ConfigError(f"bath.gamma0 must be positive, got {p.gamma0}")
    if not 0 < p.dt_safety < engine.MAX_STEP_FRACTION:
        raise ConfigError(f"sim.dt_rule must lie in (0, {engine.MAX_STEP_FRACTION}), got {p.dt_safety}")
    if p.frame is not None and p.frame not in {f.value for f in Frame}:
        raise ConfigError(f"drive.frame: unknown frame {p.frame!r}")
    if p.rabi_cycles is not None:
        if not p.rabi_cycles > 0:
            raise ConfigError(f"drive.rabi_cycles must be positive, got {p.rabi_cycles}")
        if p.kind == "rabi" and not p.g > 0:
            raise ConfigError("drive.rabi_cycles needs drive.g > 0")
    if p.kind == "landauer" and p.frame == "rotating":
        raise ConfigError("drive.frame: the Landauer ramp runs in the lab frame")


def validate_scenario(s: Scenario) -> None:
    if s.n_traj < 2:
        raise ConfigError(f"sim.n_traj must be at least 2, got {s.n_traj}")
    if not 0 <= s.seed < 2**64:
        raise ConfigError("sim.seed must be a 64-bit unsigned integer")
    if s.n_fictitious < 1:
        raise ConfigError("sim.n_fictitious must be positive")
    if len(s.sweep_params) != len(s.sweep_grid):
        raise ConfigError("sweep.grid needs one value list per sweep.param entry")
    for k in s.sweep_params:
        if k not in SWEEPABLE:
            raise ConfigError(f"sweep.param: {k!r} cannot be swept (choose from {', '.join(SWEEPABLE)})")
    if len(s.points()) > 1 and len(s.points()) >= 1 << (64 - POINT_SHIFT):
        raise ConfigError("sweep has too many points")
    for p in s.points():
        validate_params(p)
        try:
            SimConfig.for_protocol(p.protocol(), p.bath(), eta=p.eta, safety=p.dt_safety, frame=p.frame)
        except (StepSizeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _parse_grid(key: str, text: str) -> tuple[tuple[float, ...], ...]:
    groups = [g.strip() for g in text.split(";") if g.strip()]
    if not groups:
        raise ConfigError(f"{key}: empty grid")
    return tuple(tuple(_float(key, v) for v in g.replace(",", " ").split()) for g in groups)


def apply_overrides(base: Scenario, items: dict[str, str]) -> Scenario:
    """Return ``base`` updated with flat ``key = value`` settings; unknown keys are rejected."""
    params = {}
    top = {}
    for key, value in items.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        value = value.strip()
        if key == "scenario.name":
            top["name"] = value
        elif key == "bath.rate_unit":
            params["rate_unit"] = value.lower()
        elif key in ("drive.kind", "drive.frame"):
            params[_PARAM_FIELD[key]] = value.lower() or None
        elif key == "sim.dt_rule":
            params["dt_safety"] = engine.DT_SAFETY if value.lower() == "auto" else _float(key, value)
        elif key in ("bath.gamma0", "drive.rabi_cycles"):
            params[_PARAM_FIELD[key]] = None if value.lower() in ("auto", "none", "") else _float(key, value)
        elif key in _PARAM_FIELD:
            params[_PARAM_FIELD[key]] = _float(key, value)
        elif key == "sim.n_traj":
            top["n_traj"] = _int(key, value)
        elif key == "sim.seed":
            top["seed"] = _int(key, value)
        elif key == "sim.n_fictitious":
            top["n_fictitious"] = _int(key, value)
        elif key == "sweep.param":
            top["sweep_params"] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key == "sweep.grid":
            top["sweep_grid"] = _parse_grid(key, value)
    scenario = dataclasses.replace(base, params=dataclasses.replace(base.params, **params), **top)
    if "sweep_params" in top and "sweep_grid" not in top:
        raise ConfigError("sweep.param given without sweep.grid")
    if "sweep_params" in top and not top["sweep_params"]:
        scenario = dataclasses.replace(scenario, sweep_params=(), sweep_grid=())
    validate_scenario(scenario)
    return scenario


def parse_config_text(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        items[key] = value
    return items


def load_config(path: str, base: Scenario | None = None) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        items = parse_config_text(fh.read())
    if base is None:
        base = PRESETS[items["scenario.preset"]] if "scenario.preset" in items else Scenario("custom", ScenarioParams())
    items.pop("scenario.preset", None)
    return apply_overrides(base, items)


def scenario_to_items(s: Scenario) -> dict[str, str]:
    p = s.params
    items = {
        "scenario.name": s.name,
        "drive.kind": p.kind,
        "drive.epsilon": repr(p.epsilon),
        "drive.g": repr(p.g),
        "drive.omega1": repr(p.omega1),
        "drive.duration": repr(p.duration),
        "drive.frame": p.frame or "",
        "drive.rabi_cycles": "none" if p.rabi_cycles is None else repr(p.rabi_cycles),
        "bath.beta_omega1": repr(p.beta_omega1),
        "bath.gamma0": "auto" if p.gamma0 is None else repr(p.gamma0),
        "bath.rate_unit": p.rate_unit,
        "sim.dt_rule": repr(p.dt_safety),
        "sim.n_traj": str(s.n_traj),
        "sim.eta": repr(p.eta),
        "sim.seed": str(s.seed),
        "sim.n_fictitious": str(s.n_fictitious),
        "sweep.param": ",".join(s.sweep_params),
        "sweep.grid": "; ".join(" ".join(repr(v) for v in g) for g in s.sweep_grid),
    }
    return items


# --------------------------------------------------------------------------- presets

DESK_N_TRAJ = 10_000
FULL_N_TRAJ = 2_000_000

PRESETS: dict[str, Scenario] = {
    "fig3a": Scenario(
        "fig3a",
        ScenarioParams(kind="landauer", beta_omega1=3.0, duration=1.0),
        sweep_params=("drive.epsilon",),
        sweep_grid=((0.1, 1.0, 10.0, 100.0),),
        description="Landauer ramp, Jarzynski average vs ramp speed, beta*omega1 = 3",
    ),
    "fig3b": Scenario(
        "fig3b",
        ScenarioParams(kind="landauer", duration=1.0),
        sweep_params=("bath.beta_omega1", "drive.epsilon"),
        sweep_grid=((3.0, 0.3), (0.01, 0.1, 1.0, 10.0, 100.0)),
        description="Landauer ramp, mean entropy production vs ramp speed at beta*omega1 = 3 and 0.3",
    ),
    "fig3c": Scenario(
        "fig3c",
        ScenarioParams(kind="rabi", beta_omega1=3.0, rabi_cycles=1.0),
        sweep_params=("drive.g",),
        sweep_grid=((0.01, 0.1, 1.0, 10.0),),
        description="resonant Rabi drive over one Rabi period, Jarzynski average vs Rabi frequency, beta*omega1 = 3",
    ),
    "fig3d": Scenario(
        "fig3d",
        ScenarioParams(kind="rabi", beta_omega1=3.0, rabi_cycles=1.0),
        sweep_params=("drive.g",),
        sweep_grid=((0.01, 0.1, 1.0, 10.0, 100.0),),
        description="resonant Rabi drive over one Rabi period, mean entropy production vs Rabi frequency, beta*omega1 = 3",
    ),
    "fig4a": Scenario(
        "fig4a",
        ScenarioParams(kind="landauer", beta_omega1=0.1, duration=0.5, epsilon=600.0, rate_unit="spontaneous"),
        sweep_params=("sim.eta",),
        sweep_grid=((0.1, 0.3, 0.5, 0.8, 1.0),),
        description="fast Landauer ramp with lossy detection, raw and corrected Jarzynski average vs efficiency",
    ),
    "fig4bc": Scenario(
        "fig4bc",
        ScenarioParams(kind="landauer", beta_omega1=7e-3, duration=1.0, epsilon=9.0, rate_unit="spontaneous"),
        sweep_params=("sim.eta",),
        sweep_grid=((1.0, 0.3),),
        description="high-temperature Landauer ramp, entropy-production spread at efficiency 1 and 0.3",
    ),
}


def preset(name: str, full_scale: bool = False) -> Scenario:
    try:
        s = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r} (choose from {', '.join(PRESETS)})") from None
    return dataclasses.replace(s, n_traj=FULL_N_TRAJ if full_scale else DESK_N_TRAJ)


# --------------------------------------------------------------------------- measurement primitives


def sample_initial_state(bath: BathSpec, omega1_i: float, rng) -> tuple[np.ndarray, float]:
    """Draw ``|g>`` or ``|e>`` from the Gibbs distribution; returns the state and its weight."""
    p_e = thermal_population(omega1_i, bath) if bath.beta > 0 else 0.5
    u = float(rng) if isinstance(rng, (float, np.floating)) else float(rng.random())
    if u < p_e:
        return np.array([0.0, 1.0], dtype=complex), p_e
    return np.array([1.0, 0.0], dtype=complex), 1.0 - p_e


def final_projective_measurement(state: np.ndarray, rng, h_final: np.ndarray | None = None):
    """Born-rule projection in the energy basis; returns ``(eigenstate, energy)``."""
    state = np.asarray(state)
    p_e = abs(state[1]) ** 2 if state.ndim == 1 else float(np.real(state[1, 1]))
    u = float(rng) if isinstance(rng, (float, np.floating)) else float(rng.random())
    idx = int(u < p_e)
    out = np.zeros(2, dtype=complex)
    out[idx] = 1.0
    energy = float(np.real(h_final[idx, idx])) if h_final is not None else math.nan
    return out, energy


# --------------------------------------------------------------------------- runs


@dataclass(eq=False)
class PointResult:
    label: dict
    params: ScenarioParams
    dt: float
    n_steps: int
    delta_f: float
    stats: EnsembleStats
    corrected: EnsembleStats | None
    ledgers: LedgerBatch | None
    sigmas: np.ndarray | None
    sigma_stderr: np.ndarray | None
    min_ess: float | None
    max_first_law_residual: float


@dataclass(eq=False)
class ExperimentResult:
    scenario: Scenario
    points: list[PointResult]
    metadata: dict = field(default_factory=dict)


def block_size(n_steps: int) -> int:
    return int(min(MAX_BLOCK, max(MIN_BLOCK, UNIFORMS_PER_BLOCK // max(n_steps + 2, 1))))


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=os.path.dirname(__file__),
            capture_output=True,
            text=True,
            timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _run_block(ctx, indices: np.ndarray) -> dict:
    sched, eta, beta, delta_f = ctx["schedule"], ctx["eta"], ctx["beta"], ctx["delta_f"]
    n = sched.n_steps
    u = engine.trajectory_uniforms(ctx["seed"], indices, n + 2)
    excited = u[:, engine.INITIAL_COLUMN] < ctx["p_e_initial"]
    b = len(indices)
    if eta == 1.0:
        init = np.zeros((b, 2), dtype=complex)
        init[np.arange(b), excited.astype(int)] = 1.0
    else:
        init = np.zeros((b, 2, 2), dtype=complex)
        init[np.arange(b), excited.astype(int), excited.astype(int)] = 1.0
    keep = eta < 1.0
    res = engine.propagate(sched, init, u[:, engine.STEP_OFFSET : engine.STEP_OFFSET + n], eta=eta, keep_outcomes=keep)
    fin = res.final_state
    pop_e = (fin[:, 1].real ** 2 + fin[:, 1].imag ** 2) if fin.ndim == 2 else fin[:, 1, 1].real
    final_e = u[:, n + 1] < pop_e
    e_start, e_end = ctx["e_start"], ctx["e_end"]
    u_i = np.where(excited, e_start[1], e_start[0])
    u_f = np.where(final_e, e_end[1], e_end[0])
    if eta == 1.0:
        # the energy change caused by the final projection is quantum heat
        q_q = res.q_quantum + (u_f - res.u_end)
        q_cl = res.q_classical
    else:
        q_q = np.full(b, np.nan)
        q_cl = np.full(b, np.nan)
    du = u_f - u_i
    dis_meas = beta * (du - res.q_classical_measured - delta_f)
    dis = dis_meas if eta == 1.0 else np.full(b, np.nan)
    ledgers = LedgerBatch(
        trajectory_index=indices.astype(np.int64),
        u_initial=u_i,
        u_final=u_f,
        work=res.work,
        q_classical=q_cl,
        q_quantum=q_q,
        q_classical_measured=res.q_classical_measured,
        entropy_production=dis,
        entropy_production_measured=dis_meas,
        n_clicks1=res.n_clicks1,
        n_clicks2=res.n_clicks2,
    )
    if eta == 1.0:
        ledgers.check_first_law(n, ctx["omega1_0"])
    out = {"ledgers": ledgers, "sigma": None, "sigma_stderr": None, "ess": None}
    if keep:
        sig = np.empty(b)
        err = np.empty(b)
        ess = np.empty(b)
        for row in range(b):
            rec = TrajectoryRecord(
                outcomes=res.outcomes[row],
                initial_state=int(excited[row]),
                final_state=int(final_e[row]),
                seed=ctx["seed"],
                trajectory_index=int(indices[row]),
            )
            if rec.n_noclick == 0:
                sig[row], err[row], ess[row] = 0.0, 0.0, ctx["n_fictitious"]
                continue
            rng = engine.trajectory_generator(ctx["seed"], int(indices[row]), FICTITIOUS_STREAM)
            samples = sample_fictitious(rec, sched.protocol, sched.bath, eta, ctx["n_fictitious"], rng, sched.frame)
            est = sigma_eta(rec, samples, float(res.q_classical_measured[row]), beta, eta)
            sig[row], err[row], ess[row] = est.sigma, est.stderr, est.effective_sample_size
        out.update(sigma=sig, sigma_stderr=err, ess=ess)
    return out


def run_point(
    params: ScenarioParams,
    n_traj: int,
    seed: int,
    point_index: int = 0,
    threads: int | None = None,
    n_fictitious: int = DEFAULT_FICTITIOUS,
    retain_ledgers: bool = True,
    label: dict | None = None,
    n_bins: int = 50,
) -> PointResult:
    protocol, bath = params.protocol(), params.bath()
    config = SimConfig.for_protocol(protocol, bath, eta=params.eta, seed=seed, safety=params.dt_safety, frame=params.frame)
    sched = engine.schedule_for(config, protocol, bath, params.frame)
    w_end = protocol.omega1_0 if protocol.kind is DriveKind.RABI else protocol.omega1_final
    fe = free_energy_change(bath.beta, protocol.omega1_0, w_end)
    h_start = boundary_hamiltonian(protocol, protocol.t_i)
    h_end = boundary_hamiltonian(protocol, protocol.t_f)
    ctx = {
        "schedule": sched,
        "eta": params.eta,
        "beta": bath.beta,
        "delta_f": fe.delta_f,
        "seed": seed,
        "p_e_initial": thermal_population(protocol.omega1_0, bath),
        "e_start": np.real(np.diag(h_start)),
        "e_end": np.real(np.diag(h_end)),
        "omega1_0": protocol.omega1_0,
        "n_fictitious": n_fictitious,
    }
    base = point_index << POINT_SHIFT
    size = block_size(config.n_steps)
    blocks = [np.arange(base + s, base + min(s + size, n_traj), dtype=np.uint64) for s in range(0, n_traj, size)]
    threads = threads or os.cpu_count() or 1
    if threads == 1 or len(blocks) == 1:
        parts = [_run_block(ctx, blk) for blk in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda blk: _run_block(ctx, blk), blocks))
    ledgers = LedgerBatch.concatenate(p["ledgers"] for p in parts)
    stats = jarzynski_estimator(ledgers, use_measured=True, n_bins=n_bins)
    corrected = sigmas = sig_err = min_ess = None
    if params.eta < 1.0:
        sigmas = np.concatenate([p["sigma"] for p in parts])
        sig_err = np.concatenate([p["sigma_stderr"] for p in parts])
        min_ess = float(np.min(np.concatenate([p["ess"] for p in parts])))
        corrected = corrected_jarzynski(ledgers, sigmas, n_bins=None)
    resid = ledgers.first_law_residual
    max_resid = float(np.max(np.abs(resid))) if np.isfinite(resid).any() else math.nan
    return PointResult(
        label=label or {},
        params=params,
        dt=config.dt,
        n_steps=config.n_steps,
        delta_f=fe.delta_f,
        stats=stats,
        corrected=corrected,
        ledgers=ledgers if retain_ledgers else None,
        sigmas=sigmas,
        sigma_stderr=sig_err,
        min_ess=min_ess,
        max_first_law_residual=max_resid,
    )


def run_scenario(
    scenario: Scenario, threads: int | None = None, retain_ledgers: bool = True, progress=None
) -> ExperimentResult:
    validate_scenario(scenario)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    points = []
    for i, (params, label) in enumerate(zip(scenario.points(), scenario.point_labels())):
        points.append(
            run_point(
                params,
                scenario.n_traj,
                scenario.seed,
                point_index=i,
                threads=threads,
                n_fictitious=scenario.n_fictitious,
                retain_ledgers=retain_ledgers,
                label=label,
            )
        )
        if progress is not None:
            progress(i, points[-1])
    meta = {
        "seed": scenario.seed,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "git": _git_describe(),
    }
    return ExperimentResult(scenario, points, meta)


def histogram_for(point: PointResult, n_bins: int = 50):
    if point.ledgers is None:
        return point.stats.histogram
    return auto_histogram(point.ledgers.entropy_production_measured, n_bins)
