import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfluct import engine, qubit
from qfluct.engine import Outcome, TrajectoryRecord
from qfluct.estimators import (
    DegenerateRecordError,
    FictitiousBatch,
    auto_histogram,
    corrected_jarzynski,
    decompose_noclick,
    estimate_sigma,
    forward_log_probability,
    histogram,
    jarzynski_estimator,
    record_heat,
    record_schedule,
    reversed_log_probability,
    sample_fictitious,
    sigma_eta,
)
from qfluct.ledger import LedgerBatch

from conftest import package_objects
from oracles import Grid, enumerate_paths, exact_jarzynski, record_probability_finite_eta, sigma_by_enumeration

LANDAUER4 = Grid("landauer", omega0=1.0, beta=2.0, gamma0=1.0, t_f=1.0, n_steps=4, epsilon=2.0)
LANDAUER6 = Grid("landauer", omega0=1.0, beta=1.0, gamma0=1.5, t_f=1.2, n_steps=6, epsilon=3.0)
RABI3 = Grid("rabi", omega0=1.0, beta=1.5, gamma0=1.0, t_f=0.9, n_steps=3, g=2.0)


def _record(outcomes, i, f):
    return TrajectoryRecord(outcomes=np.asarray(outcomes, dtype=np.int8), initial_state=i, final_state=f)


def _dis(grid, path):
    return grid.beta * (path.delta_u - path.q_classical - grid.delta_f())


# --------------------------------------------------------------------------- ensemble statistics


def _ledgers(dis):
    dis = np.asarray(dis, dtype=float)
    z = np.zeros_like(dis)
    return LedgerBatch(
        trajectory_index=np.arange(len(dis)),
        u_initial=z,
        u_final=z,
        work=z,
        q_classical=z,
        q_quantum=z,
        q_classical_measured=z,
        entropy_production=dis,
        entropy_production_measured=dis,
        n_clicks1=z.astype(int),
        n_clicks2=z.astype(int),
    )


def test_jarzynski_estimator_examples():
    s = jarzynski_estimator(_ledgers([0.0, 0.0, 0.0]))
    assert (s.je_mean, s.je_stderr, s.mean_dis) == (1.0, 0.0, 0.0)
    s = jarzynski_estimator(_ledgers([math.log(2), -math.log(2)]))
    assert s.je_mean == pytest.approx(1.25)
    assert s.je_stderr == pytest.approx(0.75)
    with pytest.raises(ValueError):
        jarzynski_estimator(_ledgers([0.0]))


def test_corrected_equals_plain_without_correction():
    rng = np.random.default_rng(3)
    led = _ledgers(rng.normal(size=500))
    plain = jarzynski_estimator(led, use_measured=True, n_bins=None)
    corr = corrected_jarzynski(led, np.zeros(500), n_bins=None)
    assert (plain.je_mean, plain.je_stderr) == (corr.je_mean, corr.je_stderr)
    with pytest.raises(ValueError):
        corrected_jarzynski(led, np.zeros(3))


def test_histogram_examples():
    h = histogram([0.1, 0.2, 0.9, 1.5, -3.0, math.nan], 2, (0.0, 1.0))
    assert h.counts.tolist() == [2, 1]
    assert (h.underflow, h.overflow) == (1, 1)
    assert h.counts.sum() + h.underflow + h.overflow == 5
    np.testing.assert_allclose(h.edges, [0.0, 0.5, 1.0])
    with pytest.raises(ValueError):
        histogram([1.0], 0, (0.0, 1.0))
    with pytest.raises(ValueError):
        histogram([1.0], 3, (1.0, 1.0))
    flat = auto_histogram([2.0, 2.0, 2.0], 4)
    assert flat.counts.sum() == 3
    assert auto_histogram([], 5).counts.sum() == 0


# --------------------------------------------------------------------------- path probabilities


@pytest.mark.parametrize("grid", [LANDAUER4, RABI3], ids=["landauer", "rabi"])
def test_path_probabilities_match_enumeration(grid):
    protocol, bath = package_objects(grid)
    paths = enumerate_paths(grid)
    for path in paths:
        rec = _record(path.record, path.initial, path.final)
        lp = forward_log_probability(rec, protocol, bath, 1.0)
        lr = reversed_log_probability(rec, protocol, bath)
        if path.p_forward > 0:
            assert lp == pytest.approx(math.log(path.p_forward), abs=1e-10)
        else:
            assert lp == -math.inf
        if path.p_reverse > 0:
            assert lr == pytest.approx(math.log(path.p_reverse), abs=1e-10)
    assert sum(p.p_forward for p in paths) == pytest.approx(1.0, abs=1e-12)
    assert sum(p.p_reverse for p in paths) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("grid", [LANDAUER4, RABI3], ids=["landauer", "rabi"])
def test_detailed_fluctuation_relation(grid):
    protocol, bath = package_objects(grid)
    for path in enumerate_paths(grid):
        if path.p_forward < 1e-300:
            continue
        rec = _record(path.record, path.initial, path.final)
        ratio = forward_log_probability(rec, protocol, bath, 1.0) - reversed_log_probability(rec, protocol, bath)
        assert ratio == pytest.approx(_dis(grid, path), abs=1e-9)
        assert record_heat(rec, protocol, bath) == pytest.approx(path.q_classical, abs=1e-12)


@pytest.mark.parametrize("grid", [LANDAUER4, LANDAUER6, RABI3], ids=["l4", "l6", "rabi"])
def test_integral_fluctuation_theorem_is_exact(grid):
    total = sum(p.p_forward * math.exp(-_dis(grid, p)) for p in enumerate_paths(grid))
    assert total == pytest.approx(1.0, abs=1e-12)
    assert exact_jarzynski(grid) == pytest.approx(1.0, abs=1e-12)


def test_finite_efficiency_record_probabilities_sum_to_one():
    grid = LANDAUER4
    protocol, bath = package_objects(grid)
    eta = 0.4
    total = 0.0
    for i, f in itertools.product((0, 1), repeat=2):
        for record in itertools.product((0, 1, 2), repeat=grid.n_steps):
            p = record_probability_finite_eta(grid, i, record, f, eta)
            total += p
            lp = forward_log_probability(_record(record, i, f), protocol, bath, eta)
            if p > 1e-300:
                assert lp == pytest.approx(math.log(p), abs=1e-10)
    assert total == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------------------- no-click decomposition


def test_decomposition_reconstructs_noclick_map(rng):
    grid = RABI3
    protocol, bath = package_objects(grid)
    sched = record_schedule(grid.n_steps, protocol, bath)
    ops = sched.operators(1)
    psi = qubit.normalize(rng.normal(size=2) + 1j * rng.normal(size=2))
    rho = 0.7 * qubit.density_from_pure(psi) + 0.3 * np.eye(2) / 2
    for eta in (0.0, 0.3, 0.99):
        dec = decompose_noclick(ops, eta)
        np.testing.assert_allclose(dec.apply(rho), engine.noclick_map(rho, ops, eta), atol=1e-14)
        assert [b.label for b in dec.branches] == ["00", "01", "02"]
        assert dec.masses(rho).sum() == pytest.approx(np.trace(engine.noclick_map(rho, ops, eta)).real)
        for b in dec.branches:
            out = b.operator @ psi
            # each branch keeps pure states pure
            assert qubit.purity(qubit.density_from_pure(out / max(np.linalg.norm(out), 1e-300))) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        decompose_noclick(ops, 1.0)


# --------------------------------------------------------------------------- fictitious trajectories


def test_sigma_vanishes_for_perfect_detection():
    rec = _record([0, 1, 0, 0], 1, 0)
    assert sigma_eta(rec, None, -1.0, 2.0, 1.0).sigma == 0.0
    all_clicks = _record([1, 2, 1], 1, 0)
    protocol, bath = package_objects(LANDAUER4)
    assert estimate_sigma(all_clicks, protocol, bath, 0.3, -1.0).sigma == 0.0


def test_sigma_is_zero_when_only_the_measured_heat_is_possible():
    # a single absorbed weight at beta = 0 makes every tilt vanish
    samples = FictitiousBatch(np.array([0.5, -0.5, 1.5]), np.array([-1.0, -2.0, -np.inf]))
    est = sigma_eta(_record([0, 0], 0, 0), samples, 0.0, 0.0, 0.5)
    assert est.sigma == pytest.approx(0.0, abs=1e-15)
    assert est.effective_sample_size == pytest.approx(1 / ((1 / (1 + math.e**-1)) ** 2 + (math.e**-1 / (1 + math.e**-1)) ** 2))
    assert len(list(samples)) == 2


def test_sigma_rejects_fully_incompatible_samples():
    samples = FictitiousBatch(np.zeros(2), np.full(2, -np.inf))
    with pytest.raises(DegenerateRecordError):
        sigma_eta(_record([0], 0, 0), samples, 0.0, 1.0, 0.5)


def test_ess_warning():
    lw = np.full(1000, -100.0)
    lw[0] = 0.0
    samples = FictitiousBatch(np.zeros(1000), lw)
    with pytest.warns(RuntimeWarning, match="effective sample size"):
        sigma_eta(_record([0], 0, 0), samples, 0.0, 1.0, 0.5)


def test_impossible_record_raises():
    grid = LANDAUER4
    protocol, bath = package_objects(grid)
    # two consecutive emissions cannot happen on a qubit
    rec = _record([1, 1, 0, 0], 1, 0)
    with pytest.raises(DegenerateRecordError):
        sample_fictitious(rec, protocol, bath, 0.5, 200, np.random.default_rng(0))


def test_event_sampler_needs_diagonal_dynamics():
    protocol, bath = package_objects(RABI3)
    with pytest.raises(ValueError):
        sample_fictitious(_record([0, 0, 0], 0, 0), protocol, bath, 0.5, 10, np.random.default_rng(0), method="event")
    with pytest.raises(ValueError):
        sample_fictitious(_record([0, 0, 0], 0, 0), protocol, bath, 0.5, 10, np.random.default_rng(0), method="magic")


def _records_for(grid, eta, rng, n):
    """Records drawn from the exact finite-efficiency distribution."""
    keys, probs = [], []
    for i, f in itertools.product((0, 1), repeat=2):
        for record in itertools.product((0, 1, 2), repeat=grid.n_steps):
            p = record_probability_finite_eta(grid, i, record, f, eta)
            if p > 0:
                keys.append((i, record, f))
                probs.append(p)
    probs = np.array(probs) / np.sum(probs)
    return [keys[j] for j in rng.choice(len(keys), size=n, p=probs)]


@pytest.mark.parametrize("method", ["event", "step"])
def test_weights_are_unbiased_for_record_probability(method):
    grid = LANDAUER4
    protocol, bath = package_objects(grid)
    eta = 0.3
    rng = np.random.default_rng(11)
    for i, record, f in _records_for(grid, eta, rng, 6):
        rec = _record(record, i, f)
        batch = sample_fictitious(rec, protocol, bath, eta, 40_000, rng, method=method)
        w = np.exp(batch.log_weight)
        exact = record_probability_finite_eta(grid, i, record, f, eta)
        assert abs(w.mean() - exact) <= 5 * w.std() / math.sqrt(len(w)) + 1e-15


def test_event_sampler_draws_every_sample_from_the_record():
    # conditioned on the whole record: all draws are compatible and weigh exactly P(record)
    grid = LANDAUER6
    protocol, bath = package_objects(grid)
    eta = 0.3
    rng = np.random.default_rng(13)
    for i, record, f in _records_for(grid, eta, rng, 8):
        rec = _record(record, i, f)
        batch = sample_fictitious(rec, protocol, bath, eta, 500, rng, method="event")
        exact = record_probability_finite_eta(grid, i, record, f, eta)
        np.testing.assert_allclose(np.exp(batch.log_weight), exact, rtol=1e-12)


def test_event_sampler_handles_records_with_many_hidden_jumps():
    # hot bath, 12 detected clicks in an arbitrary order: blind proposals almost never match it
    grid = Grid("landauer", omega0=1.0, beta=7e-3, gamma0=1.0, t_f=1.0, n_steps=4000, epsilon=9.0)
    protocol, bath = package_objects(grid)
    outcomes = np.zeros(grid.n_steps, dtype=np.int8)
    outcomes[np.arange(150, 3900, 320)] = [1, 1, 2, 1, 1, 1, 2, 2, 2, 1, 1, 2]
    rec = TrajectoryRecord(outcomes, 0, 1, seed=1, trajectory_index=0)
    batch = sample_fictitious(rec, protocol, bath, 0.3, 2000)
    assert np.isfinite(batch.log_weight).all()
    assert np.ptp(batch.log_weight) == 0.0
    assert np.ptp(batch.q_cl_fictitious) > 0.0


def test_weights_are_unbiased_on_coherent_dynamics():
    grid = RABI3
    protocol, bath = package_objects(grid)
    eta = 0.5
    rng = np.random.default_rng(5)
    for i, record, f in _records_for(grid, eta, rng, 6):
        rec = _record(record, i, f)
        batch = sample_fictitious(rec, protocol, bath, eta, 40_000, rng)
        w = np.exp(batch.log_weight)
        exact = record_probability_finite_eta(grid, i, record, f, eta)
        assert abs(w.mean() - exact) <= 5 * w.std() / math.sqrt(len(w)) + 1e-15


@pytest.mark.parametrize("grid,method", [(LANDAUER6, "event"), (LANDAUER6, "step"), (RABI3, "step")])
def test_sigma_matches_enumeration(grid, method):
    protocol, bath = package_objects(grid)
    eta = 0.3
    rng = np.random.default_rng(21)
    for i, record, f in _records_for(grid, eta, rng, 8):
        rec = _record(record, i, f)
        if rec.n_noclick == 0:
            continue
        q_meas = record_heat(rec, protocol, bath)
        exact = sigma_by_enumeration(grid, i, record, f, eta, q_meas)
        batch = sample_fictitious(rec, protocol, bath, eta, 10_000, rng, method=method)
        est = sigma_eta(rec, batch, q_meas, bath.beta, eta)
        assert abs(est.sigma - exact) <= 3 * est.stderr + 1e-12


def test_samplers_agree_on_fictitious_heat_distribution():
    grid = LANDAUER6
    protocol, bath = package_objects(grid)
    rec = _record([0, 0, 0, 0, 0, 0], 0, 0)
    rng = np.random.default_rng(8)
    means = []
    for method in ("event", "step"):
        b = sample_fictitious(rec, protocol, bath, 0.3, 40_000, rng, method=method)
        p = np.exp(b.log_weight - b.log_weight.max())
        means.append((np.sum(p * b.q_cl_fictitious) / p.sum(), np.mean(np.isfinite(b.log_weight))))
    assert means[0][0] == pytest.approx(means[1][0], abs=0.01)


def test_generalized_fluctuation_theorem_is_exact():
    grid = LANDAUER4
    protocol, bath = package_objects(grid)
    eta = 0.3
    total = 0.0
    for i, f in itertools.product((0, 1), repeat=2):
        du = grid.energies(grid.t_f)[f] - grid.energies(0.0)[i]
        for record in itertools.product((0, 1, 2), repeat=grid.n_steps):
            p = record_probability_finite_eta(grid, i, record, f, eta)
            if p <= 0:
                continue
            q = record_heat(_record(record, i, f), protocol, bath)
            sigma = sigma_by_enumeration(grid, i, record, f, eta, q) if 0 in record else 0.0
            total += p * math.exp(-grid.beta * (du - q - grid.delta_f()) - sigma)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_default_generator_is_deterministic():
    protocol, bath = package_objects(LANDAUER6)
    rec = TrajectoryRecord(np.zeros(6, dtype=np.int8), 0, 0, seed=7, trajectory_index=3)
    a = sample_fictitious(rec, protocol, bath, 0.3, 500)
    b = sample_fictitious(rec, protocol, bath, 0.3, 500)
    np.testing.assert_array_equal(a.log_weight, b.log_weight)
    np.testing.assert_array_equal(a.q_cl_fictitious, b.q_cl_fictitious)


@given(st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_sampled_weights_are_valid(eta, seed):
    protocol, bath = package_objects(LANDAUER6)
    rng = np.random.default_rng(seed)
    record = tuple(int(x) for x in rng.integers(0, 3, size=6))
    rec = _record(record, int(rng.integers(0, 2)), int(rng.integers(0, 2)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            b = sample_fictitious(rec, protocol, bath, eta, 200, rng)
        except DegenerateRecordError:
            assert record_probability_finite_eta(LANDAUER6, rec.initial_state, record, rec.final_state, eta) < 1e-3
            return
    lw = b.log_weight
    assert not np.isnan(lw).any()
    assert np.all(lw[np.isfinite(lw)] <= 1e-12)
    assert len(list(b)) == int(np.isfinite(lw).sum())
