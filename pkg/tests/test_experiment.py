import dataclasses
import math

import numpy as np
import pytest

from qfluct.bath import BathSpec
from qfluct.experiment import (
    PRESETS,
    ConfigError,
    Scenario,
    ScenarioParams,
    apply_overrides,
    block_size,
    final_projective_measurement,
    load_config,
    parse_config_text,
    preset,
    run_point,
    run_scenario,
    sample_initial_state,
    scenario_to_items,
)


def test_initial_state_examples():
    rng = np.random.default_rng(0)
    cold = BathSpec(beta=800.0, gamma0=1.0)
    assert all(sample_initial_state(cold, 1.0, rng)[0][0] == 1 for _ in range(200))
    hot = BathSpec(beta=0.0, gamma0=1.0)
    draws = [sample_initial_state(hot, 1.0, rng)[0][1].real for _ in range(4000)]
    assert abs(np.mean(draws) - 0.5) < 3 * 0.5 / math.sqrt(4000)
    third = BathSpec(beta=math.log(3), gamma0=1.0)
    n = 20_000
    draws = [sample_initial_state(third, 1.0, rng) for _ in range(n)]
    freq = np.mean([s[1].real for s, _ in draws])
    assert abs(freq - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)
    state, weight = sample_initial_state(third, 1.0, 0.1)
    assert state[1] == 1 and weight == pytest.approx(0.25)
    state, weight = sample_initial_state(third, 1.0, 0.9)
    assert state[0] == 1 and weight == pytest.approx(0.75)


def test_final_measurement_examples():
    rng = np.random.default_rng(1)
    h = np.diag([-0.5, 0.5]).astype(complex)
    for _ in range(100):
        out, energy = final_projective_measurement(np.array([0, 1], dtype=complex), rng, h)
        assert out[1] == 1 and energy == 0.5
    plus = np.array([1, 1], dtype=complex) / math.sqrt(2)
    assert final_projective_measurement(plus, 0.49)[0][1] == 1
    assert final_projective_measurement(plus, 0.51)[0][0] == 1
    rho = np.array([[0.7, 0.2], [0.2, 0.3]], dtype=complex)
    n = 100_000
    hits = sum(final_projective_measurement(rho, u)[0][1].real for u in rng.random(n))
    assert abs(hits / n - 0.3) < 3 * math.sqrt(0.3 * 0.7 / n)
    assert math.isnan(final_projective_measurement(plus, 0.2)[1])


def test_gamma0_sets_unit_initial_emission_rate():
    for bw in (0.1, 3.0, 7e-3):
        p = ScenarioParams(beta_omega1=bw, omega1=2.0)
        assert p.reference_rate() == pytest.approx(1.0, rel=1e-12)
    p = ScenarioParams(kind="rabi", g=0.5, rabi_cycles=2.0)
    assert p.duration_time() == pytest.approx(2 * 2 * math.pi / 0.5)
    assert ScenarioParams(duration=0.5).duration_time() == pytest.approx(0.5)


def test_spontaneous_rate_unit():
    p = ScenarioParams(beta_omega1=0.1, epsilon=600.0, duration=0.5, rate_unit="spontaneous")
    assert p.bath().gamma0 == 1.0 and p.reference_rate() == 1.0
    assert p.duration_time() == 0.5 and p.protocol().epsilon == 600.0
    emission = dataclasses.replace(p, rate_unit="emission")
    assert emission.bath().gamma0 == pytest.approx(1.0 / (1.0 + 1.0 / math.expm1(0.1)))
    s = apply_overrides(Scenario("custom", ScenarioParams()), {"bath.rate_unit": "Spontaneous"})
    assert s.params.rate_unit == "spontaneous"
    with pytest.raises(ConfigError, match=r"bath\.rate_unit"):
        apply_overrides(Scenario("custom", ScenarioParams()), {"bath.rate_unit": "thermal"})
    assert {p.rate_unit for p in preset("fig4a").points()} == {"spontaneous"}


def test_presets_are_valid_and_desk_scale():
    assert list(PRESETS) == ["fig3a", "fig3b", "fig3c", "fig3d", "fig4a", "fig4bc"]
    for name in PRESETS:
        s = preset(name)
        assert s.n_traj == 10_000
        assert preset(name, full_scale=True).n_traj == 2_000_000
        assert s.description
    with pytest.raises(ConfigError):
        preset("fig9")
    assert preset("fig3b").points()[0].beta_omega1 == 3.0
    assert len(preset("fig3b").points()) == 10
    assert [p.eta for p in preset("fig4a").points()] == [0.1, 0.3, 0.5, 0.8, 1.0]


def test_config_parsing():
    text = """
    # a comment
    scenario.name = demo
    drive.kind = rabi      # trailing comment
    drive.g = 1.5
    bath.beta_omega1 = 3
    sim.n_traj = 50
    sweep.param = sim.eta
    sweep.grid = 1.0, 0.5
    """
    items = parse_config_text(text)
    assert items["drive.kind"] == "rabi" and items["sweep.grid"] == "1.0, 0.5"
    s = apply_overrides(Scenario("custom", ScenarioParams()), items)
    assert s.name == "demo" and s.params.g == 1.5 and s.n_traj == 50
    assert [p.eta for p in s.points()] == [1.0, 0.5]
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("a = 1\nnot a pair")


def test_config_round_trip(tmp_path):
    for name in PRESETS:
        s = preset(name)
        path = tmp_path / f"{name}.cfg"
        path.write_text("\n".join(f"{k} = {v}" for k, v in scenario_to_items(s).items()), encoding="utf-8")
        again = load_config(str(path))
        assert again == dataclasses.replace(s, description="")


def test_load_config_from_preset(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("scenario.preset = fig4a\nsim.n_traj = 20\n", encoding="utf-8")
    s = load_config(str(path))
    assert s.params.epsilon == 600.0 and s.n_traj == 20


@pytest.mark.parametrize(
    "key,value,fragment",
    [
        ("sim.eta", "1.5", "sim.eta"),
        ("drive.epsilon", "-1", "drive.epsilon"),
        ("drive.kind", "square", "drive.kind"),
        ("bath.beta_omega1", "0", "bath.beta_omega1"),
        ("bath.gamma0", "-2", "bath.gamma0"),
        ("sim.n_traj", "1", "sim.n_traj"),
        ("sim.n_traj", "2.5", "sim.n_traj"),
        ("sim.seed", "-1", "sim.seed"),
        ("sim.dt_rule", "0.9", "sim.dt_rule"),
        ("drive.rabi_cycles", "0", "drive.rabi_cycles"),
        ("drive.g", "nan", "drive.g"),
        ("sweep.param", "drive.kind", "sweep.param"),
        ("no.such.key", "1", "no.such.key"),
    ],
)
def test_config_errors_name_the_key(key, value, fragment):
    items = {key: value}
    if key == "sweep.param":
        items["sweep.grid"] = "1 2"
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        apply_overrides(Scenario("custom", ScenarioParams()), items)


def test_rabi_cycles_key():
    base = Scenario("custom", ScenarioParams(kind="rabi", g=1.0))
    s = apply_overrides(base, {"drive.rabi_cycles": "2"})
    assert s.params.rabi_cycles == 2.0
    assert apply_overrides(s, {"drive.rabi_cycles": "auto"}).params.rabi_cycles is None
    with pytest.raises(ConfigError, match="drive.g"):
        apply_overrides(Scenario("custom", ScenarioParams(kind="rabi")), {"drive.rabi_cycles": "1"})


def test_sweep_requires_grid():
    with pytest.raises(ConfigError):
        apply_overrides(Scenario("custom", ScenarioParams()), {"sweep.param": "sim.eta"})
    with pytest.raises(ConfigError):
        apply_overrides(Scenario("custom", ScenarioParams()), {"sweep.param": "sim.eta, drive.g", "sweep.grid": "1"})


def test_block_size_depends_only_on_steps():
    assert block_size(10) == 10_000
    assert block_size(10**7) == 64
    assert block_size(2000) == 4_000_000 // 2002


def _small(kind="landauer", eta=1.0, **kw):
    return ScenarioParams(kind=kind, epsilon=2.0, g=1.0, duration=0.5, beta_omega1=1.0, eta=eta, **kw)


@pytest.mark.parametrize("eta", [1.0, 0.4])
def test_run_point_is_deterministic_across_threads(eta):
    a = run_point(_small(eta=eta), 300, seed=5, threads=1, n_fictitious=200)
    b = run_point(_small(eta=eta), 300, seed=5, threads=3, n_fictitious=200)
    for f in dataclasses.fields(a.ledgers):
        np.testing.assert_array_equal(getattr(a.ledgers, f.name), getattr(b.ledgers, f.name))
    assert a.stats.je_mean == b.stats.je_mean
    if eta < 1:
        np.testing.assert_array_equal(a.sigmas, b.sigmas)
        assert a.corrected.je_mean == b.corrected.je_mean


def test_run_point_prefix_property():
    # a trajectory depends only on (seed, index), so a longer run extends a shorter one
    a = run_point(_small(), 100, seed=2, threads=1)
    b = run_point(_small(), 250, seed=2, threads=1)
    np.testing.assert_array_equal(a.ledgers.work, b.ledgers.work[:100])
    c = run_point(_small(), 100, seed=3, threads=1)
    assert not np.array_equal(a.ledgers.work, c.ledgers.work)


def test_run_point_closes_ledgers():
    r = run_point(_small("rabi"), 400, seed=1, threads=1)
    led = r.ledgers
    assert np.all(np.abs(led.first_law_residual) <= 1e-8 * r.n_steps)
    expected = r.params.bath().beta * (led.u_final - led.u_initial - led.q_classical - r.delta_f)
    np.testing.assert_allclose(led.entropy_production, expected, atol=1e-12)
    assert r.corrected is None and r.sigmas is None
    assert set(np.unique(led.u_initial)) <= {-0.5, 0.5}


def test_finite_efficiency_ledgers_hide_unobservable_parts():
    r = run_point(_small(eta=0.5), 200, seed=1, threads=1, n_fictitious=100)
    assert np.isnan(r.ledgers.q_quantum).all() and np.isnan(r.ledgers.entropy_production).all()
    assert np.isfinite(r.ledgers.entropy_production_measured).all()
    assert np.isfinite(r.sigmas).all() and r.min_ess > 0


def test_run_scenario_points_use_distinct_streams():
    s = Scenario("t", _small(), n_traj=50, sweep_params=("drive.epsilon",), sweep_grid=((2.0, 2.0),))
    res = run_scenario(s, threads=1, retain_ledgers=True)
    assert len(res.points) == 2
    assert res.points[0].ledgers.trajectory_index[0] == 0
    assert res.points[1].ledgers.trajectory_index[0] == 1 << 40
    assert not np.array_equal(res.points[0].ledgers.work, res.points[1].ledgers.work)
    assert {"seed", "started", "finished", "git"} <= set(res.metadata)
    lean = run_scenario(s, threads=1, retain_ledgers=False)
    assert lean.points[0].ledgers is None
    assert lean.points[0].stats.je_mean == res.points[0].stats.je_mean
