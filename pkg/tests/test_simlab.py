import io

import numpy as np
import pytest
from scipy import integrate, stats

from sbftl.errors import ConfigError
from sbftl.flasso import AdditiveFit, FitDiagnostics
from sbftl.kernels import Bandwidths, EvalGrid
from sbftl.simlab import (CSV_HEADER, ScenarioConfig, TrueModel, centering_constants, covariate_density,
                          gen_auxiliary, gen_scaled_source, gen_target, mise, study_cells, run_experiment,
                          rows_to_csv, scenario_from_dict, scenario_to_dict, target_covariates)
from sbftl.smoother import ComponentCurve


@pytest.mark.parametrize("t", [0.0, 0.1, 1.0])
def test_covariate_density_integrates_to_one(t):
    mass, _ = integrate.quad(covariate_density, 0, 1, args=(t,), points=[1 / (1 + t), t / (1 + t)], limit=200)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_density_matches_histogram(rng):
    x = target_covariates(200_000, 1, 1.0, rng)[:, 0]
    hist, edges = np.histogram(x, bins=20, range=(0, 1), density=True)
    mids = 0.5 * (edges[1:] + edges[:-1])
    assert np.max(np.abs(hist - covariate_density(mids, 1.0))) < 0.05


@pytest.mark.parametrize("t", [0.1, 1.0])
def test_components_are_centered(t):
    model = TrueModel(t)
    for j in range(1, 5):
        mean, _ = integrate.quad(lambda u: model.f0(j, u) * covariate_density(u, t), 0, 1,
                                 points=[1 / (1 + t), t / (1 + t)], limit=200)
        assert abs(mean) <= 1e-3
    coarse = np.array(centering_constants(t, 100_000))
    fine = np.array(centering_constants(t, 1_000_000))
    assert np.max(np.abs(coarse - fine)) <= 1e-4


def test_component_multiples():
    model = TrueModel(0.1)
    u = np.linspace(0, 1, 57)
    for j in range(1, 5):
        assert np.allclose(model.f0(j + 4, u), 1.5 * model.f0(j, u))
        assert np.allclose(model.f0(j + 8, u), 2.0 * model.f0(j, u))
    assert not np.any(model.f0(13, u))


def test_auxiliary_modifications():
    df = 0.7
    m = TrueModel(1.0, df)
    u = np.linspace(0, 1, 31)
    f0 = m.f0
    for j in (5, 6, 7):
        assert np.allclose(m.component(1, j, u), f0(j, u) + df * f0(j - 3, u))
    assert np.allclose(m.component(1, 8, u), f0(8, u) + df * f0(1, u))
    for j in (9, 10, 11):
        assert np.allclose(m.component(2, j, u), f0(j, u) + df * f0(j - 7, u))
    assert np.allclose(m.component(2, 12, u), f0(12, u) + df * f0(1, u))
    assert np.allclose(m.component(1, 13, u), df * sum(m.component(1, k, u) for k in (5, 6, 7, 8)))
    assert np.allclose(m.component(2, 13, u), df * sum(m.component(2, k, u) for k in (9, 10, 11, 12)))
    # untouched components agree with the target
    assert np.allclose(m.component(1, 10, u), f0(10, u))
    assert np.allclose(m.component(2, 3, u), f0(3, u))


def test_no_dissimilarity_means_identical_populations(rng):
    m = TrueModel(0.1, 0.0)
    u = np.linspace(0, 1, 31)
    for pop in (1, 2):
        for j in range(1, 13):
            assert np.allclose(m.component(pop, j, u), m.f0(j, u))
        assert not np.any(m.component(pop, 13, u))
    cfg = ScenarioConfig(n0=5000, n_aux=[5000, 5000], d=13, t=0.1, delta_p=0.0, delta_f=0.0)
    tx = gen_target(cfg, rng, m).x
    ax = gen_auxiliary(cfg, 1, rng, m).x
    assert stats.ks_2samp(tx[:, 0], ax[:, 0]).statistic <= 0.05


def test_covariates_in_unit_interval(rng):
    cfg = ScenarioConfig(n0=300, n_aux=[300, 300], d=13, t=1.0, delta_p=1.0)
    for x in (gen_target(cfg, rng).x, gen_auxiliary(cfg, 2, rng).x):
        assert x.min() >= 0 and x.max() <= 1
    # every auxiliary row is an average at delta_p = 1: the spread shrinks
    assert gen_auxiliary(cfg, 1, rng).x.std() < gen_target(cfg, rng).x.std()
    with pytest.raises(ConfigError):
        gen_auxiliary(cfg, 3, rng)


def test_scaled_source(rng):
    cfg = ScenarioConfig(n0=50, d=13)
    s = gen_scaled_source(cfg, np.random.default_rng(1), 40, -1.0)
    assert s.n == 40 and s.d == 13
    # scale -1 removes the signal entirely
    assert np.std(s.y) < 1.5


def _truth_on_grid(model, d, size):
    grid = EvalGrid.uniform(size)
    u = grid.points
    comps = []
    for j in range(1, d + 1):
        v = model.f0(j, u)
        comps.append(ComponentCurve(v, np.gradient(v, u)))
    return AdditiveFit(intercept=0.0, components=comps, active_set=tuple(range(12)),
                       bandwidths=Bandwidths.constant(0.1, d), grid=grid, diagnostics=FitDiagnostics())


def test_mise_of_truth_is_tiny(rng):
    cfg = ScenarioConfig(d=13, t=0.1)
    model = TrueModel(cfg.t)
    value, se = mise(_truth_on_grid(model, 13, 401), model, cfg, rng, mc_size=20_000)
    assert 0 <= value <= 1e-3


def test_mise_of_zero_estimate_is_signal_variance(rng):
    cfg = ScenarioConfig(d=13, t=1.0)
    model = TrueModel(cfg.t)

    class Zero:
        def predict(self, x):
            return np.zeros(len(x))

    value, se = mise(Zero(), model, cfg, rng, mc_size=100_000)
    oracle = model.regression(0, target_covariates(100_000, 13, cfg.t, np.random.default_rng(77)))
    var = float(np.mean(oracle ** 2))
    oracle_se = float(np.std(oracle ** 2) / np.sqrt(oracle.size))
    assert abs(value - var) <= 3 * np.hypot(se, oracle_se)
    assert se <= 0.02 * value
    with pytest.raises(ConfigError):
        mise(Zero(), model, cfg, rng, mc_size=999)


def test_scenario_validation_and_round_trip():
    with pytest.raises(ConfigError):
        ScenarioConfig(d=5)
    with pytest.raises(ConfigError):
        ScenarioConfig(delta_p=1.5)
    cfg = ScenarioConfig(n0=120, d=40, t=1.0, seed=9)
    assert scenario_from_dict(scenario_to_dict(cfg)) == cfg
    assert scenario_from_dict(scenario_to_dict(cfg), d=50).d == 50
    with pytest.raises(ConfigError):
        scenario_from_dict({"n0": 100, "bogus": 1})


def test_study_cells():
    cells = study_cells(100)
    assert len(cells) == 32
    assert len({c.label() for c in cells}) == 32
    assert {c.d for c in cells} == {200, 400}


def test_run_experiment_is_deterministic():
    cfg = ScenarioConfig(n0=40, n_aux=[60, 60], d=13, seed=5, replications=1)
    a, b = io.StringIO(), io.StringIO()
    rows = run_experiment([cfg], ["LL"], out=a, mc_size=2000, lambda_grid_size=5)
    run_experiment([cfg], ["LL"], out=b, mc_size=2000, lambda_grid_size=5)
    assert len(rows) == 1 and rows[0][-1] == "ok"
    assert a.getvalue() == b.getvalue()
    assert a.getvalue().splitlines()[0] == ",".join(CSV_HEADER)
    assert rows_to_csv(rows) == a.getvalue()
    other = run_experiment([ScenarioConfig(n0=40, n_aux=[60, 60], d=13, seed=6)], ["LL"], mc_size=2000,
                           lambda_grid_size=5)
    assert other[0][3] != rows[0][3]
    with pytest.raises(ConfigError):
        run_experiment([cfg], ["XX"])


def test_failures_are_recorded_not_raised(monkeypatch):
    import sbftl.methods

    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(sbftl.methods, "fit_method", boom)
    rows = run_experiment([ScenarioConfig(n0=40, d=13)], ["NW", "LL"], mc_size=2000)
    assert [r[-1] for r in rows] == ["error:RuntimeError"] * 2
    assert np.isnan(rows[0][4])
