import csv
import math

import numpy as np
import pytest

import poolerc

APP_KNOTS = [math.log(v) for v in (50, 60, 85, 100, 125, 200, 500, 2200)]


def test_bspline_partition_of_unity():
    x = np.linspace(0.0, 1.0, 101)
    b = poolerc.bspline_basis(x, 3, 0.0, 1.0, [0.3, 0.7])
    assert b.shape == (101, 6)
    assert np.max(np.abs(b.sum(axis=1) - 1.0)) < 1e-12


def test_ispline_monotone_and_clamped():
    x = np.linspace(APP_KNOTS[0] - 0.5, APP_KNOTS[-1] + 0.5, 2000)
    m = poolerc.ispline_basis(x, 3, APP_KNOTS[0], APP_KNOTS[-1], APP_KNOTS[1:-1])
    assert np.all(np.diff(m, axis=0) >= 0.0)
    assert m.min() >= 0.0 and m.max() <= 1.0
    assert np.all(m[-1] == 1.0)


def test_natural_cubic_is_centered():
    weeks = np.arange(53.0)
    n = poolerc.natural_cubic_basis(weeks, 8, weeks)
    assert n.shape == (53, 8)
    assert np.max(np.abs(n.mean(axis=0))) < 1e-12


def test_bad_knots_raise():
    with pytest.raises(poolerc.Error):
        poolerc.bspline_basis([0.5], 3, 1.0, 0.0, [])


def test_pooling_factor_extremes():
    e = np.tile(np.arange(5.0), (100, 1))
    assert abs(poolerc.pooling_factor(e)) < 1e-12


def exposure_columns(seed=1):
    rng = np.random.default_rng(seed)
    group, household, day, value = [], [], [], []
    for g, centre in enumerate((4.0, 5.0)):
        for h in range(15):
            alpha = 0.3 * rng.standard_normal()
            for r in range(2):
                group.append(f"g{g}")
                household.append(f"h{g}_{h}")
                day.append(int(30 * r + h))
                value.append(centre + alpha + 0.5 * rng.standard_normal())
    return group, household, day, value


def test_fit_exposure():
    group, household, day, value = exposure_columns()
    fit = poolerc.fit_exposure(group, household, day, value, trend_df=0, chains=2, warmup=200, draws=200,
                               seed=3, threads=1)
    names = fit.parameter_names
    assert "eta[g0]" in names and "eta[g1]" in names
    assert fit.draws.shape == (400, len(names))
    summary = {row["name"]: row for row in fit.summary()}
    assert summary["eta[g0]"]["mean"] < summary["eta[g1]"]["mean"]
    means = fit.household_means()
    assert len(means) == 30
    assert all(r["q025"] < r["mean"] < r["q975"] for r in means)
    at_draw = fit.household_means(draw=5)
    assert all(r["sd"] == 0.0 for r in at_draw)
    pf = fit.pooling_factors()
    assert pf["cluster"] is None
    assert 0.0 <= pf["household"] <= 1.0


def test_fit_exposure_is_deterministic():
    cols = exposure_columns(2)
    a = poolerc.fit_exposure(*cols, trend_df=0, chains=1, warmup=150, draws=150, seed=9)
    b = poolerc.fit_exposure(*cols, trend_df=0, chains=1, warmup=150, draws=150, seed=9)
    assert np.array_equal(a.draws, b.draws)


def test_fit_exposure_rejects_ragged_columns():
    group, household, day, value = exposure_columns()
    with pytest.raises(poolerc.ValidationError):
        poolerc.fit_exposure(group, household[:-1], day, value)


def test_fit_outcome_nonneg_curve():
    rng = np.random.default_rng(4)
    study, subject, period, cases, trials, x = [], [], [], [], [], []
    for s in ("a", "b"):
        for i in range(60):
            xi = rng.uniform(3.6, 6.4)
            p = 1.0 / (1.0 + math.exp(-(-1.5 + 1.2 / (1.0 + math.exp(-2.5 * (xi - 5.0))))))
            for t in range(1, 5):
                study.append(s)
                subject.append(str(i))
                period.append(t)
                cases.append(int(rng.random() < p))
                trials.append(1)
                x.append(xi)
    fit = poolerc.fit_outcome(study, subject, period, cases, trials, x, knots=[3.5, 4.5, 5.0, 5.5, 6.5],
                              constraint="nonneg", time_df=0, chains=2, warmup=200, draws=200, seed=5,
                              threads=1)
    assert fit.studies == ["a", "b"]
    assert fit.beta_draws().min() >= 0.0
    grid = poolerc.curve_grid(3.5, 6.5, 50)
    curve = fit.curve(grid)
    assert len(curve["x_log"]) == 50
    assert np.all(np.diff(curve["draws"], axis=1) >= 0.0)
    assert curve["mean"][0] == 0.0
    with pytest.raises(poolerc.ConfigError):
        poolerc.fit_outcome(study, subject, period, cases, trials, x, mode="bogus")


def test_pipeline_commands(tmp_path):
    poolerc.write_example_data(tmp_path, 3)
    config = tmp_path / "config.json"
    out = tmp_path / "run"
    code, log = poolerc.run_command("fit-exposure", config, threads=1, out=out)
    assert code in (0, 3)
    assert "wrote" in log
    code, _ = poolerc.run_command("assign-exposure", config, out=out)
    assert code == 0
    code, _ = poolerc.run_command("fit-outcome", config, threads=1, out=out)
    assert code in (0, 3)
    with open(out / "curve.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) >= 60
    assert float(rows[0]["odds_ratio"]) == pytest.approx(1.0)
    with pytest.raises(poolerc.ConfigError):
        poolerc.run_command("no-such-command", config, out=out)
