import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gcgan.data import Dataset, SynthSpec, correlation_matrix, synthesize, to_symmetric
from gcgan.errors import ConfigurationError
from gcgan.evaluation import (
    REPORT_FORMAT,
    DegenerateDistributionError,
    EvalReport,
    capacity_factor,
    correlation_error,
    evaluate,
    evaluate_scenarios,
    fit_laplace,
    fit_weibull,
    generate_scenarios,
    variability_series,
    variability_step,
    write_plot_data,
)
from gcgan.graph_filter import build_graph_filter
from gcgan.model import Generator


def reference_dataset(t=3000, seed=0):
    c = np.eye(3)
    c[0, 1] = c[1, 0] = 0.8
    return synthesize(SynthSpec(3, t, c, seed=seed))


class ReplayGenerator:
    """Stand-in generator that returns consecutive windows of a stored record."""

    def __init__(self, values, horizon):
        self.values = values
        self.n_farms = values.shape[0]
        self.noise_dim = 2
        self.horizon = horizon
        self.pos = 0

    def __call__(self, z):
        x = self.values[:, self.pos:self.pos + self.horizon]
        self.pos += self.horizon
        return to_symmetric(x)


# -- variability ---------------------------------------------------------------

@pytest.mark.parametrize("n,t,step", [(2, 10, 1), (3, 50, 6), (4, 288, 12)])
def test_variability_counts(n, t, step):
    x = np.random.default_rng(0).uniform(size=(n, t))
    assert variability_series(x, step).size == n * (t - step)


def test_variability_values():
    x = np.array([[0.0, 0.1, 0.3, 0.6]])
    np.testing.assert_allclose(variability_series(x, 2), [0.3, 0.5])


def test_variability_step_conversion():
    assert variability_step(15, 5) == 3
    assert variability_step(60, 5) == 12
    with pytest.raises(ConfigurationError):
        variability_step(15, 10)
    with pytest.raises(ConfigurationError):
        variability_series(np.zeros((2, 5)), 5)


# -- Laplace ----------------------------------------------------------------------

def test_laplace_recovery():
    s = stats.laplace.rvs(loc=0.01, scale=0.04, size=100_000, random_state=1)
    fit = fit_laplace(s, 15.0)
    assert fit.laplace_location == pytest.approx(0.01, abs=0.02 * 0.04)
    assert fit.laplace_scale == pytest.approx(0.04, rel=0.02)
    # peak of the fitted density is its value at the location
    assert fit.peak == pytest.approx(stats.laplace.pdf(0.0, scale=fit.laplace_scale), rel=1e-12)
    assert fit.variance == pytest.approx(stats.laplace.var(scale=fit.laplace_scale), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=10, max_size=200))
def test_laplace_peak_variance_identity(xs):
    try:
        fit = fit_laplace(xs)
    except DegenerateDistributionError:
        return
    assert fit.variance * fit.peak ** 2 == pytest.approx(0.5, rel=1e-12)


def test_laplace_matches_scipy_mle():
    s = np.random.default_rng(3).standard_t(4, size=2001)
    loc, scale = stats.laplace.fit(s)
    fit = fit_laplace(s)
    assert fit.laplace_location == pytest.approx(loc, abs=1e-12)
    assert fit.laplace_scale == pytest.approx(scale, rel=1e-9)


def test_laplace_degenerate():
    with pytest.raises(DegenerateDistributionError):
        fit_laplace(np.zeros(50))
    with pytest.raises(ValueError):
        fit_laplace([1.0, 2.0])


# -- Weibull -------------------------------------------------------------------------

@pytest.mark.parametrize("scale,shape", [(0.33, 2.9), (0.36, 2.98), (1.5, 0.8)])
def test_weibull_recovery(scale, shape):
    s = stats.weibull_min.rvs(shape, scale=scale, size=100_000, random_state=2)
    fit = fit_weibull(s)
    assert fit.scale == pytest.approx(scale, rel=0.02)
    assert fit.shape == pytest.approx(shape, rel=0.02)
    assert fit.zero_fraction == 0.0


def test_weibull_exponential_special_case():
    s = np.random.default_rng(4).exponential(0.3, size=100_000)
    assert fit_weibull(s).shape == pytest.approx(1.0, rel=0.03)


def test_weibull_matches_scipy_mle():
    s = stats.weibull_min.rvs(2.2, scale=0.4, size=3000, random_state=5)
    shape, _, scale = stats.weibull_min.fit(s, floc=0)
    fit = fit_weibull(s)
    assert fit.shape == pytest.approx(shape, rel=1e-4)
    assert fit.scale == pytest.approx(scale, rel=1e-4)
    expected_ll = stats.weibull_min.logpdf(s, fit.shape, scale=fit.scale).sum()
    assert fit.log_likelihood == pytest.approx(expected_ll, rel=1e-9)


def test_weibull_scale_equivariance():
    s = stats.weibull_min.rvs(2.0, scale=0.5, size=2000, random_state=6)
    a, b = fit_weibull(s), fit_weibull(7.0 * s)
    assert b.shape == pytest.approx(a.shape, rel=1e-9)
    assert b.scale == pytest.approx(7.0 * a.scale, rel=1e-9)


def test_weibull_zeros_reported_and_excluded():
    s = stats.weibull_min.rvs(2.0, scale=0.5, size=2000, random_state=7)
    with_zeros = np.concatenate([s, np.zeros(500)])
    fit = fit_weibull(with_zeros)
    assert fit.zero_fraction == pytest.approx(0.2)
    assert fit.shape == pytest.approx(fit_weibull(s).shape, rel=1e-12)


def test_weibull_rejects_small_or_constant():
    with pytest.raises(ValueError):
        fit_weibull(np.ones(50))
    with pytest.raises(DegenerateDistributionError):
        fit_weibull(np.full(200, 0.4))


# -- capacity factor and correlation ----------------------------------------------------

def test_capacity_factor_basics():
    assert capacity_factor(np.zeros((2, 5))) == 0.0
    assert capacity_factor(np.ones((2, 5))) == 1.0
    assert capacity_factor(np.full((3, 4), 0.35)) == pytest.approx(0.35)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_capacity_factor_invariances(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(3, 20))
    cf = capacity_factor(x)
    assert 0.0 <= cf <= 1.0
    assert capacity_factor(x[rng.permutation(3)][:, rng.permutation(20)]) == pytest.approx(cf, abs=1e-15)
    assert capacity_factor(np.concatenate([x, x], axis=1)) == pytest.approx(cf, abs=1e-15)


def test_correlation_error_hand_case():
    ref = np.eye(3)
    gen = np.array([[1.0, 0.1, 0.2], [0.1, 1.0, 0.3], [0.2, 0.3, 1.0]])
    mae, mx = correlation_error(gen, ref)
    assert mae == pytest.approx(0.2)
    assert mx == pytest.approx(0.3)


def test_correlation_error_ignores_diagonal_and_checks_shape():
    a = np.array([[1.0, 0.5], [0.5, 1.0]])
    b = np.array([[0.0, 0.5], [0.5, 0.0]])
    assert correlation_error(a, b) == (0.0, 0.0)
    with pytest.raises(ValueError):
        correlation_error(np.eye(2), np.eye(3))


# -- scenario generation and reports ---------------------------------------------------

def test_replay_generator_reproduces_reference_statistics():
    d = reference_dataset()
    report = evaluate(ReplayGenerator(d.values, 300), d, n_scenarios=10, seed=0)
    assert report.correlation_mae == pytest.approx(0.0, abs=1e-12)
    assert report.capacity_factor_generated == pytest.approx(report.capacity_factor_reference, abs=1e-12)
    assert report.weibull_generated.shape == pytest.approx(report.weibull_reference.shape, rel=1e-9)


def test_zero_generator_gives_half_and_non_fatal_errors():
    d = reference_dataset(t=400)
    g = Generator.build(build_graph_filter(np.eye(3)), [5, 10, 40], [2, 4], rng=0)
    for w in g.weights:
        w.value[:] = 0.0
    report = evaluate(g, d, n_scenarios=3, seed=1)
    assert report.capacity_factor_generated == 0.5
    assert "correlation_generated" in report.errors
    assert "weibull_generated" in report.errors
    assert any(k.startswith("variability_15_generated") for k in report.errors)
    assert report.weibull_reference is not None


def test_generate_scenarios_range_and_determinism():
    a = build_graph_filter(correlation_matrix(reference_dataset(t=400).values))
    g = Generator.build(a, [5, 10, 40], [2, 4], rng=0)
    x = generate_scenarios(g, 4, seed=9)
    y = generate_scenarios(g, 4, seed=9)
    assert len(x) == 4 and all(s.shape == (3, 40) for s in x)
    assert all(np.array_equal(p, q) for p, q in zip(x, y))
    assert all(s.min() >= 0.0 and s.max() <= 1.0 for s in x)
    with pytest.raises(ConfigurationError):
        generate_scenarios(g, 0)


def test_report_deterministic_and_round_trips():
    d = reference_dataset(t=600)
    a = build_graph_filter(correlation_matrix(d.values))
    g = Generator.build(a, [5, 10, 40], [2, 4], rng=3)
    r1 = evaluate(g, d, n_scenarios=5, seed=2)
    r2 = evaluate(g, d, n_scenarios=5, seed=2)
    assert r1.to_json() == r2.to_json()
    back = EvalReport.from_json(r1.to_json())
    assert back == r1
    assert json.loads(r1.to_json())["format"] == REPORT_FORMAT
    with pytest.raises(ValueError):
        EvalReport.from_dict({"n_scenarios": 1})


def test_variability_skipped_when_interval_does_not_divide():
    d = reference_dataset(t=400)
    d10 = Dataset(d.farm_ids, d.capacities, 10.0, d.values)
    report = evaluate_scenarios([d.values[:, :100]], d10)
    assert set(report.variability) == {"30", "60"}
    assert "variability_15" in report.errors


def test_plot_data_files(tmp_path):
    d = reference_dataset(t=600)
    scenarios = [d.values[:, i:i + 50] for i in range(0, 200, 50)]
    report = evaluate_scenarios(scenarios, d, seed=0)
    paths = write_plot_data(tmp_path, report, scenarios, d, bins=10)
    assert sorted(p.name for p in paths) == ["correlation.csv", "timeseries.csv", "variability_hist.csv"]
    with (tmp_path / "correlation.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i", "j", "value", "source"]
    assert len(rows) == 1 + 2 * 9
    with (tmp_path / "variability_hist.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    for key in ("15", "30", "60"):
        counts = [int(r["count"]) for r in rows if r["interval"] == key and r["source"] == "reference"]
        step = variability_step(float(key), d.interval_minutes)
        assert len(counts) == 10 and sum(counts) == 3 * (600 - step)
    with (tmp_path / "timeseries.csv").open() as fh:
        assert next(csv.reader(fh)) == ["farm", "t", "value", "source"]


def test_weibull_fit_json_fields_are_plain_numbers():
    d = reference_dataset(t=600)
    report = evaluate_scenarios([d.values], d)
    payload = json.loads(report.to_json())
    fit = payload["weibull_reference"]
    assert set(fit) == {"scale", "shape", "log_likelihood", "n_samples", "zero_fraction", "iterations"}
    assert all(isinstance(v, (int, float)) and math.isfinite(v) for v in fit.values())
