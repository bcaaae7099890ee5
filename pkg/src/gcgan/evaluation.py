"""Statistics for comparing generated scenarios with reference data.

Correlation fidelity, interval variability (Laplace fit), capacity factor
and a two-parameter Weibull fit of the marginal distribution.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, correlation_matrix, from_symmetric
from .errors import ConfigurationError

REPORT_FORMAT = "gcgan-eval-report/1"
VARIABILITY_MINUTES = (15, 30, 60)


class DegenerateDistributionError(ValueError):
    """Samples carry no spread, so the distribution cannot be fitted."""


class FitError(RuntimeError):
    """An iterative fit failed to converge."""


@dataclass
class VariabilityStats:
    interval_minutes: float
    laplace_location: float
    laplace_scale: float
    peak: float
    variance: float
    n_samples: int


@dataclass
class WeibullFit:
    scale: float
    shape: float
    log_likelihood: float
    n_samples: int = 0
    zero_fraction: float = 0.0
    iterations: int = 0


def variability_series(x: np.ndarray, step: int) -> np.ndarray:
    """Differences ``x[:, t+step] - x[:, t]`` pooled over farms and valid ``t``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if step < 1 or step >= x.shape[1]:
        raise ConfigurationError(f"step {step} must lie in [1, T={x.shape[1]})")
    return (x[:, step:] - x[:, :-step]).ravel()


def fit_laplace(samples, interval_minutes: float = float("nan")) -> VariabilityStats:
    """Maximum-likelihood Laplace fit: median location, mean absolute deviation scale."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 10:
        raise ValueError(f"need at least 10 samples, got {s.size}")
    loc = float(np.median(s))
    b = float(np.mean(np.abs(s - loc)))
    if b == 0.0:
        raise DegenerateDistributionError("all variability samples are identical")
    return VariabilityStats(interval_minutes, loc, b, 1.0 / (2.0 * b), 2.0 * b * b, int(s.size))


def capacity_factor(x) -> float:
    """Energy produced over energy at rated output; for per-unit data, the mean."""
    return float(np.mean(x))


def _weibull_profile(k: float, log_y: np.ndarray, mean_log: float):
    """Shape score equation and its derivative on data rescaled so that max(y) == 1."""
    yk = np.exp(k * log_y)
    s0 = yk.sum()
    s1 = (yk * log_y).sum() / s0
    s2 = (yk * log_y * log_y).sum() / s0
    f = s1 - 1.0 / k - mean_log
    df = (s2 - s1 * s1) + 1.0 / (k * k)
    return f, df


def fit_weibull(samples, tol: float = 1e-10, max_iter: int = 200, min_samples: int = 100) -> WeibullFit:
    """Two-parameter Weibull MLE on the strictly positive samples.

    The shape solves the profile score equation by Newton steps kept inside
    a sign-change bracket (bisection whenever Newton leaves it); the scale
    follows in closed form.
    """
    s = np.asarray(samples, dtype=np.float64).ravel()
    total = s.size
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValueError("Weibull samples must be finite and non-negative")
    pos = s[s > 0]
    if pos.size < min_samples:
        raise ValueError(f"need at least {min_samples} positive samples, got {pos.size}")
    x_max = pos.max()
    log_y = np.log(pos / x_max)
    mean_log = float(log_y.mean())
    if mean_log == 0.0 or np.ptp(log_y) == 0.0:
        raise DegenerateDistributionError("all positive samples are equal")

    lo, hi = 1.0, 1.0
    while _weibull_profile(lo, log_y, mean_log)[0] > 0:
        lo /= 2.0
    while _weibull_profile(hi, log_y, mean_log)[0] < 0:
        hi *= 2.0
        if hi > 1e6:
            raise FitError("could not bracket the Weibull shape")
    k = min(max(1.2 / float(np.std(log_y)), lo), hi)
    for it in range(1, max_iter + 1):
        f, df = _weibull_profile(k, log_y, mean_log)
        if f < 0:
            lo = k
        else:
            hi = k
        k_new = k - f / df if df > 0 else float("nan")
        if not (lo < k_new < hi):
            k_new = 0.5 * (lo + hi)
        if abs(k_new - k) < tol:
            k = k_new
            break
        k = k_new
    else:
        raise FitError(f"Weibull shape did not converge in {max_iter} iterations")

    lam = x_max * float(np.mean(np.exp(k * log_y))) ** (1.0 / k)
    n = pos.size
    log_x = np.log(pos)
    ll = (n * math.log(k) - n * k * math.log(lam) + (k - 1.0) * log_x.sum()
          - float(np.sum((pos / lam) ** k)))
    return WeibullFit(float(lam), float(k), float(ll), int(n), float(1.0 - n / total), int(it))


def correlation_error(c_gen, c_ref) -> tuple[float, float]:
    """Mean and max absolute difference over off-diagonal entries."""
    c_gen, c_ref = np.asarray(c_gen, dtype=np.float64), np.asarray(c_ref, dtype=np.float64)
    if c_gen.shape != c_ref.shape or c_gen.ndim != 2 or c_gen.shape[0] != c_gen.shape[1]:
        raise ValueError(f"correlation matrices differ in shape: {c_gen.shape} vs {c_ref.shape}")
    off = ~np.eye(c_gen.shape[0], dtype=bool)
    if not off.any():
        return 0.0, 0.0
    diff = np.abs(c_gen - c_ref)[off]
    return float(diff.mean()), float(diff.max())


# -- report ------------------------------------------------------------------

@dataclass
class EvalReport:
    n_scenarios: int
    seed: int | None
    farm_ids: list[str]
    correlation_generated: list | None = None
    correlation_reference: list | None = None
    correlation_mae: float | None = None
    correlation_max_abs_err: float | None = None
    variability: dict = field(default_factory=dict)
    capacity_factor_generated: float | None = None
    capacity_factor_reference: float | None = None
    weibull_generated: WeibullFit | None = None
    weibull_reference: WeibullFit | None = None
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variability"] = {
            key: {src: (asdict(v) if isinstance(v, VariabilityStats) else v) for src, v in entry.items()}
            for key, entry in self.variability.items()
        }
        return {"format": REPORT_FORMAT, **d}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        if d.pop("format", None) != REPORT_FORMAT:
            raise ValueError("not an evaluation report (format tag missing or unknown)")
        for key in ("weibull_generated", "weibull_reference"):
            if d.get(key) is not None:
                d[key] = WeibullFit(**d[key])
        d["variability"] = {
            key: {src: (VariabilityStats(**v) if "peak" in v else v) for src, v in entry.items()}
            for key, entry in d.get("variability", {}).items()
        }
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def variability_stats(self) -> list[VariabilityStats]:
        return [v for entry in self.variability.values() for v in entry.values()
                if isinstance(v, VariabilityStats)]


def generate_scenarios(generator, n_scenarios: int, seed=None, noise: str = "gaussian") -> list[np.ndarray]:
    """Draw ``n_scenarios`` noise matrices and return per-unit scenarios (N x T each)."""
    from .training import sample_noise

    if n_scenarios < 1:
        raise ConfigurationError("n_scenarios must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_scenarios):
        z = sample_noise(generator.n_farms, generator.noise_dim, noise, rng)
        out.append(from_symmetric(np.clip(generator(z), -1.0, 1.0)))
    return out


def variability_step(minutes: float, interval_minutes: float) -> int:
    ratio = minutes / interval_minutes
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-9:
        raise ConfigurationError(
            f"{minutes}-minute variability is not a whole number of {interval_minutes}-minute steps")
    return step


def _pooled_variability(series: list[np.ndarray], step: int) -> np.ndarray:
    return np.concatenate([variability_series(x, step) for x in series])


def evaluate_scenarios(scenarios: list[np.ndarray], reference: Dataset, seed=None,
                       minutes=VARIABILITY_MINUTES) -> EvalReport:
    """Score per-unit ``scenarios`` against ``reference``; failed metrics go to ``errors``."""
    if not scenarios:
        raise ConfigurationError("no scenarios to evaluate")
    pooled = np.concatenate(scenarios, axis=1)
    report = EvalReport(len(scenarios), seed, list(reference.farm_ids))

    c_ref = None
    try:
        c_ref = correlation_matrix(reference.values, reference.farm_ids)
        report.correlation_reference = c_ref.tolist()
    except ValueError as exc:
        report.errors["correlation_reference"] = str(exc)
    try:
        c_gen = correlation_matrix(pooled, reference.farm_ids)
        report.correlation_generated = c_gen.tolist()
        if c_ref is not None:
            report.correlation_mae, report.correlation_max_abs_err = correlation_error(c_gen, c_ref)
    except ValueError as exc:
        report.errors["correlation_generated"] = str(exc)

    for m in minutes:
        key = f"{m:g}"
        entry = {}
        try:
            step = variability_step(m, reference.interval_minutes)
        except ConfigurationError as exc:
            report.errors[f"variability_{key}"] = str(exc)
            continue
        for source, series in (("generated", scenarios), ("reference", [reference.values])):
            try:
                entry[source] = fit_laplace(_pooled_variability(series, step), float(m))
            except (ValueError, ConfigurationError) as exc:
                entry[source] = {"error": str(exc)}
                report.errors[f"variability_{key}_{source}"] = str(exc)
        report.variability[key] = entry

    report.capacity_factor_generated = capacity_factor(pooled)
    report.capacity_factor_reference = capacity_factor(reference.values)

    for source, values in (("generated", pooled), ("reference", reference.values)):
        try:
            fit = fit_weibull(values)
        except (ValueError, FitError) as exc:
            report.errors[f"weibull_{source}"] = str(exc)
            continue
        setattr(report, f"weibull_{source}", fit)
    return report


def evaluate(generator, reference: Dataset, n_scenarios: int, seed=None,
             noise: str = "gaussian") -> EvalReport:
    scenarios = generate_scenarios(generator, n_scenarios, seed, noise)
    return evaluate_scenarios(scenarios, reference, seed)


# -- plot data -----------------------------------------------------------------

def write_plot_data(out_dir, report: EvalReport, scenarios: list[np.ndarray], reference: Dataset,
                    bins: int = 50) -> list[Path]:
    """CSV files for correlation heatmaps, variability histograms and sample series."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = reference.farm_ids
    written = []

    path = out_dir / "correlation.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "value", "source"])
        for source, mat in (("reference", report.correlation_reference),
                            ("generated", report.correlation_generated)):
            if mat is None:
                continue
            for i, row in enumerate(mat):
                for j, v in enumerate(row):
                    w.writerow([ids[i], ids[j], repr(float(v)), source])
    written.append(path)

    path = out_dir / "variability_hist.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "bin_left", "bin_right", "count", "source"])
        for key in report.variability:
            try:
                step = variability_step(float(key), reference.interval_minutes)
                gen = _pooled_variability(scenarios, step)
                ref = _pooled_variability([reference.values], step)
            except ConfigurationError:
                continue
            lo = min(gen.min(), ref.min())
            hi = max(gen.max(), ref.max())
            if hi <= lo:
                hi = lo + 1e-9
            edges = np.linspace(lo, hi, bins + 1)
            for source, s in (("reference", ref), ("generated", gen)):
                counts, _ = np.histogram(s, edges)
                for left, right, c in zip(edges[:-1], edges[1:], counts):
                    w.writerow([key, repr(float(left)), repr(float(right)), int(c), source])
    written.append(path)

    path = out_dir / "timeseries.csv"
    t = scenarios[0].shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["farm", "t", "value", "source"])
        for source, mat in (("reference", reference.values[:, :t]), ("generated", scenarios[0])):
            for i, row in enumerate(mat):
                for j, v in enumerate(row):
                    w.writerow([ids[i], j, repr(float(v)), source])
    written.append(path)
    return written
