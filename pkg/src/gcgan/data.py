"""Wind power datasets: CSV/JSON I/O, normalization, correlation, synthesis, windowing."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigurationError

log = logging.getLogger(__name__)

CAPACITY_TOLERANCE = 0.01
DEFAULT_EPOCH = datetime(2000, 1, 1)


class ParseError(ValueError):
    """Malformed data or metadata file."""


class DegenerateSeriesError(ValueError):
    """A farm's series has zero variance."""


class FactorizationError(ValueError):
    """A target correlation matrix is not positive semidefinite."""


@dataclass
class Dataset:
    """Per-unit wind power for ``N`` farms, one row per farm, one column per step."""

    farm_ids: list[str]
    capacities: np.ndarray
    interval_minutes: float
    values: np.ndarray
    timestamps: list[str] | None = None

    def __post_init__(self):
        self.capacities = np.asarray(self.capacities, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        n, t = self.values.shape
        if n < 2 or t < 2:
            raise ValueError(f"dataset needs N >= 2 farms and T >= 2 steps, got {n}x{t}")
        if len(self.farm_ids) != n or self.capacities.shape != (n,):
            raise ValueError("farm_ids/capacities do not match the number of rows")
        if np.any(self.capacities <= 0):
            raise ValueError("capacities must be strictly positive")
        if self.interval_minutes <= 0:
            raise ValueError("interval_minutes must be positive")
        if not np.all(np.isfinite(self.values)) or self.values.min() < 0 or self.values.max() > 1:
            raise ValueError("per-unit values must lie in [0, 1]")

    @property
    def n_farms(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def timestamp_strings(self) -> list[str]:
        if self.timestamps is not None:
            return list(self.timestamps)
        return make_timestamps(self.n_steps, self.interval_minutes)


def make_timestamps(n: int, interval_minutes: float, start: datetime = DEFAULT_EPOCH) -> list[str]:
    step = timedelta(minutes=interval_minutes)
    return [(start + i * step).isoformat() for i in range(n)]


# -- files -----------------------------------------------------------------

def load_csv(path, meta_path=None) -> Dataset:
    """Read ``data.csv`` (MW, farms as columns) plus its ``meta.json`` sidecar.

    The sidecar defaults to ``meta.json`` in the same directory.
    """
    path = Path(path)
    meta_path = Path(meta_path) if meta_path is not None else path.with_name("meta.json")
    if not path.is_file():
        raise ParseError(f"data file not found: {path}")
    if not meta_path.is_file():
        raise ParseError(f"metadata file not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        interval = float(meta["interval_minutes"])
        cap_map = {str(k): float(v) for k, v in meta["capacities"].items()}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad metadata in {meta_path}: {exc}") from exc

    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "timestamp":
        raise ParseError(f"{path}: header must be 'timestamp,<farm_id>...'")
    farm_ids = header[1:]
    missing = [f for f in farm_ids if f not in cap_map]
    if missing:
        raise ParseError(f"no capacity given for farm(s) {missing}")
    caps = np.array([cap_map[f] for f in farm_ids])
    if np.any(caps <= 0):
        raise ParseError("capacities must be strictly positive")

    timestamps, mw = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        timestamps.append(row[0])
        try:
            mw.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
    if not mw:
        raise ParseError(f"{path} has no data rows")
    values = np.array(mw).T / caps[:, None]
    if not np.all(np.isfinite(values)):
        raise ParseError(f"{path}: non-finite value")
    over = values > 1.0 + CAPACITY_TOLERANCE
    under = values < -CAPACITY_TOLERANCE
    if over.any() or under.any():
        i, t = np.argwhere(over | under)[0]
        raise ParseError(f"{path}: farm {farm_ids[i]} at step {t} is outside [0, capacity] by more than 1%")
    if values.max() > 1.0 or values.min() < 0.0:
        log.warning("%s: clamping values slightly outside [0, capacity]", path)
        values = np.clip(values, 0.0, 1.0)
    return Dataset(farm_ids, caps, interval, values, timestamps)


def write_csv(dataset: Dataset, path, meta_path=None, per_unit: bool = False) -> None:
    """Write ``dataset`` as ``data.csv`` plus ``meta.json`` (MW unless ``per_unit``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scale = np.ones(dataset.n_farms) if per_unit else dataset.capacities
    out = dataset.values * scale[:, None]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *dataset.farm_ids])
        for ts, col in zip(dataset.timestamp_strings(), out.T):
            w.writerow([ts, *(repr(float(v)) for v in col)])
    if meta_path is not False:
        meta_path = Path(meta_path) if meta_path is not None else path.with_name("meta.json")
        meta = {
            "interval_minutes": dataset.interval_minutes,
            "capacities": {f: float(c) for f, c in zip(dataset.farm_ids, dataset.capacities)},
        }
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")


# -- normalization ---------------------------------------------------------

def to_symmetric(x: np.ndarray) -> np.ndarray:
    """Map per-unit values in [0, 1] to [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("to_symmetric expects values in [0, 1]")
    return 2.0 * x - 1.0


def from_symmetric(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.size and (y.min() < -1.0 or y.max() > 1.0):
        raise ValueError("from_symmetric expects values in [-1, 1]")
    return (y + 1.0) / 2.0


# -- correlation -------------------------------------------------------------

def correlation_matrix(values: np.ndarray, labels=None) -> np.ndarray:
    """Pearson correlation between the rows of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    flat = np.flatnonzero(np.ptp(values, axis=1) == 0)
    if flat.size:
        name = labels[flat[0]] if labels is not None else f"row {flat[0]}"
        raise DegenerateSeriesError(f"series for farm {name} has zero variance")
    c = np.corrcoef(values)
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return np.clip(c, -1.0, 1.0)


def estimate_correlation(d: Dataset) -> np.ndarray:
    return correlation_matrix(d.values, d.farm_ids)


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthSpec:
    """Gaussian-copula AR(1) surrogate for a multi-farm per-unit record."""

    n_farms: int
    t_total: int
    target_correlation: np.ndarray
    ar_coefficient: float = 0.95
    weibull_scale: float = 0.33
    weibull_shape: float = 2.9
    seed: int = 0
    interval_minutes: float = 5.0
    capacity_mw: float = 100.0
    farm_ids: list[str] | None = field(default=None)

    def __post_init__(self):
        self.target_correlation = np.asarray(self.target_correlation, dtype=np.float64)
        if self.target_correlation.shape != (self.n_farms, self.n_farms):
            raise ValueError("target_correlation must be n_farms x n_farms")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValueError("ar_coefficient must lie in [0, 1)")
        if self.weibull_scale <= 0 or self.weibull_shape <= 0:
            raise ValueError("Weibull parameters must be positive")


def correlation_factor(c: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == c`` for a PSD correlation matrix."""
    c = np.asarray(c, dtype=np.float64)
    if not np.allclose(c, c.T, atol=1e-12):
        raise FactorizationError("target correlation is not symmetric")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(c)
    if vals.min() < -1e-10 * max(1.0, vals.max()):
        raise FactorizationError(f"target correlation is not PSD (min eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def synthesize(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    factor = correlation_factor(spec.target_correlation)
    n, t, phi = spec.n_farms, spec.t_total, spec.ar_coefficient
    shocks = factor @ rng.standard_normal((n, t))
    innov = math.sqrt(1.0 - phi * phi)
    g = np.empty((n, t))
    g[:, 0] = shocks[:, 0]
    for i in range(1, t):
        g[:, i] = phi * g[:, i - 1] + innov * shocks[:, i]
    # survival form keeps precision in the upper tail
    tail = stats.norm.sf(g)
    x = spec.weibull_scale * (-np.log(np.clip(tail, 1e-300, None))) ** (1.0 / spec.weibull_shape)
    x = np.clip(x, 0.0, 1.0)
    ids = spec.farm_ids or [f"FARM{i + 1}" for i in range(n)]
    return Dataset(list(ids), np.full(n, spec.capacity_mw), spec.interval_minutes, x)


def clamped_weibull_mean(scale: float, shape: float) -> float:
    """Mean of min(W, 1) for W ~ Weibull(scale, shape), by quadrature."""
    from scipy import integrate

    # E[min(W,1)] = integral_0^1 P(W > x) dx
    val, _ = integrate.quad(lambda x: math.exp(-((x / scale) ** shape)), 0.0, 1.0,
                            epsabs=1e-13, epsrel=1e-12)
    return val


# -- windows -----------------------------------------------------------------

def sample_windows(d: Dataset, t_window: int, n_windows: int, seed=None) -> list[np.ndarray]:
    """Random ``N x t_window`` windows in the [-1, 1] encoding.

    ``seed`` may be an int or a ``numpy.random.Generator`` (which is advanced).
    """
    if t_window < 1 or t_window > d.n_steps:
        raise ConfigurationError(f"window length {t_window} must lie in [1, {d.n_steps}]")
    if n_windows <= 0:
        return []
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, d.n_steps - t_window + 1, size=n_windows)
    return [to_symmetric(d.values[:, s:s + t_window]) for s in starts]
