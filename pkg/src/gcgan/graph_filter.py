"""Fixed spatial mixing matrix derived from farm-to-farm correlations."""
from __future__ import annotations

import numpy as np

FILTER_MODES = ("exponential", "absolute")


def exponential_weight(c):
    """(e^|c| - 1) / (e - 1): maps |c| in [0, 1] onto [0, 1], convex."""
    return np.expm1(np.abs(c)) / np.expm1(1.0)


def build_graph_filter(c: np.ndarray, mode: str = "exponential") -> np.ndarray:
    """Graph filter ``A`` for correlation matrix ``c``.

    ``mode="absolute"`` gives the plain ``|C|`` filter for ablations. The
    returned array is read-only; it is never trained.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"correlation matrix must be square, got {c.shape}")
    if not np.all(np.isfinite(c)) or np.abs(c).max() > 1.0:
        raise ValueError("correlation entries must be finite and lie in [-1, 1]")
    if not np.array_equal(c, c.T):
        raise ValueError("correlation matrix must be symmetric")
    if not np.all(np.diag(c) == 1.0):
        raise ValueError("correlation matrix must have a unit diagonal")
    if mode == "exponential":
        a = exponential_weight(c)
    elif mode == "absolute":
        a = np.abs(c)
    else:
        raise ValueError(f"unknown graph filter mode {mode!r}; expected one of {FILTER_MODES}")
    np.fill_diagonal(a, 1.0)
    a.setflags(write=False)
    return a
