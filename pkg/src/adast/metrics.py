"""Per-iteration evaluation quantities: stationarity, consensus, and
stepsize-inconsistency measures.

Inconsistency is always computed on the stepsize denominators that were
actually applied in an update (for tracking algorithms these are the
locally accumulated values before the communication round).  For scalar
accumulators the per-iteration value is

    max_i (v_i^{-a} - vbar^{-a})^2 / (vbar^{-a})^2,   vbar = mean_i v_i,

and for coordinate-wise accumulators the normalized Frobenius form over
the flattened mean is used.  Running suprema are maintained by the run
recorder, not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .problems import QuadraticMinimaxProblem

__all__ = [
    "TraceRecord",
    "Line",
    "CASE_STUDY_LINE",
    "grad_phi_sq",
    "grad_xf_sq",
    "consensus_error",
    "inconsistency_v",
    "inconsistency_u",
    "zeta_hat",
    "zeta_series",
    "zeta_hat_series",
    "distance_to_line",
]


@dataclass
class TraceRecord:
    """One row of run metrics.

    grad_phi_sq is None when the dual domain is constrained (the
    closed-form best response does not apply); zeta_v_hat_inst is only
    populated for coordinate-wise runs.
    """

    k: int
    grad_phi_sq: float | None
    grad_xf_sq: float
    consensus_x: float
    consensus_y: float
    zeta_v_inst: float
    zeta_v_sup: float
    zeta_u_inst: float
    zeta_u_sup: float
    avg_m_x: float
    avg_m_y: float
    xbar: np.ndarray = field(repr=False)
    ybar: np.ndarray = field(repr=False)
    zeta_v_hat_inst: float | None = None


@dataclass(frozen=True)
class Line:
    """The line a*x + b*y + c = 0 in the scalar (p = d = 1) plane."""

    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        if self.a == 0.0 and self.b == 0.0:
            raise ConfigError("degenerate line: a and b cannot both be zero")


# Stationary set of the two-node case study: 3y = 5x + 2.
CASE_STUDY_LINE = Line(5.0, -3.0, 2.0)


def distance_to_line(xbar: np.ndarray | float, ybar: np.ndarray | float, line: Line) -> float:
    x = float(np.asarray(xbar).reshape(-1)[0])
    y = float(np.asarray(ybar).reshape(-1)[0])
    return abs(line.a * x + line.b * y + line.c) / float(np.hypot(line.a, line.b))


def grad_phi_sq(problem: QuadraticMinimaxProblem, xbar: np.ndarray) -> float:
    g = problem.grad_phi(xbar)
    return float(g @ g)


def grad_xf_sq(problem: QuadraticMinimaxProblem, xbar: np.ndarray, ybar: np.ndarray) -> float:
    g = problem.grad_x_avg(xbar, ybar)
    return float(g @ g)


def consensus_error(X: np.ndarray, Y: np.ndarray) -> tuple[float, float]:
    """Squared Frobenius deviation of the stacked iterates from their means."""
    dx = X - X.mean(axis=0, keepdims=True)
    dy = Y - Y.mean(axis=0, keepdims=True)
    return float(np.sum(dx * dx)), float(np.sum(dy * dy))


def _zeta_scalar(vals: np.ndarray, expo: float) -> float:
    if vals.min() == vals.max():
        return 0.0
    vbar_pow = float(np.mean(vals)) ** (-expo)
    dev = vals ** (-expo) - vbar_pow
    return float(np.max(dev * dev) / (vbar_pow * vbar_pow))


def _zeta_matrix(vals: np.ndarray, expo: float) -> float:
    if vals.min() == vals.max():
        return 0.0
    n, p = vals.shape
    vbar_pow = float(np.mean(vals)) ** (-expo)
    dev = vals ** (-expo) - vbar_pow
    return float(np.sum(dev * dev) / (n * p * vbar_pow * vbar_pow))


def inconsistency_v(v_values: np.ndarray, alpha: float) -> float:
    """Per-iteration primal stepsize inconsistency.

    v_values: (n,) applied denominators for scalar algorithms, or the
    (n, p) denominator matrix for the coordinate-wise variant.
    """
    v_values = np.asarray(v_values, dtype=float)
    if np.any(v_values <= 0):
        raise ConfigError("stepsize denominators must be positive")
    if v_values.ndim == 1:
        return _zeta_scalar(v_values, alpha)
    return _zeta_matrix(v_values, alpha)


def inconsistency_u(u_values: np.ndarray, beta: float) -> float:
    """Dual-side counterpart of inconsistency_v."""
    return inconsistency_v(u_values, beta)


def zeta_series(v_store: np.ndarray, expo: float) -> np.ndarray:
    """Vectorized per-iteration inconsistency over a whole run.

    v_store is (K, n) for scalar accumulators or (K, n, p) coordinate-wise;
    each slice follows the same definitions as inconsistency_v.
    """
    V = np.asarray(v_store, dtype=float)
    flat_axes = tuple(range(1, V.ndim))
    vbar_pow = V.mean(axis=flat_axes) ** (-expo)
    dev = V ** (-expo) - vbar_pow.reshape((-1,) + (1,) * (V.ndim - 1))
    if V.ndim == 2:
        out = (dev * dev).max(axis=1) / (vbar_pow * vbar_pow)
    else:
        K, n, p = V.shape
        out = (dev * dev).sum(axis=(1, 2)) / (n * p * vbar_pow * vbar_pow)
    equal = V.min(axis=flat_axes) == V.max(axis=flat_axes)
    out[equal] = 0.0
    return out


def zeta_hat_series(v_store: np.ndarray, expo: float) -> np.ndarray:
    """Vectorized zeta_hat over a whole run of (K, n, p) denominators."""
    V = np.asarray(v_store, dtype=float)
    K, n, p = V.shape
    vbar_pow = V.mean(axis=(1, 2)) ** (-expo)
    row_mean_pow = V.mean(axis=2, keepdims=True) ** (-expo)
    dev = V ** (-expo) - row_mean_pow
    return (dev * dev).sum(axis=(1, 2)) / (n * p * vbar_pow * vbar_pow)


def zeta_hat(v_matrix: np.ndarray, expo: float) -> float:
    """Within-node cross-coordinate inconsistency of the coordinate-wise
    variant: rows are compared against their own row means, normalized by
    the flattened mean.  This term does not vanish under tracking."""
    V = np.asarray(v_matrix, dtype=float)
    if V.ndim != 2:
        raise ConfigError("zeta_hat needs an (n, p) denominator matrix")
    n, p = V.shape
    vbar_pow = float(np.mean(V)) ** (-expo)
    row_mean_pow = V.mean(axis=1, keepdims=True) ** (-expo)
    dev = V ** (-expo) - row_mean_pow
    return float(np.sum(dev * dev) / (n * p * vbar_pow * vbar_pow))
