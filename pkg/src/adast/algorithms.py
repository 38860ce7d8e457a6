"""Per-iteration steppers and the run loop for the four methods.

All steppers operate on stacked node state: X (n, p), Y (n, d) and the
accumulators Mx / My, which are (n,) scalars for d-sgda / d-tiada /
d-adast and (n, p) / (n, d) matrices for the coordinate-wise variant.

Mixing uses the mean-centered form  mean + W @ (v - mean), identical to
W @ v in exact arithmetic for a row-stochastic W but mass-conserving to
roughly eps * consensus-error instead of eps * magnitude, which is what
keeps the tracking-average identity tight over 1e5 iterations.

The tracking algorithms follow the pseudo-code ordering (accumulate and
update locally, then one communication round for all four quantities;
``stepsize_source="local"``).  The compact-form ordering that mixes the
accumulators before they enter the stepsize is available with
``stepsize_source="mixed"`` and costs an extra communication round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .metrics import TraceRecord, consensus_error, grad_phi_sq, grad_xf_sq
from .metrics import zeta_hat_series as _zeta_hat_series
from .metrics import zeta_series as _zeta_series
from .problems import ALL, GradientStream, NoiseModel, ProjectionSet, QuadraticMinimaxProblem, \
    project, sample_grads

__all__ = [
    "ALGORITHMS",
    "ADAPTIVE_ALGORITHMS",
    "AlgoConfig",
    "NodeState",
    "RunState",
    "AbortInfo",
    "Trace",
    "run",
    "centralized_tiada",
    "mix",
]

ALGORITHMS = ("d-sgda", "d-tiada", "d-adast", "d-adast-coord")
ADAPTIVE_ALGORITHMS = ("d-tiada", "d-adast", "d-adast-coord")


@dataclass(frozen=True)
class AlgoConfig:
    """Stepper configuration.

    c0 is the initial accumulator buffer; it may be zero, in which case a
    zero denominator simply suppresses the (necessarily zero) update term.
    """

    algo: str
    gamma_x: float
    gamma_y: float
    alpha: float = 0.6
    beta: float = 0.4
    c0: float = 1e-6
    projection: ProjectionSet = field(default=ALL)
    K: int = 1000
    stepsize_source: str = "local"  # "local" (pseudo-code) | "mixed" (compact form)

    def __post_init__(self) -> None:
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; expected one of {ALGORITHMS}")
        if self.gamma_x <= 0 or self.gamma_y <= 0:
            raise ConfigError("stepsizes gamma_x and gamma_y must be positive")
        if self.c0 < 0:
            raise ConfigError("initial buffer c0 must be nonnegative")
        if self.K < 0:
            raise ConfigError("iteration count K must be nonnegative")
        if self.stepsize_source not in ("local", "mixed"):
            raise ConfigError("stepsize_source must be 'local' or 'mixed'")
        if self.algo in ADAPTIVE_ALGORITHMS and not (0.0 < self.beta < self.alpha < 1.0):
            raise ConfigError(
                f"adaptive exponents need 0 < beta < alpha < 1, got alpha={self.alpha}, "
                f"beta={self.beta}"
            )

    def require_counterexample_range(self) -> None:
        """Tighter exponent window demanded by the non-convergence construction."""
        if not (0.0 < self.beta < 0.5 < self.alpha < 1.0):
            raise ConfigError(
                f"counterexample mode needs 0 < beta < 0.5 < alpha < 1, got "
                f"alpha={self.alpha}, beta={self.beta}"
            )

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "gamma_x": self.gamma_x,
            "gamma_y": self.gamma_y,
            "alpha": self.alpha,
            "beta": self.beta,
            "c0": self.c0,
            "projection": self.projection.to_dict(),
            "K": self.K,
            "stepsize_source": self.stepsize_source,
        }


@dataclass(frozen=True)
class NodeState:
    """Read-only view of one node's variables."""

    x: np.ndarray
    y: np.ndarray
    m_x: np.ndarray | float
    m_y: np.ndarray | float


@dataclass
class RunState:
    X: np.ndarray  # (n, p)
    Y: np.ndarray  # (n, d)
    Mx: np.ndarray  # (n,) or (n, p)
    My: np.ndarray  # (n,) or (n, d)
    k: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def node(self, i: int) -> NodeState:
        mx = self.Mx[i]
        my = self.My[i]
        return NodeState(
            x=self.X[i].copy(),
            y=self.Y[i].copy(),
            m_x=mx.copy() if isinstance(mx, np.ndarray) else float(mx),
            m_y=my.copy() if isinstance(my, np.ndarray) else float(my),
        )


@dataclass(frozen=True)
class AbortInfo:
    """Where a run first produced a non-finite value."""

    k: int
    node: int
    field: str


@dataclass
class Trace:
    """Run output: stride records plus cheap per-iteration series.

    zeta_*_series[t] is the inconsistency of the stepsizes applied at
    iteration t (0-based); gsum_*_series[t] is the running node-mean of
    squared sampled gradient norms through iteration t, the quantity the
    accumulator average must track (plus c0).
    """

    records: list[TraceRecord]
    zeta_v_series: np.ndarray
    zeta_u_series: np.ndarray
    zeta_v_hat_series: np.ndarray | None
    gsum_x_series: np.ndarray
    gsum_y_series: np.ndarray
    abort: AbortInfo | None
    final_state: RunState

    @property
    def aborted(self) -> bool:
        return self.abort is not None


def mix(W: np.ndarray, V: np.ndarray) -> np.ndarray:
    """One gossip round in the mean-centered form (see module docstring)."""
    m = V.sum(axis=0) / V.shape[0]
    return m + W @ (V - m)


def _neg_pow(m: np.ndarray, expo: float) -> np.ndarray:
    """m ** (-expo) with 0 mapped to 0.

    A zero accumulator means every gradient seen so far (including the
    current one) was zero, so the paired update term is zero anyway.
    """
    if m.min() > 0.0:
        return m ** (-expo)
    safe = np.where(m > 0.0, m, 1.0)
    return np.where(m > 0.0, safe ** (-expo), 0.0)


def _psi(mx_pow: np.ndarray, my_pow: np.ndarray) -> np.ndarray:
    """Ratio m_x^a / max(m_x^a, m_y^a) with ties and zeros resolving to 1."""
    denom = np.maximum(mx_pow, my_pow)
    if denom.min() > 0.0:
        return mx_pow / denom
    safe = np.where(denom > 0.0, denom, 1.0)
    return np.where(denom > 0.0, mx_pow / safe, 1.0)


def _row_sq_norms(G: np.ndarray) -> np.ndarray:
    return np.einsum("np,np->n", G, G)


def _initial_state(
    problem: QuadraticMinimaxProblem, cfg: AlgoConfig, x0, y0
) -> RunState:
    n, p, d = problem.n, problem.p, problem.d

    def expand(v, dim, name):
        if v is None:
            return np.zeros((n, dim))
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 0:
            return np.full((n, dim), float(arr))
        if arr.shape == (dim,):
            return np.tile(arr, (n, 1))
        if arr.shape == (n, dim):
            return arr.copy()
        raise ConfigError(f"{name} must be scalar, ({dim},) or ({n},{dim}), got {arr.shape}")

    X = expand(x0, p, "x0")
    Y = expand(y0, d, "y0")
    if cfg.algo == "d-adast-coord":
        Mx = np.full((n, p), cfg.c0)
        My = np.full((n, d), cfg.c0)
    else:
        Mx = np.full(n, cfg.c0)
        My = np.full(n, cfg.c0)
    return RunState(X=X, Y=Y, Mx=Mx, My=My, k=0)


def _step(
    state: RunState,
    GX: np.ndarray,
    GY: np.ndarray,
    W: np.ndarray,
    cfg: AlgoConfig,
):
    """Advance one iteration in place.

    Returns (applied_v, applied_u, hx_total, hy_total): the stepsize
    denominators actually applied this iteration (None for d-sgda) and the
    totals of squared sampled-gradient entries, which the caller turns
    into the running global means.  All quantities communicated in the
    same round share one gossip matmul (columns of the concatenated block
    mix independently).
    """
    gx_s, gy_s = cfg.gamma_x, cfg.gamma_y
    al, be = cfg.alpha, cfg.beta
    p = state.X.shape[1]
    d = state.Y.shape[1]

    if cfg.algo == "d-sgda":
        hx = _row_sq_norms(GX)
        hy = _row_sq_norms(GY)
        block = mix(W, np.concatenate([state.X - gx_s * GX, state.Y + gy_s * GY], axis=1))
        state.X = block[:, :p]
        state.Y = project(cfg.projection, block[:, p:])
        return None, None, float(hx.sum()), float(hy.sum())

    if cfg.algo == "d-tiada":
        hx = _row_sq_norms(GX)
        hy = _row_sq_norms(GY)
        state.Mx = state.Mx + hx
        state.My = state.My + hy
        v = np.maximum(state.Mx, state.My)
        x_local = state.X - gx_s * _neg_pow(v, al)[:, None] * GX
        y_local = state.Y + gy_s * _neg_pow(state.My, be)[:, None] * GY
        block = mix(W, np.concatenate([x_local, y_local], axis=1))
        state.X = block[:, :p]
        state.Y = project(cfg.projection, block[:, p:])
        return v, state.My, float(hx.sum()), float(hy.sum())

    if cfg.algo == "d-adast":
        hx = _row_sq_norms(GX)
        hy = _row_sq_norms(GY)
        if cfg.stepsize_source == "mixed":
            # compact-form ordering: accumulators travel one round ahead
            m_block = mix(W, np.stack([state.Mx + hx, state.My + hy], axis=1))
            state.Mx = m_block[:, 0]
            state.My = m_block[:, 1]
            v = np.maximum(state.Mx, state.My)
            x_local = state.X - gx_s * _neg_pow(v, al)[:, None] * GX
            y_local = state.Y + gy_s * _neg_pow(state.My, be)[:, None] * GY
            block = mix(W, np.concatenate([x_local, y_local], axis=1))
            state.X = block[:, :p]
            state.Y = project(cfg.projection, block[:, p:])
            return v, state.My, float(hx.sum()), float(hy.sum())
        mx = state.Mx + hx
        my = state.My + hy
        psi = _psi(mx**al, my**al)
        x_local = state.X - gx_s * (psi * _neg_pow(mx, al))[:, None] * GX
        y_local = state.Y + gy_s * _neg_pow(my, be)[:, None] * GY
        block = mix(W, np.concatenate(
            [x_local, y_local, mx[:, None], my[:, None]], axis=1))
        state.X = block[:, :p]
        state.Y = project(cfg.projection, block[:, p:p + d])
        state.Mx = block[:, p + d]
        state.My = block[:, p + d + 1]
        return np.maximum(mx, my), my, float(hx.sum()), float(hy.sum())

    # d-adast-coord
    HX = GX * GX
    HY = GY * GY
    if cfg.stepsize_source == "mixed":
        m_block = mix(W, np.concatenate([state.Mx + HX, state.My + HY], axis=1))
        mx = m_block[:, :p]
        my = m_block[:, p:]
        state.Mx, state.My = mx, my
        psi = _psi(
            np.linalg.norm(mx, axis=1) ** (2 * al),
            np.linalg.norm(my, axis=1) ** (2 * al),
        )
        x_local = state.X - gx_s * psi[:, None] * _neg_pow(mx, al) * GX
        y_local = state.Y + gy_s * _neg_pow(my, be) * GY
        block = mix(W, np.concatenate([x_local, y_local], axis=1))
        state.X = block[:, :p]
        state.Y = project(cfg.projection, block[:, p:])
    else:
        mx = state.Mx + HX
        my = state.My + HY
        psi = _psi(
            np.linalg.norm(mx, axis=1) ** (2 * al),
            np.linalg.norm(my, axis=1) ** (2 * al),
        )
        x_local = state.X - gx_s * psi[:, None] * _neg_pow(mx, al) * GX
        y_local = state.Y + gy_s * _neg_pow(my, be) * GY
        block = mix(W, np.concatenate([x_local, y_local, mx, my], axis=1))
        state.X = block[:, :p]
        state.Y = project(cfg.projection, block[:, p:p + d])
        state.Mx = block[:, p + d:p + d + p]
        state.My = block[:, p + d + p:]
    applied_v = np.maximum(mx, my) if mx.shape == my.shape else mx
    return applied_v, my, float(HX.sum()), float(HY.sum())


def _find_nonfinite(state: RunState) -> tuple[int, str]:
    for name in ("X", "Y", "Mx", "My"):
        arr = getattr(state, name)
        bad = ~np.isfinite(arr)
        if bad.any():
            node = int(np.argwhere(bad)[0][0])
            return node, name
    return 0, "X"  # pragma: no cover


def run(
    problem: QuadraticMinimaxProblem,
    W: np.ndarray,
    cfg: AlgoConfig,
    noise: NoiseModel = NoiseModel.none(),
    *,
    x0=None,
    y0=None,
    seed: int = 0,
    trace_stride: int = 1,
) -> Trace:
    """Execute cfg.K iterations, recording metrics at iteration 0, every
    trace_stride iterations, and unconditionally at the final iteration.

    Fully deterministic given (problem, W, cfg, noise, x0, y0, seed).  On
    a non-finite iterate the run stops and the trace carries an AbortInfo
    naming the iteration, node and state field.
    """
    W = np.asarray(W, dtype=float)
    if W.shape != (problem.n, problem.n):
        raise ConfigError(f"weight matrix shape {W.shape} does not match n={problem.n}")
    if trace_stride < 1:
        raise ConfigError("trace_stride must be >= 1")

    state = _initial_state(problem, cfg, x0, y0)
    stream = GradientStream(seed)
    K = cfg.K
    n = problem.n
    coord = cfg.algo == "d-adast-coord"
    adaptive = cfg.algo != "d-sgda"

    # Per-iteration applied denominators; the zeta series are computed
    # vectorized after the loop (cheaper than n-sized numpy calls per step).
    if adaptive:
        v_store = np.empty((K,) + ((n, problem.p) if coord else (n,)))
        u_store = np.empty((K,) + ((n, problem.d) if coord else (n,)))
    gsum_x_series = np.zeros(K)
    gsum_y_series = np.zeros(K)
    denom_x = n * problem.p if coord else n
    denom_y = n * problem.d if coord else n

    gsum_x = 0.0
    gsum_y = 0.0
    unconstrained = cfg.projection.kind == "all"

    records: list[TraceRecord] = []

    def make_record(k: int) -> TraceRecord:
        # zeta fields are patched after the loop from the applied series
        xbar = state.X.mean(axis=0)
        ybar = state.Y.mean(axis=0)
        cx, cy = consensus_error(state.X, state.Y)
        return TraceRecord(
            k=k,
            grad_phi_sq=grad_phi_sq(problem, xbar) if unconstrained else None,
            grad_xf_sq=grad_xf_sq(problem, xbar, ybar),
            consensus_x=cx,
            consensus_y=cy,
            zeta_v_inst=0.0,
            zeta_v_sup=0.0,
            zeta_u_inst=0.0,
            zeta_u_sup=0.0,
            avg_m_x=float(state.Mx.mean()),
            avg_m_y=float(state.My.mean()),
            xbar=xbar,
            ybar=ybar,
            zeta_v_hat_inst=0.0 if coord else None,
        )

    records.append(make_record(0))

    abort: AbortInfo | None = None
    completed = 0
    # Divergence is a handled outcome (abort record + exit path), so the
    # overflow/invalid warnings emitted on the way there are noise.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(K):
            GX, GY = sample_grads(problem, state.X, state.Y, noise, stream, k)
            applied_v, applied_u, hx_total, hy_total = _step(state, GX, GY, W, cfg)
            state.k = k + 1

            gsum_x += hx_total / denom_x
            gsum_y += hy_total / denom_y
            gsum_x_series[k] = gsum_x
            gsum_y_series[k] = gsum_y
            if adaptive:
                v_store[k] = applied_v
                u_store[k] = applied_u
            completed = k + 1

            # Cheap screen first (a non-finite entry poisons the sum), full
            # scan only on the abort path.
            screen = (
                float(state.X.sum()) + float(state.Y.sum())
                + float(state.Mx.sum()) + float(state.My.sum())
            )
            if not np.isfinite(screen):
                node, field_name = _find_nonfinite(state)
                abort = AbortInfo(k=k + 1, node=node, field=field_name)
                break

            if (k + 1) % trace_stride == 0:
                records.append(make_record(k + 1))

        if K > 0 and abort is None:
            records.append(make_record(K))

        if adaptive and completed:
            zeta_v_series = _zeta_series(v_store[:completed], cfg.alpha)
            zeta_u_series = _zeta_series(u_store[:completed], cfg.beta)
            zeta_hat_series = (
                _zeta_hat_series(v_store[:completed], cfg.alpha) if coord else None
            )
        else:
            zeta_v_series = np.zeros(completed)
            zeta_u_series = np.zeros(completed)
            zeta_hat_series = np.zeros(completed) if coord else None

    zeta_v_sup = np.maximum.accumulate(zeta_v_series)
    zeta_u_sup = np.maximum.accumulate(zeta_u_series)
    for rec in records:
        if rec.k == 0 or not completed:
            continue
        i = rec.k - 1
        rec.zeta_v_inst = float(zeta_v_series[i])
        rec.zeta_v_sup = float(zeta_v_sup[i])
        rec.zeta_u_inst = float(zeta_u_series[i])
        rec.zeta_u_sup = float(zeta_u_sup[i])
        if coord:
            rec.zeta_v_hat_inst = float(zeta_hat_series[i])

    return Trace(
        records=records,
        zeta_v_series=zeta_v_series,
        zeta_u_series=zeta_u_series,
        zeta_v_hat_series=zeta_hat_series,
        gsum_x_series=gsum_x_series[:completed],
        gsum_y_series=gsum_y_series[:completed],
        abort=abort,
        final_state=state,
    )


def centralized_tiada(
    problem: QuadraticMinimaxProblem,
    cfg: AlgoConfig,
    noise: NoiseModel = NoiseModel.none(),
    *,
    x0=None,
    y0=None,
    seed: int = 0,
    trace_stride: int = 1,
) -> Trace:
    """Single-node baseline: the network collapses to W = [1] and the
    tracking algorithms coincide with their centralized counterpart.

    The problem must already be a one-node instance (use
    ``problem.averaged()`` to collapse a finite-sum instance first).
    """
    if problem.n != 1:
        raise ConfigError(
            "centralized baseline needs a single-node problem; call problem.averaged()"
        )
    return run(
        problem,
        np.ones((1, 1)),
        cfg,
        noise,
        x0=x0,
        y0=y0,
        seed=seed,
        trace_stride=trace_stride,
    )
