"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from adast.problems import QuadraticLocal, QuadraticMinimaxProblem


def make_random_problem(
    n: int, p: int, d: int, seed: int, mu_min: float = 0.5, scale: float = 1.0
) -> QuadraticMinimaxProblem:
    """Random NC-SC instance: B blocks SPD with eigenvalues >= mu_min,
    C symmetric and possibly indefinite."""
    rng = np.random.default_rng(seed)
    locs = []
    for _ in range(n):
        Mb = rng.standard_normal((d, d)) * scale
        B = Mb @ Mb.T / d + mu_min * np.eye(d)
        A = rng.standard_normal((p, d)) * scale
        Mc = rng.standard_normal((p, p)) * scale
        C = 0.5 * (Mc + Mc.T)
        b = rng.standard_normal(p) * scale
        c = rng.standard_normal(d) * scale
        locs.append(QuadraticLocal(B=B, A=A, C=C, b=b, c=c))
    return QuadraticMinimaxProblem(locs, meta={"name": "random", "seed": seed})


def sinkhorn_doubly_stochastic(n: int, seed: int, iters: int = 2000) -> np.ndarray:
    """Random doubly-stochastic matrix by alternating row/column normalization."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.1, 1.0, size=(n, n))
    for _ in range(iters):
        W /= W.sum(axis=1, keepdims=True)
        W /= W.sum(axis=0, keepdims=True)
    return W
