"""Conjugate gradients over an abstract symmetric positive definite operator.

The solver only ever calls `op.apply(v)`, so systems whose matrix is too large
to materialize (the fully connected pairwise model in particular) solve in
O(iterations * cost of one apply).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np


class SpdOperator(Protocol):
    """Contract for a symmetric positive definite linear map of dimension `dim`."""

    @property
    def dim(self) -> int: ...

    def apply(self, v: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class MatrixOperator:
    """A dense matrix wrapped in the operator contract; used by tests and oracles."""

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


class CgNumericError(ArithmeticError):
    """An iterate turned non-finite; the message names the iteration."""


@dataclass(frozen=True)
class CgConfig:
    """Stopping rule and bookkeeping options for cg_solve.

    Convergence is declared when the recurrence residual norm drops to
    max(rel_tol * ||b||, abs_tol). max_iters of None means 10 * N.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iters: int | None = None
    record_energy: bool = False

    def __post_init__(self) -> None:
        if self.rel_tol <= 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.abs_tol < 0:
            raise ValueError(f"abs_tol must be non-negative, got {self.abs_tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")


@dataclass(frozen=True)
class CgReport:
    iterations: int
    final_residual_norm: float
    converged: bool
    energy_trace: tuple[float, ...] | None = None


def cg_solve(
    op: SpdOperator,
    b: np.ndarray,
    cfg: CgConfig = CgConfig(),
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, CgReport]:
    """Solve op(x) = b by plain (unpreconditioned) conjugate gradients.

    Returns (x, report). On non-convergence within max_iters the best iterate
    seen (smallest residual norm) is returned with report.converged False; no
    exception is raised, callers inspect the report. A non-finite iterate does
    raise CgNumericError.

    When cfg.record_energy is set, report.energy_trace holds the quadratic
    energy 1/2 x_k . op(x_k) - b . x_k at x0 and after every iteration. The
    per-iteration values are maintained through the identity
    E_{k+1} = E_k - alpha_k * ||r_k||^2 / 2, which is exact in real arithmetic
    and keeps the recorded trace non-increasing even in floating point.
    """
    n = op.dim
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (n,):
        raise ValueError(f"rhs has shape {b.shape}, operator dimension is {n}")

    if x0 is None:
        x = np.zeros(n)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        if x.shape != (n,):
            raise ValueError(f"x0 has shape {x.shape}, operator dimension is {n}")
        r = b - op.apply(x)

    max_iters = cfg.max_iters if cfg.max_iters is not None else 10 * n
    threshold = max(cfg.rel_tol * math.sqrt(float(b @ b)), cfg.abs_tol)

    trace: list[float] | None = None
    if cfg.record_energy:
        e0 = 0.0 if x0 is None else float(0.5 * (x @ op.apply(x)) - b @ x)
        trace = [e0]

    rr = float(r @ r)
    resid = math.sqrt(rr)
    best_x = x.copy()
    best_resid = resid
    iterations = 0
    converged = resid <= threshold
    p = r.copy()

    while not converged and iterations < max_iters:
        ap = op.apply(p)
        alpha = rr / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        iterations += 1
        rr_next = float(r @ r)
        if not (np.isfinite(rr_next) and np.isfinite(x).all()):
            raise CgNumericError(f"non-finite iterate at iteration {iterations}")
        if trace is not None:
            trace.append(trace[-1] - 0.5 * alpha * rr)
        resid = math.sqrt(rr_next)
        if resid < best_resid:
            best_resid = resid
            best_x = x.copy()
        if resid <= threshold:
            converged = True
            break
        p = r + (rr_next / rr) * p
        rr = rr_next

    energy = tuple(trace) if trace is not None else None
    if converged:
        return x, CgReport(iterations, resid, True, energy)
    return best_x, CgReport(iterations, best_resid, False, energy)
