"""Brute-force reference implementations used by tests and the grad-check CLI.

Everything here is deliberately slow and explicit: dense system assembly, a
direct factorization solve, the literal Kronecker/permutation form of the
embedding gradient evaluated by index arithmetic, and central finite
differences. Size guards refuse inputs large enough to allocate by accident
what the production paths never materialize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .cg import CgConfig, CgNumericError, cg_solve
from .layer import GcrfLayer, GcrfOperator
from .tensors import as_matrix, as_vector

DENSE_ASSEMBLY_LIMIT = 4096
KRONECKER_GRAD_LIMIT = 50
NAIVE_GRAD_PIXEL_LIMIT = 40
NAIVE_GRAD_EMBED_LIMIT = 6
DENSE_PERMUTATION_LIMIT = 2500


class OracleError(Exception):
    """Base class for reference-path failures."""


class SizeGuardError(OracleError):
    """Input exceeds the size the brute-force path is willing to allocate."""


class DefinitenessError(OracleError):
    """Dense factorization failed: the system matrix is not positive definite."""


@dataclass(frozen=True)
class ExplicitSystem:
    """A dense symmetric system: minimize 1/2 x.M.x - rhs.x, i.e. solve M x = rhs."""

    matrix: np.ndarray  # (N, N), symmetric positive definite
    rhs: np.ndarray  # (N,)

    def __post_init__(self) -> None:
        m = as_matrix(self.matrix)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"system matrix must be square, got {m.shape}")
        asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if asym > 1e-12:
            raise ValueError(
                f"system matrix is not symmetric: max |M - M.T| = {asym:.3e}"
            )
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "rhs", as_vector(self.rhs, m.shape[0]))


@dataclass(frozen=True)
class PermutationMatrix:
    """The commutation matrix T_{m,n}: maps vec(X) to vec(X.T) for m x n X.

    vec is column-major (Fortran order). Realized as an index map of length
    m*n; the dense 0/1 matrix is only available under a small size guard.
    """

    m: int
    n: int

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ValueError(f"sizes must be positive, got m={self.m}, n={self.n}")

    def index_map(self) -> np.ndarray:
        """src such that (T v)[k] = v[src[k]]."""
        k = np.arange(self.m * self.n)
        return (k // self.n) + (k % self.n) * self.m

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = as_vector(v, self.m * self.n)
        return v[self.index_map()]

    def to_dense(self) -> np.ndarray:
        size = self.m * self.n
        if size > DENSE_PERMUTATION_LIMIT:
            raise SizeGuardError(
                f"dense commutation matrix would be {size}x{size}; "
                f"limit is {DENSE_PERMUTATION_LIMIT}. Use apply() instead."
            )
        dense = np.zeros((size, size))
        dense[np.arange(size), self.index_map()] = 1.0
        return dense


def assemble_dense(embeddings: np.ndarray, lam: float) -> np.ndarray:
    """Materialize the N x N system matrix: Gram of embedding columns plus lam I."""
    emb = as_matrix(embeddings)
    n = emb.shape[1]
    if n > DENSE_ASSEMBLY_LIMIT:
        raise SizeGuardError(
            f"refusing to assemble a {n}x{n} dense system (limit "
            f"{DENSE_ASSEMBLY_LIMIT}); use the matrix-free operator apply instead"
        )
    return emb.T @ emb + float(lam) * np.eye(n)


def direct_solve(system: ExplicitSystem) -> np.ndarray:
    """Exact inference baseline: solve M x = rhs by Cholesky factorization."""
    try:
        factor = cho_factor(system.matrix, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError(
            f"Cholesky factorization failed, matrix is not positive definite: {exc}"
        ) from exc
    return cho_solve(factor, system.rhs)


def dlda_kronecker(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Loss gradient with respect to the full pairwise matrix: entries -g_i * x_j.

    g is the loss gradient with respect to the unary scores (the solve of the
    transposed-by-symmetry system) and x the prediction.
    """
    g = as_vector(g)
    x = as_vector(x, g.shape[0])
    n = g.shape[0]
    if n > KRONECKER_GRAD_LIMIT:
        raise SizeGuardError(
            f"dense N x N pairwise gradient refused for N={n} "
            f"(limit {KRONECKER_GRAD_LIMIT})"
        )
    return -np.outer(g, x)


def dlda_embedding_naive(
    embeddings: np.ndarray, g: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Embedding gradient via the literal Kronecker/permutation expression.

    Evaluates the row vector -(g (x) x) times the sum of (I (x) E.T) and
    (E.T (x) I) T_{D,N}, resolving each Kronecker factor's nonzero pattern by
    index arithmetic and routing through the commutation index map, then
    unflattens to D x N. Exists purely as an independent check of the
    efficient two-outer-product form; never call it on real sizes.
    """
    emb = as_matrix(embeddings)
    d, n = emb.shape
    if n > NAIVE_GRAD_PIXEL_LIMIT or d > NAIVE_GRAD_EMBED_LIMIT:
        raise SizeGuardError(
            f"naive embedding gradient refused for N={n}, D={d} (limits "
            f"N<={NAIVE_GRAD_PIXEL_LIMIT}, D<={NAIVE_GRAD_EMBED_LIMIT})"
        )
    g = as_vector(g, n)
    x = as_vector(x, n)
    src = PermutationMatrix(d, n).index_map()
    out = np.zeros(n * d)
    for s1 in range(n):
        for s2 in range(n):
            r = -g[s1] * x[s2]
            if r == 0.0:
                continue
            # (I (x) E.T)[s1*n+s2, c1*d+c2] = [s1 == c1] * E[c2, s2]
            for c2 in range(d):
                out[s1 * d + c2] += r * emb[c2, s2]
            # (E.T (x) I)[s1*n+s2, k] = E[c1, s1] at k = c1*n + s2; the
            # commutation factor routes column k to column src[k]
            for c1 in range(d):
                out[src[c1 * n + s2]] += r * emb[c1, s1]
    return out.reshape((d, n), order="F")


def finite_diff_embedding_grad(
    layer: GcrfLayer,
    unary: np.ndarray,
    dloss_dx: np.ndarray,
    step: float = 1e-5,
) -> np.ndarray:
    """Central differences of the probe loss dloss_dx . forward(unary).

    The probe loss is linear in the prediction, so its exact gradient is the
    layer Jacobian contracted with dloss_dx: precisely what backward() claims
    to return. Runs 2*D*N forward solves at a tightened CG tolerance, since
    the difference quotient amplifies solver error by 1/(2*step).
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    unary = as_vector(unary, layer.dims.n)
    dloss_dx = as_vector(dloss_dx, layer.dims.n)
    cfg = CgConfig(
        rel_tol=min(layer.cg.rel_tol, 1e-12),
        abs_tol=min(layer.cg.abs_tol, 1e-14),
        max_iters=layer.cg.max_iters,
    )

    def probe(emb: np.ndarray) -> float:
        try:
            x, report = cg_solve(GcrfOperator(emb, layer.lam), unary, cfg)
        except CgNumericError as exc:
            raise OracleError(f"probe solve diverged: {exc}") from exc
        if not report.converged:
            raise OracleError(
                f"probe solve did not converge: residual "
                f"{report.final_residual_norm:.3e} after {report.iterations} iters"
            )
        return float(dloss_dx @ x)

    d, n = layer.embeddings.shape
    grad = np.zeros((d, n))
    emb = layer.embeddings.copy()
    for i in range(d):
        for j in range(n):
            saved = emb[i, j]
            emb[i, j] = saved + step
            plus = probe(emb)
            emb[i, j] = saved - step
            minus = probe(emb)
            emb[i, j] = saved
            grad[i, j] = (plus - minus) / (2.0 * step)
    return grad
