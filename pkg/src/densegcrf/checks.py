"""Randomized verification suite behind the grad-check CLI command.

Each check compares a production path against an independent reference
(dense assembly, direct factorization, the literal Kronecker/permutation
gradient, finite differences) on small random instances and reports its
worst relative error against a fixed tolerance. The sabotage flag corrupts
the gradient under test before comparison; it exists so the suite itself can
be shown to catch a wrong formula, and must never be set outside tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cg import CgConfig, cg_solve
from .config import RunConfig
from .layer import GcrfLayer, embedding_gradient
from .oracle import (
    ExplicitSystem,
    PermutationMatrix,
    assemble_dense,
    direct_solve,
    dlda_embedding_naive,
    dlda_kronecker,
    finite_diff_embedding_grad,
)
from .tensors import Dims

SABOTAGE_FACTOR = 1.001


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float
    passed: bool


def _result(name: str, err: float, tol: float) -> CheckResult:
    return CheckResult(name, float(err), tol, bool(err <= tol))


def _rel_err(actual: np.ndarray, expected: np.ndarray) -> float:
    scale = float(np.linalg.norm(expected))
    return float(np.linalg.norm(actual - expected)) / max(scale, 1e-300)


def _random_layer(rng, pixels: int, labels: int, embed_dim: int, lam: float,
                  cg: CgConfig) -> GcrfLayer:
    dims = Dims(pixels=pixels, labels=labels, embed_dim=embed_dim)
    emb = rng.standard_normal((embed_dim, dims.n)) / np.sqrt(dims.n)
    return GcrfLayer(embeddings=emb, lam=lam, dims=dims, cg=cg)


def run_grad_checks(
    config: RunConfig | None = None, sabotage: bool = False
) -> list[CheckResult]:
    """Run every check; results come back in a stable order."""
    if config is None:
        config = RunConfig.defaults()
    dims = config.dims()
    lam = config.lam()
    cg = config.cg_config()
    rng = np.random.default_rng(config.train_config().seed)

    # cap instance sizes at the brute-force guards while tracking the config
    labels = max(1, min(dims.labels, 3))
    pixels_naive = max(1, min(dims.pixels, 40 // labels))
    embed_naive = max(1, min(dims.embed_dim, 6))
    pixels_fd = max(1, min(dims.pixels, 24 // labels))
    embed_fd = max(1, min(dims.embed_dim, 4))

    results = []

    # dense assembly against the matrix-free apply
    err = 0.0
    layer = _random_layer(rng, min(dims.pixels, 16), labels, dims.embed_dim, lam, cg)
    dense = assemble_dense(layer.embeddings, lam)
    for _ in range(100):
        v = rng.standard_normal(layer.dims.n)
        err = max(err, _rel_err(layer.apply(v), dense @ v))
    results.append(_result("explicit_apply", err, 1e-12))

    # iterative solve against Cholesky
    err = 0.0
    for _ in range(5):
        layer = _random_layer(
            rng, int(rng.integers(10, 67)), labels, dims.embed_dim, lam, cg
        )
        b = rng.standard_normal(layer.dims.n)
        x_cg, _ = layer.forward(b)
        x_direct = direct_solve(
            ExplicitSystem(assemble_dense(layer.embeddings, lam), b)
        )
        err = max(err, _rel_err(x_cg, x_direct))
    results.append(_result("direct_vs_cg", err, 1e-8))

    # commutation index map against an actual transpose
    err = 0.0
    for _ in range(10):
        m, n = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        mat = rng.standard_normal((m, n))
        out = PermutationMatrix(m, n).apply(mat.ravel(order="F"))
        err = max(err, float(np.abs(out - mat.T.ravel(order="F")).max()))
    results.append(_result("permutation_roundtrip", err, 0.0))

    # efficient embedding gradient against the literal Kronecker route
    err_naive = 0.0
    err_contract = 0.0
    for _ in range(5):
        layer = _random_layer(rng, pixels_naive, labels, embed_naive, lam, cg)
        b = rng.standard_normal(layer.dims.n)
        x, _ = layer.forward(b)
        grads, _ = layer.backward(x, rng.standard_normal(layer.dims.n))
        efficient = grads.d_embeddings
        if sabotage:
            efficient = efficient * SABOTAGE_FACTOR
        naive = dlda_embedding_naive(layer.embeddings, grads.d_unary, x)
        err_naive = max(err_naive, _rel_err(efficient, naive))
        pairwise = dlda_kronecker(grads.d_unary, x)
        contracted = layer.embeddings @ (pairwise + pairwise.T)
        err_contract = max(err_contract, _rel_err(efficient, contracted))
    results.append(_result("naive_vs_efficient", err_naive, 1e-10))
    results.append(_result("pairwise_contraction", err_contract, 1e-12))

    # both gradients against central finite differences of a linear probe loss
    err_emb = 0.0
    err_unary = 0.0
    step = 1e-5
    tight = CgConfig(rel_tol=1e-12, abs_tol=1e-14)
    for _ in range(3):
        layer = _random_layer(rng, pixels_fd, labels, embed_fd, lam, tight)
        b = rng.standard_normal(layer.dims.n)
        dl_dx = rng.standard_normal(layer.dims.n)
        x, _ = layer.forward(b)
        grads, _ = layer.backward(x, dl_dx)
        d_emb = grads.d_embeddings * (SABOTAGE_FACTOR if sabotage else 1.0)
        fd = finite_diff_embedding_grad(layer, b, dl_dx, step)
        mask = np.abs(d_emb) > 1e-6
        if mask.any():
            err_emb = max(
                err_emb,
                float(np.abs((fd[mask] - d_emb[mask]) / d_emb[mask]).max()),
            )
        # unary side: perturb each entry of b in the probe loss dl_dx . x
        op = layer.operator()
        fd_unary = np.zeros(layer.dims.n)
        for i in range(layer.dims.n):
            e = np.zeros(layer.dims.n)
            e[i] = step
            plus, _ = cg_solve(op, b + e, tight)
            minus, _ = cg_solve(op, b - e, tight)
            fd_unary[i] = float(dl_dx @ (plus - minus)) / (2 * step)
        err_unary = max(err_unary, _rel_err(fd_unary, grads.d_unary))
    results.append(_result("fd_embedding", err_emb, 1e-5))
    results.append(_result("fd_unary", err_unary, 1e-5))

    # fixed scalar instance with a hand-derived chain rule value
    layer = GcrfLayer(
        embeddings=[[2.0]], lam=1.0, dims=Dims(1, 1, 1), cg=CgConfig()
    )
    x, _ = layer.forward([10.0])
    grads, _ = layer.backward(x, [5.0])
    d_emb = grads.d_embeddings[0, 0] * (SABOTAGE_FACTOR if sabotage else 1.0)
    err = max(
        abs(float(x[0]) - 2.0),
        abs(float(grads.d_unary[0]) - 1.0),
        abs(float(d_emb) + 8.0),
    )
    results.append(_result("scalar_case", err, 1e-10))
    return results
