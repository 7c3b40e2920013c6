"""Fully connected Gaussian CRF scoring layer with low-rank pairwise structure.

The pairwise matrix over all (pixel, label) variables is never formed. It is
the Gram matrix of per-variable embedding columns, so the layer stores only a
D x N embedding matrix and exposes the system matrix through its action

    v  ->  E.T @ (E @ v) + lam * v

which costs two D x N products plus an axpy. Inference minimizes the strictly
convex quadratic energy by solving the corresponding linear system with
conjugate gradients, and the backward pass has closed forms: the unary
gradient solves the same system with the incoming score gradient as the right
hand side, and the embedding gradient is a pair of rank-1 outer products.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cg import CgConfig, CgReport, cg_solve
from .tensors import Dims, as_matrix, as_vector, read_matrix, write_matrix

LAYER_META_FILE = "layer.json"
LAYER_EMBEDDINGS_FILE = "embeddings.txt"


@dataclass(frozen=True)
class LayerGradients:
    """Gradients of a scalar loss with respect to the layer inputs."""

    d_unary: np.ndarray  # (N,)
    d_embeddings: np.ndarray  # (D, N)


@dataclass(frozen=True)
class GcrfOperator:
    """The implicit system matrix: v -> E.T @ (E @ v) + lam * v."""

    embeddings: np.ndarray  # (D, N)
    lam: float

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(
                f"vector has shape {v.shape}, operator dimension is {self.dim}"
            )
        return self.embeddings.T @ (self.embeddings @ v) + self.lam * v


def embedding_gradient(
    embeddings: np.ndarray, g: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Closed-form loss gradient with respect to the embedding matrix.

    g is the unary gradient and x the prediction. Writing G = -outer(g, x) for
    the gradient with respect to the full pairwise matrix, the chain rule
    through the Gram composition gives E @ (G + G.T), assembled here as two
    rank-1 outer products without forming any N x N intermediate.
    """
    eg = embeddings @ g
    ex = embeddings @ x
    return -np.outer(eg, x) - np.outer(ex, g)


@dataclass(frozen=True)
class GcrfLayer:
    """Immutable layer value: embeddings (D x N), diagonal weight, sizes, CG config.

    lam > 0 makes the system matrix strictly positive definite regardless of
    the embeddings, so forward inference always has a unique minimizer.
    Parameter updates build a new layer; forward/backward never mutate.
    """

    embeddings: np.ndarray
    lam: float
    dims: Dims
    cg: CgConfig = CgConfig()

    def __post_init__(self) -> None:
        emb = as_matrix(self.embeddings, rows=self.dims.embed_dim, cols=self.dims.n)
        object.__setattr__(self, "embeddings", emb)
        if not (isinstance(self.lam, (int, float)) and self.lam > 0):
            raise ValueError(f"lam must be a positive scalar, got {self.lam!r}")

    def operator(self) -> GcrfOperator:
        return GcrfOperator(self.embeddings, self.lam)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Apply the system matrix to v without materializing it."""
        return self.operator().apply(as_vector(v, self.dims.n))

    def energy(self, x: np.ndarray, unary: np.ndarray) -> float:
        """Quadratic energy 1/2 (||E x||^2 + lam ||x||^2) - unary . x."""
        x = as_vector(x, self.dims.n)
        unary = as_vector(unary, self.dims.n)
        ex = self.embeddings @ x
        return float(0.5 * (ex @ ex + self.lam * (x @ x)) - unary @ x)

    def forward(self, unary: np.ndarray) -> tuple[np.ndarray, CgReport]:
        """Minimize the energy: solve the system with the unary scores as rhs."""
        unary = as_vector(unary, self.dims.n)
        return cg_solve(self.operator(), unary, self.cg)

    def backward(
        self,
        x: np.ndarray,
        dloss_dx: np.ndarray,
        unary: np.ndarray | None = None,
    ) -> tuple[LayerGradients, CgReport]:
        """Gradients of the loss with respect to unary scores and embeddings.

        x must be the forward solution for the current parameters; pass the
        unary vector to have that re-verified against the CG threshold. The
        unary gradient g solves the same system with dloss_dx as rhs (one CG
        solve, same spectrum as forward); the embedding gradient is the
        closed form -outer(E @ g, x) - outer(E @ x, g).
        """
        x = as_vector(x, self.dims.n)
        dloss_dx = as_vector(dloss_dx, self.dims.n)
        op = self.operator()
        if unary is not None:
            unary = as_vector(unary, self.dims.n)
            resid = float(np.linalg.norm(op.apply(x) - unary))
            bound = max(
                self.cg.rel_tol * float(np.linalg.norm(unary)), self.cg.abs_tol
            )
            # modest slack: x came from CG at exactly this threshold
            if resid > 10.0 * bound:
                raise ValueError(
                    f"stale forward solution: residual {resid:.3e} exceeds "
                    f"threshold {bound:.3e}"
                )
        g, report = cg_solve(op, dloss_dx, self.cg)
        grads = LayerGradients(
            d_unary=g,
            d_embeddings=embedding_gradient(self.embeddings, g, x),
        )
        return grads, report

    def save(self, directory) -> None:
        """Write embeddings as a matrix file plus a JSON metadata document."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_matrix(directory / LAYER_EMBEDDINGS_FILE, self.embeddings)
        meta = {
            "P": self.dims.pixels,
            "L": self.dims.labels,
            "D": self.dims.embed_dim,
            "lambda": self.lam,
            "cg": {
                "rel_tol": self.cg.rel_tol,
                "abs_tol": self.cg.abs_tol,
                "max_iters": self.cg.max_iters,
                "record_energy": self.cg.record_energy,
            },
        }
        (directory / LAYER_META_FILE).write_text(
            json.dumps(meta, indent=2) + "\n", encoding="ascii"
        )

    @classmethod
    def load(cls, directory) -> "GcrfLayer":
        directory = Path(directory)
        meta = json.loads((directory / LAYER_META_FILE).read_text(encoding="ascii"))
        dims = Dims(pixels=meta["P"], labels=meta["L"], embed_dim=meta["D"])
        cg = CgConfig(
            rel_tol=meta["cg"]["rel_tol"],
            abs_tol=meta["cg"]["abs_tol"],
            max_iters=meta["cg"]["max_iters"],
            record_energy=meta["cg"]["record_energy"],
        )
        embeddings = read_matrix(directory / LAYER_EMBEDDINGS_FILE)
        return cls(embeddings=embeddings, lam=meta["lambda"], dims=dims, cg=cg)

    def with_embeddings(self, embeddings: np.ndarray) -> "GcrfLayer":
        """New layer value sharing every setting but the embeddings."""
        return replace(self, embeddings=embeddings)
