"""Fully connected Gaussian CRF scoring layer with low-rank pairwise terms.

The pairwise matrix over N = P*L (pixel, label) variables is the Gram matrix
of learned D-dim embedding columns plus a positive diagonal, so exact MAP
inference is a matrix-free conjugate-gradient solve whose iteration count is
governed by D, not N. Backward passes reuse the same solve and closed-form
outer products. Brute-force oracles, a miniature training harness, synthetic
tasks, and a CLI round out the package.
"""

from .cg import (
    CgConfig,
    CgNumericError,
    CgReport,
    MatrixOperator,
    SpdOperator,
    cg_solve,
)
from .config import ConfigError, RunConfig
from .layer import GcrfLayer, GcrfOperator, LayerGradients, embedding_gradient
from .oracle import (
    DefinitenessError,
    ExplicitSystem,
    OracleError,
    PermutationMatrix,
    SizeGuardError,
    assemble_dense,
    direct_solve,
    dlda_embedding_naive,
    dlda_kronecker,
    finite_diff_embedding_grad,
)
from .synth import (
    LabeledSample,
    PgmFormatError,
    SyntheticTaskSpec,
    box_smooth,
    generate,
    load_pgm,
    split,
)
from .tensors import (
    Dims,
    MatrixFormatError,
    NonFiniteError,
    as_matrix,
    as_vector,
    flat_index,
    read_matrix,
    read_vector,
    write_matrix,
    write_vector,
)
from .train import (
    ForwardPass,
    HistoryRow,
    LossReport,
    ToyModel,
    TrainConfig,
    TrainingDivergedError,
    WeightGradients,
    evaluate,
    load_model,
    model_backward,
    model_forward,
    poly_lr,
    save_model,
    softmax_xent,
    train_two_phase,
    write_history,
)

__version__ = "0.1.0"

__all__ = [
    "CgConfig",
    "CgNumericError",
    "CgReport",
    "ConfigError",
    "DefinitenessError",
    "Dims",
    "ExplicitSystem",
    "ForwardPass",
    "GcrfLayer",
    "GcrfOperator",
    "HistoryRow",
    "LabeledSample",
    "LayerGradients",
    "LossReport",
    "MatrixFormatError",
    "MatrixOperator",
    "NonFiniteError",
    "OracleError",
    "PermutationMatrix",
    "PgmFormatError",
    "RunConfig",
    "SizeGuardError",
    "SpdOperator",
    "SyntheticTaskSpec",
    "ToyModel",
    "TrainConfig",
    "TrainingDivergedError",
    "WeightGradients",
    "as_matrix",
    "as_vector",
    "assemble_dense",
    "box_smooth",
    "cg_solve",
    "direct_solve",
    "dlda_embedding_naive",
    "dlda_kronecker",
    "embedding_gradient",
    "evaluate",
    "finite_diff_embedding_grad",
    "flat_index",
    "generate",
    "load_model",
    "load_pgm",
    "model_backward",
    "model_forward",
    "poly_lr",
    "read_matrix",
    "read_vector",
    "save_model",
    "softmax_xent",
    "split",
    "train_two_phase",
    "write_history",
    "write_matrix",
    "write_vector",
]
