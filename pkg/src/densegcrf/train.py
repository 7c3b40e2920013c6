"""Miniature end-to-end learning on top of the dense layer.

Linear maps turn per-pixel features into unary scores and embedding columns,
a per-pixel softmax cross-entropy scores the prediction, and plain SGD with a
polynomially decaying step optimizes the two streams in phases: first the
unary map with the pairwise term switched off, then the embedding maps with
the unary map frozen. An optional joint phase trains both together; it is off
by default and carries no accuracy claim.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cg import CgConfig, CgNumericError, CgReport
from .layer import GcrfLayer, LayerGradients
from .tensors import (
    Dims,
    NonFiniteError,
    as_matrix,
    as_vector,
    read_matrix,
    write_matrix,
)

# Phase 2 starts from small random embedding maps: the embedding gradient is
# a sum of outer products with the embeddings themselves, so it vanishes
# identically at zero and SGD could never leave that point. Kept small so the
# initial pairwise term barely perturbs the trained unary prediction.
EMBED_INIT_SCALE = 0.02

MODEL_MANIFEST_FILE = "model.json"
HISTORY_HEADER = ("iter", "phase", "lr", "loss", "accuracy")


class TrainingDivergedError(RuntimeError):
    """Loss or iterates became non-finite during training."""


@dataclass(frozen=True)
class ToyModel:
    """Linear parameter maps from pixel features to the layer inputs.

    w_unary rows map an F-vector of features to the L unary scores of a
    pixel; w_embed[l] maps the same features to the D-dim embedding column of
    variable (p, l). Labels enter only through which map is applied.
    """

    w_unary: np.ndarray  # (L, F)
    w_embed: np.ndarray  # (L, D, F)
    dims: Dims
    feature_dim: int

    def __post_init__(self) -> None:
        lab, d, f = self.dims.labels, self.dims.embed_dim, self.feature_dim
        object.__setattr__(self, "w_unary", as_matrix(self.w_unary, lab, f))
        w_embed = np.ascontiguousarray(np.asarray(self.w_embed, dtype=np.float64))
        if w_embed.shape != (lab, d, f):
            raise ValueError(
                f"w_embed has shape {w_embed.shape}, expected {(lab, d, f)}"
            )
        if not np.isfinite(w_embed).all():
            raise NonFiniteError("w_embed contains non-finite values")
        object.__setattr__(self, "w_embed", w_embed)

    @classmethod
    def zeros(cls, dims: Dims, feature_dim: int) -> "ToyModel":
        return cls(
            w_unary=np.zeros((dims.labels, feature_dim)),
            w_embed=np.zeros((dims.labels, dims.embed_dim, feature_dim)),
            dims=dims,
            feature_dim=feature_dim,
        )


@dataclass(frozen=True)
class TrainConfig:
    base_lr_unary: float = 1e-2
    base_lr_pairwise: float = 2.5e-3
    poly_power: float = 0.9
    iters_per_phase: int = 2000
    batch_size: int = 4
    seed: int = 0
    lam: float = 1.0
    joint_phase: bool = False

    def __post_init__(self) -> None:
        if not (self.base_lr_unary > 0 and self.base_lr_pairwise > 0):
            raise ValueError("learning rates must be positive")
        if not 0 < self.poly_power <= 1:
            raise ValueError(f"poly_power must be in (0, 1], got {self.poly_power}")
        if self.iters_per_phase < 0:
            raise ValueError("iters_per_phase must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.lam > 0:
            raise ValueError("lam must be positive")


@dataclass(frozen=True)
class LossReport:
    loss: float
    dl_dx: np.ndarray  # (N,)
    pixel_accuracy: float


@dataclass(frozen=True)
class ForwardPass:
    """One pass through the parameter maps and the dense layer."""

    unary: np.ndarray  # (N,)
    embeddings: np.ndarray  # (D, N)
    prediction: np.ndarray  # (N,)
    report: CgReport
    layer: GcrfLayer


@dataclass(frozen=True)
class WeightGradients:
    d_unary: np.ndarray  # (L, F)
    d_embed: np.ndarray  # (L, D, F)


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    phase: int
    lr: float
    loss: float
    accuracy: float


def softmax_xent(x: np.ndarray, truth: np.ndarray, dims: Dims) -> LossReport:
    """Mean per-pixel cross-entropy over length-L score blocks of x.

    The gradient is the usual softmax-minus-onehot, divided by the pixel
    count so loss magnitudes are comparable across image sizes.
    """
    x = as_vector(x, dims.n)
    truth = np.asarray(truth)
    if truth.shape != (dims.pixels,):
        raise ValueError(
            f"truth has shape {truth.shape}, expected ({dims.pixels},)"
        )
    if not np.issubdtype(truth.dtype, np.integer):
        raise ValueError(f"truth must hold integer labels, got dtype {truth.dtype}")
    if truth.size and (truth.min() < 0 or truth.max() >= dims.labels):
        raise ValueError(
            f"labels must lie in [0, {dims.labels}), got range "
            f"[{truth.min()}, {truth.max()}]"
        )
    scores = x.reshape(dims.pixels, dims.labels)
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(dims.pixels)
    loss = float(-log_probs[rows, truth].mean())
    grad = np.exp(log_probs)
    grad[rows, truth] -= 1.0
    accuracy = float((scores.argmax(axis=1) == truth).mean())
    return LossReport(
        loss=loss,
        dl_dx=(grad / dims.pixels).ravel(),
        pixel_accuracy=accuracy,
    )


def model_forward(
    model: ToyModel,
    features: np.ndarray,
    lam: float,
    cg: CgConfig = CgConfig(),
) -> ForwardPass:
    """Map features to unary scores and embeddings, then run inference."""
    features = as_matrix(features, model.feature_dim, model.dims.pixels)
    unary = np.ascontiguousarray((model.w_unary @ features).T).ravel()
    embeddings = np.einsum("ldf,fp->dpl", model.w_embed, features).reshape(
        model.dims.embed_dim, model.dims.n
    )
    layer = GcrfLayer(embeddings=embeddings, lam=lam, dims=model.dims, cg=cg)
    prediction, report = layer.forward(unary)
    return ForwardPass(
        unary=unary,
        embeddings=embeddings,
        prediction=prediction,
        report=report,
        layer=layer,
    )


def model_backward(
    model: ToyModel, features: np.ndarray, grads: LayerGradients
) -> WeightGradients:
    """Push layer input gradients through the linear parameter maps.

    Each weight row/matrix collects its gradient as a sum over pixels of the
    corresponding layer gradient entry times the pixel's feature vector.
    """
    features = as_matrix(features, model.feature_dim, model.dims.pixels)
    d_unary_pl = grads.d_unary.reshape(model.dims.pixels, model.dims.labels)
    d_emb_dpl = grads.d_embeddings.reshape(
        model.dims.embed_dim, model.dims.pixels, model.dims.labels
    )
    return WeightGradients(
        d_unary=np.einsum("pl,fp->lf", d_unary_pl, features),
        d_embed=np.einsum("dpl,fp->ldf", d_emb_dpl, features),
    )


def poly_lr(base_lr: float, t: int, total: int, power: float) -> float:
    """Polynomial decay: base_lr * (1 - t/total)^power for t in [0, total)."""
    if not 0 <= t < total:
        raise ValueError(f"iteration {t} outside phase of length {total}")
    return base_lr * (1.0 - t / total) ** power


def _loss_and_grads(
    model: ToyModel, sample, cfg: TrainConfig, cg: CgConfig
) -> tuple[LossReport, WeightGradients]:
    fwd = model_forward(model, sample.features, cfg.lam, cg)
    report = softmax_xent(fwd.prediction, sample.truth, model.dims)
    layer_grads, _ = fwd.layer.backward(fwd.prediction, report.dl_dx)
    return report, model_backward(model, sample.features, layer_grads)


def _batch_step(model, dataset, batch_idx, cfg, cg):
    """Average loss, accuracy, and weight gradients over one batch."""
    loss = 0.0
    acc = 0.0
    d_unary = np.zeros_like(model.w_unary)
    d_embed = np.zeros_like(model.w_embed)
    for idx in batch_idx:
        report, grads = _loss_and_grads(model, dataset[idx], cfg, cg)
        loss += report.loss
        acc += report.pixel_accuracy
        d_unary += grads.d_unary
        d_embed += grads.d_embed
    k = len(batch_idx)
    return loss / k, acc / k, d_unary / k, d_embed / k


def train_two_phase(
    dataset,
    cfg: TrainConfig,
    dims: Dims,
    cg: CgConfig = CgConfig(),
    phase_callback=None,
) -> tuple[ToyModel, list[HistoryRow]]:
    """Two-phase SGD: unary stream first, then embeddings with unary frozen.

    Returns the trained model and one history row per iteration; when given,
    phase_callback(phase, model) runs after each completed phase (checkpoint
    hook). A non-finite loss or a numerically failed solve aborts with
    TrainingDivergedError. With iters_per_phase=0 the zero-initialized model
    is returned untouched and the seed stream is never consumed.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    feature_dim = dataset[0].features.shape[0]
    model = ToyModel.zeros(dims, feature_dim)
    history: list[HistoryRow] = []
    if cfg.iters_per_phase == 0:
        return model, history

    rng = np.random.default_rng(cfg.seed)
    step = 0

    def run_phase(phase: int, model: ToyModel, base_lrs) -> ToyModel:
        nonlocal step
        lr_unary, lr_embed = base_lrs
        for t in range(cfg.iters_per_phase):
            batch_idx = rng.integers(0, len(dataset), size=cfg.batch_size)
            try:
                loss, acc, g_unary, g_embed = _batch_step(
                    model, dataset, batch_idx, cfg, cg
                )
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"loss became non-finite at phase {phase} iteration {t}"
                    )
                lr = poly_lr(1.0, t, cfg.iters_per_phase, cfg.poly_power)
                updates = {}
                if lr_unary is not None:
                    updates["w_unary"] = model.w_unary - lr * lr_unary * g_unary
                if lr_embed is not None:
                    updates["w_embed"] = model.w_embed - lr * lr_embed * g_embed
                model = replace(model, **updates)
            except (CgNumericError, NonFiniteError) as exc:
                raise TrainingDivergedError(
                    f"numerical blow-up at phase {phase} iteration {t}: {exc}"
                ) from exc
            # the recorded lr is the active stream's (unary wins in a joint phase)
            recorded = lr * (lr_unary if lr_unary is not None else lr_embed)
            history.append(HistoryRow(step, phase, recorded, loss, acc))
            step += 1
        return model

    def phase_done(phase: int, model: ToyModel) -> ToyModel:
        if phase_callback is not None:
            phase_callback(phase, model)
        return model

    model = phase_done(1, run_phase(1, model, (cfg.base_lr_unary, None)))
    model = replace(
        model,
        w_embed=EMBED_INIT_SCALE * rng.standard_normal(model.w_embed.shape),
    )
    model = phase_done(2, run_phase(2, model, (None, cfg.base_lr_pairwise)))
    if cfg.joint_phase:
        model = phase_done(
            3, run_phase(3, model, (cfg.base_lr_unary, cfg.base_lr_pairwise))
        )
    return model, history


def evaluate(
    model: ToyModel,
    samples,
    lam: float,
    cg: CgConfig = CgConfig(),
    unary_only: bool = False,
) -> float:
    """Mean test pixel accuracy; unary_only switches the pairwise term off."""
    if unary_only:
        model = replace(model, w_embed=np.zeros_like(model.w_embed))
    total = 0.0
    count = 0
    for sample in samples:
        fwd = model_forward(model, sample.features, lam, cg)
        total += softmax_xent(fwd.prediction, sample.truth, model.dims).pixel_accuracy
        count += 1
    if count == 0:
        raise ValueError("no samples to evaluate")
    return total / count


def save_model(model: ToyModel, directory) -> None:
    """One matrix file per weight plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    embed_files = [f"w_embed_{l}.txt" for l in range(model.dims.labels)]
    write_matrix(directory / "w_unary.txt", model.w_unary)
    for name, mat in zip(embed_files, model.w_embed):
        write_matrix(directory / name, mat)
    manifest = {
        "P": model.dims.pixels,
        "L": model.dims.labels,
        "D": model.dims.embed_dim,
        "F": model.feature_dim,
        "w_unary": "w_unary.txt",
        "w_embed": embed_files,
    }
    (directory / MODEL_MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="ascii"
    )


def load_model(directory) -> ToyModel:
    directory = Path(directory)
    manifest = json.loads(
        (directory / MODEL_MANIFEST_FILE).read_text(encoding="ascii")
    )
    dims = Dims(
        pixels=manifest["P"], labels=manifest["L"], embed_dim=manifest["D"]
    )
    w_unary = read_matrix(directory / manifest["w_unary"])
    w_embed = np.stack(
        [read_matrix(directory / name) for name in manifest["w_embed"]]
    )
    return ToyModel(
        w_unary=w_unary,
        w_embed=w_embed,
        dims=dims,
        feature_dim=manifest["F"],
    )


def write_history(path, rows, append: bool = True) -> None:
    """Write history rows as CSV; the header is added when the file is new."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.exists() and path.stat().st_size > 0)
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(HISTORY_HEADER)
        for row in rows:
            writer.writerow(
                [row.iteration, row.phase, row.lr, row.loss, row.accuracy]
            )
