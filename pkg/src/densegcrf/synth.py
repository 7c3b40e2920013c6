"""Synthetic dense-labeling tasks and a minimal PGM reader for demos.

Ground truth comes from the argmax of independently box-smoothed noise
fields, which yields contiguous label regions without any sampler burn-in.
Features are a noisy one-hot encoding of the truth, its local 3x3 average,
and normalized pixel coordinates, so a linear unary classifier is informative
but leaves spatial structure on the table for the pairwise term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import as_matrix


class PgmFormatError(ValueError):
    """Raised for malformed PGM files."""


@dataclass(frozen=True)
class SyntheticTaskSpec:
    width: int
    height: int
    labels: int
    noise_sigma: float = 1.0
    smooth_radius: int = 3
    n_train: int = 40
    n_test: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(
                f"grid must be non-empty, got {self.width}x{self.height}"
            )
        if self.labels < 2:
            raise ValueError(f"need at least 2 labels, got {self.labels}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.smooth_radius < 0:
            raise ValueError(
                f"smooth_radius must be >= 0, got {self.smooth_radius}"
            )
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("sample counts must be non-negative")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def pixels(self) -> int:
        return self.width * self.height

    @property
    def feature_dim(self) -> int:
        # noisy one-hot (L) + its 3x3 local average (L) + (x, y) coordinates
        return 2 * self.labels + 2


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray  # (F, P)
    truth: np.ndarray  # (P,) integer labels

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", as_matrix(self.features))
        truth = np.asarray(self.truth)
        if truth.ndim != 1 or not np.issubdtype(truth.dtype, np.integer):
            raise ValueError("truth must be a 1-D integer array")
        if truth.shape[0] != self.features.shape[1]:
            raise ValueError(
                f"truth length {truth.shape[0]} does not match "
                f"{self.features.shape[1]} feature columns"
            )
        object.__setattr__(self, "truth", truth.astype(np.int64))


def box_smooth(field: np.ndarray, radius: int) -> np.ndarray:
    """Local mean over (2r+1)^2 windows, clipped at the borders.

    Uses a summed-area table, so cost is independent of the radius. Each
    output divides by the actual window size, which keeps the result a true
    mean at the borders (and makes a radius covering the whole grid produce
    an exactly constant field).
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    if radius <= 0:
        return field.copy()
    h, w = field.shape
    summed = np.zeros((h + 1, w + 1))
    summed[1:, 1:] = field.cumsum(axis=0).cumsum(axis=1)
    i0 = np.clip(np.arange(h) - radius, 0, h)
    i1 = np.clip(np.arange(h) + radius + 1, 0, h)
    j0 = np.clip(np.arange(w) - radius, 0, w)
    j1 = np.clip(np.arange(w) + radius + 1, 0, w)
    totals = (
        summed[np.ix_(i1, j1)]
        - summed[np.ix_(i0, j1)]
        - summed[np.ix_(i1, j0)]
        + summed[np.ix_(i0, j0)]
    )
    counts = np.outer(i1 - i0, j1 - j0)
    return totals / counts


def _make_sample(spec: SyntheticTaskSpec, index: int) -> LabeledSample:
    rng = np.random.default_rng([spec.seed, index])
    h, w, lab = spec.height, spec.width, spec.labels
    fields = rng.standard_normal((lab, h, w))
    smoothed = np.stack([box_smooth(f, spec.smooth_radius) for f in fields])
    truth_grid = smoothed.argmax(axis=0)

    onehot = (truth_grid[None, :, :] == np.arange(lab)[:, None, None]).astype(
        np.float64
    )
    noisy = onehot + spec.noise_sigma * rng.standard_normal((lab, h, w))
    local_avg = np.stack([box_smooth(ch, 1) for ch in noisy])
    xs = np.tile(np.arange(w) / max(w - 1, 1), (h, 1))
    ys = np.tile((np.arange(h) / max(h - 1, 1))[:, None], (1, w))
    channels = np.concatenate([noisy, local_avg, xs[None], ys[None]], axis=0)
    return LabeledSample(
        features=channels.reshape(spec.feature_dim, spec.pixels),
        truth=truth_grid.ravel(),
    )


def generate(spec: SyntheticTaskSpec) -> list[LabeledSample]:
    """All samples for a task: the first n_train are the training split.

    Each sample is drawn from its own generator seeded by (seed, index), so
    the output is bit-identical across runs and independent of how many
    other samples are requested.
    """
    return [_make_sample(spec, i) for i in range(spec.n_train + spec.n_test)]


def split(spec: SyntheticTaskSpec, samples: list[LabeledSample]):
    """Partition generate() output into (train, test) per the spec counts."""
    if len(samples) != spec.n_train + spec.n_test:
        raise ValueError(
            f"expected {spec.n_train + spec.n_test} samples, got {len(samples)}"
        )
    return samples[: spec.n_train], samples[spec.n_train :]


def load_pgm(path) -> np.ndarray:
    """Read an ASCII (P2) or binary (P5) PGM image, scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        if pos >= len(data):
            raise PgmFormatError(f"{path}: truncated header")
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos]

    magic = next_token()
    if magic not in (b"P2", b"P5"):
        raise PgmFormatError(f"{path}: bad magic {magic!r}, expected P2 or P5")

    def next_int(what: str) -> int:
        token = next_token()
        try:
            value = int(token)
        except ValueError:
            raise PgmFormatError(f"{path}: invalid {what} {token!r}") from None
        return value

    width = next_int("width")
    height = next_int("height")
    maxval = next_int("maxval")
    if width < 1 or height < 1:
        raise PgmFormatError(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval <= 65535:
        raise PgmFormatError(f"{path}: maxval {maxval} outside (0, 65535]")

    count = width * height
    if magic == b"P2":
        tokens = data[pos:].split()
        if len(tokens) < count:
            raise PgmFormatError(
                f"{path}: expected {count} pixels, found {len(tokens)}"
            )
        try:
            pixels = np.array([int(t) for t in tokens[:count]], dtype=np.float64)
        except ValueError:
            raise PgmFormatError(f"{path}: non-integer pixel value") from None
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = data[pos : pos + count * dtype.itemsize]
        if len(payload) < count * dtype.itemsize:
            raise PgmFormatError(
                f"{path}: truncated payload, {len(payload)} of "
                f"{count * dtype.itemsize} bytes"
            )
        pixels = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return (pixels / maxval).reshape(height, width)
