"""Dense float64 containers, the pixel-label flattening convention, and text file I/O.

Everything downstream works on plain numpy arrays; the helpers here validate
shapes and finiteness at construction boundaries and define the one file format
shared by the CLI, checkpoints, and datasets.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MatrixFormatError(ValueError):
    """A matrix text file could not be parsed; the message names the offending line."""


class NonFiniteError(ValueError):
    """A value container held NaN or infinity; distinct so callers can treat
    numerical blow-ups differently from shape mistakes."""


@dataclass(frozen=True)
class Dims:
    """Problem sizes: P pixels, L labels per pixel, D embedding dimensions.

    The scoring vector has one entry per (pixel, label) pair, so its length is
    N = P * L. D is the width of the per-variable embedding; the model targets
    D much smaller than N but nothing here assumes it.
    """

    pixels: int
    labels: int
    embed_dim: int

    def __post_init__(self) -> None:
        if self.pixels < 1:
            raise ValueError(f"pixels must be positive, got {self.pixels}")
        if self.labels < 1:
            raise ValueError(f"labels must be positive, got {self.labels}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")

    @property
    def n(self) -> int:
        """Number of scalar variables, P * L."""
        return self.pixels * self.labels


def flat_index(p: int, l: int, dims: Dims) -> int:
    """Variable index of (pixel p, label l): p * L + l, label-major within a pixel.

    Keeps each pixel's label block contiguous so per-pixel softmax is a slice.
    """
    if not 0 <= p < dims.pixels:
        raise IndexError(f"pixel index {p} out of range [0, {dims.pixels})")
    if not 0 <= l < dims.labels:
        raise IndexError(f"label index {l} out of range [0, {dims.labels})")
    return p * dims.labels + l


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-d array, rejecting non-finite entries."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d array, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {m.shape[1]}")
    if not np.isfinite(m).all():
        raise NonFiniteError("matrix contains non-finite entries")
    return np.ascontiguousarray(m)


def as_vector(values, length: int | None = None) -> np.ndarray:
    """Coerce to a contiguous float64 1-d array, rejecting non-finite entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d array, got ndim={v.ndim}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"expected length {length}, got {v.shape[0]}")
    if not np.isfinite(v).all():
        raise NonFiniteError("vector contains non-finite entries")
    return np.ascontiguousarray(v)


def write_matrix(path, m) -> None:
    """Write `rows cols` on the first line, then row-major entries, one row per line.

    Entries use Python's shortest round-trip decimal form, so read_matrix
    reproduces every value bit-exactly.
    """
    m = as_matrix(m)
    rows, cols = m.shape
    lines = [f"{rows} {cols}"]
    for row in m:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_matrix(path) -> np.ndarray:
    """Parse the text format written by write_matrix.

    The header line holds `rows cols`; the remaining rows * cols values may be
    split across lines arbitrarily. Raises MatrixFormatError naming the line of
    the first problem.
    """
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines:
        raise MatrixFormatError("line 1: empty file, expected `rows cols` header")
    header = lines[0].split()
    if len(header) != 2:
        raise MatrixFormatError(
            f"line 1: expected `rows cols`, got {len(header)} tokens"
        )
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError:
        raise MatrixFormatError(f"line 1: non-integer header {lines[0]!r}") from None
    if rows < 0 or cols < 0:
        raise MatrixFormatError(f"line 1: negative dimension in {lines[0]!r}")

    expected = rows * cols
    data = np.empty(expected, dtype=np.float64)
    count = 0
    for lineno, line in enumerate(lines[1:], start=2):
        for token in line.split():
            if count >= expected:
                raise MatrixFormatError(
                    f"line {lineno}: more than {expected} values in a "
                    f"{rows}x{cols} matrix"
                )
            try:
                value = float(token)
            except ValueError:
                raise MatrixFormatError(
                    f"line {lineno}: unparsable value {token!r}"
                ) from None
            if not np.isfinite(value):
                raise MatrixFormatError(
                    f"line {lineno}: non-finite value {token!r}"
                )
            data[count] = value
            count += 1
    if count != expected:
        raise MatrixFormatError(
            f"line {len(lines)}: file ends after {count} of {expected} values"
        )
    return data.reshape(rows, cols)


def write_vector(path, v) -> None:
    """Serialize a vector as a 1 x len matrix."""
    v = as_vector(v)
    write_matrix(path, v.reshape(1, -1))


def read_vector(path) -> np.ndarray:
    """Read a vector stored as either a 1 x len or len x 1 matrix."""
    m = read_matrix(path)
    if m.shape[0] != 1 and m.shape[1] != 1:
        raise MatrixFormatError(
            f"line 1: expected a 1 x n or n x 1 matrix for a vector, got "
            f"{m.shape[0]}x{m.shape[1]}"
        )
    return m.ravel()
