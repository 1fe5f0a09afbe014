"""Reading and writing observed matrices as triplet or dense text files."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from .core import MaskedMatrix
from .errors import EmptyMaskError, ParseError, ShapeError

__all__ = ["load_triplets", "save_triplets", "load_dense", "save_dense", "load_matrix",
           "save_array", "load_array", "load_vector"]


def load_triplets(path) -> MaskedMatrix:
    """Read ``row,col,value`` lines into a masked matrix.

    Indices are 1-based when no index equals zero, 0-based otherwise. Blank
    lines and lines starting with ``#`` are skipped. A repeated cell keeps its
    last value and triggers a warning.
    """
    entries: dict[tuple[int, int], float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 'row,col,value', got {line!r}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if i < 0 or j < 0:
                raise ParseError(f"{path}:{lineno}: negative index")
            if (i, j) in entries:
                warnings.warn(f"{path}:{lineno}: duplicate cell ({i}, {j}); keeping the last value",
                              stacklevel=2)
            entries[(i, j)] = v
    if not entries:
        raise EmptyMaskError(f"{path}: no entries")
    idx = np.array(list(entries.keys()), dtype=np.int64)
    vals = np.array(list(entries.values()), dtype=float)
    base = 0 if idx.min() == 0 else 1
    idx -= base
    M, N = idx[:, 0].max() + 1, idx[:, 1].max() + 1
    values = np.zeros((M, N))
    mask = np.zeros((M, N), dtype=bool)
    values[idx[:, 0], idx[:, 1]] = vals
    mask[idx[:, 0], idx[:, 1]] = True
    return MaskedMatrix(values, mask)


def save_triplets(path, A: MaskedMatrix, one_based: bool = False) -> None:
    """Write the observed cells of ``A`` as ``row,col,value`` lines in row-major order."""
    off = 1 if one_based else 0
    rows, cols = np.nonzero(A.mask)
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in zip(rows, cols):
            fh.write(f"{i + off},{j + off},{float(A.values[i, j])!r}\n")


def load_dense(path) -> MaskedMatrix:
    """Read whitespace-separated rows; the token ``NA`` marks an unobserved cell."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            toks = raw.split()
            if not toks or toks[0].startswith("#"):
                continue
            try:
                rows.append([np.nan if t == "NA" else float(t) for t in toks])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise ShapeError(f"{path}:{lineno}: expected {len(rows[0])} columns, "
                                 f"got {len(rows[-1])}")
    if not rows:
        raise EmptyMaskError(f"{path}: no rows")
    values = np.array(rows, dtype=float)
    mask = ~np.isnan(values)
    if not mask.any():
        raise EmptyMaskError(f"{path}: no observed entries")
    return MaskedMatrix(np.where(mask, values, 0.0), mask)


def save_dense(path, A: MaskedMatrix) -> None:
    """Write ``A`` with ``NA`` at unobserved cells; values round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(A.M):
            fh.write(" ".join(repr(float(v)) if o else "NA"
                              for v, o in zip(A.values[i], A.mask[i])) + "\n")


def load_matrix(path, fmt: str) -> MaskedMatrix:
    if fmt == "triplets":
        return load_triplets(path)
    if fmt == "dense":
        return load_dense(path)
    raise ParseError(f"unknown format {fmt!r}")


def save_array(path, X: np.ndarray) -> None:
    """Dense numeric array with 17 significant digits, so reloading is exact."""
    np.savetxt(path, np.atleast_2d(X), fmt="%.17g")


def load_array(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, dtype=float, ndmin=2))


def load_vector(path) -> np.ndarray:
    """Whitespace- or newline-separated reals."""
    text = Path(path).read_text(encoding="utf-8").split()
    try:
        return np.array([float(t) for t in text], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
