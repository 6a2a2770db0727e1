"""Small dense-matrix helpers with explicit storage conventions.

Two conventions live side by side on purpose: ``vec_rowmajor`` walks a
matrix row by row, while ``reshape_colmajor`` fills its result column by
column.  The gradient bookkeeping in :mod:`cnnadapt.jacobian` depends on
this exact pairing (flatten the transpose with ``vec_rowmajor``, undo it
with ``reshape_colmajor``), so neither function may be "fixed" to match
the other.

Row indices in ``row_slice`` are 1-based and inclusive, matching the
convention used throughout the layer formulas.
"""

from __future__ import annotations

import numpy as np


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equally shaped matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i, j) equals a[i, j] * b."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def vec_rowmajor(a: np.ndarray) -> np.ndarray:
    """Flatten a matrix row by row into a vector."""
    return np.asarray(a, dtype=float).reshape(-1)


def reshape_colmajor(x: np.ndarray, n: int, m: int) -> np.ndarray:
    """Fill an (n, m) matrix column by column from vector ``x``.

    Column j holds x[(j-1)n : jn] in 1-based terms.  Note the asymmetry
    with :func:`vec_rowmajor`; see the module docstring.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != n * m:
        raise ValueError(f"reshape_colmajor: length {x.size} != {n}*{m}")
    return x.reshape((n, m), order="F")


def row_slice(a: np.ndarray, i: int, j: int) -> np.ndarray:
    """Rows i..j of ``a`` (1-based, inclusive) as a new matrix."""
    a = np.asarray(a, dtype=float)
    if not (1 <= i <= j <= a.shape[0]):
        raise IndexError(
            f"row_slice: rows {i}..{j} out of range for {a.shape[0]}-row matrix"
        )
    return a[i - 1 : j]
