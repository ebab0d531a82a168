"""Minimal dense tensor algebra used as the oracle substrate.

Tensors are plain ``numpy.ndarray`` objects in float64 with C-order (row
major, last index fastest) memory layout.  All combined-index bookkeeping in
this package, however, follows the *first index fastest* convention: a tuple
of indices ``(v1, ..., vk)`` over mode sizes ``(n1, ..., nk)`` flattens to

    v1 + v2*n1 + v3*n1*n2 + ... + vk*n1*...*n(k-1)

which is Fortran-order flattening.  ``multi_index`` / ``split_index`` are the
single source of truth for that convention; ``matricize``, ``unmatricize``,
``vec`` and ``unvec`` realize it with transposes plus Fortran-order reshapes,
and the test suite cross-checks them entry by entry against
``multi_index``/``split_index`` so the two layouts can never drift apart.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

__all__ = [
    "multi_index",
    "split_index",
    "reshape",
    "matricize",
    "unmatricize",
    "vec",
    "unvec",
    "contract",
    "kronecker",
    "outer",
]


def _check_dims(dims: Sequence[int]) -> None:
    if len(dims) == 0:
        raise ValueError("dims must be non-empty")
    for d in dims:
        if d < 1:
            raise ValueError(f"mode sizes must be >= 1, got {tuple(dims)}")


def multi_index(indices: Sequence[int], dims: Sequence[int]) -> int:
    """Flatten ``indices`` over ``dims`` with the first index fastest.

    Returns ``indices[0] + indices[1]*dims[0] + indices[2]*dims[0]*dims[1] + ...``.
    Indices are 0-based.
    """
    if len(indices) != len(dims):
        raise ValueError(
            f"index/dimension mismatch: {len(indices)} indices for {len(dims)} modes"
        )
    _check_dims(dims)
    flat = 0
    stride = 1
    for idx, size in zip(indices, dims):
        if not 0 <= idx < size:
            raise ValueError(f"index {idx} out of range for mode of size {size}")
        flat += idx * stride
        stride *= size
    return flat


def split_index(flat: int, dims: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`multi_index`: recover per-mode indices from ``flat``."""
    _check_dims(dims)
    total = 1
    for d in dims:
        total *= d
    if not 0 <= flat < total:
        raise ValueError(f"flat index {flat} out of range for modes {tuple(dims)}")
    out = []
    for size in dims:
        out.append(flat % size)
        flat //= size
    return tuple(out)


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    """Metadata-only reshape: identical flat (C-order) data, new mode sizes."""
    new_shape = tuple(int(s) for s in new_shape)
    _check_dims(new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ValueError(
            f"element count mismatch: cannot reshape {t.shape} ({t.size} entries) "
            f"to {new_shape} ({int(np.prod(new_shape))} entries)"
        )
    return np.reshape(t, new_shape, order="C")


def _check_mode_partition(ndim: int, row_modes: Sequence[int], col_modes: Sequence[int]) -> None:
    combined = tuple(row_modes) + tuple(col_modes)
    if sorted(combined) != list(range(ndim)):
        raise ValueError(
            f"row modes {tuple(row_modes)} and column modes {tuple(col_modes)} "
            f"must partition the {ndim} modes"
        )


def matricize(t: np.ndarray, row_modes: Sequence[int], col_modes: Sequence[int]) -> np.ndarray:
    """Flatten ``t`` to a matrix, rows over ``row_modes``, columns over ``col_modes``.

    Row/column positions follow the first-index-fastest combined index of the
    listed modes, in the listed order.  ``col_modes`` may be empty, in which
    case the result has a single column.
    """
    _check_mode_partition(t.ndim, row_modes, col_modes)
    rows = int(np.prod([t.shape[m] for m in row_modes])) if row_modes else 1
    cols = int(np.prod([t.shape[m] for m in col_modes])) if col_modes else 1
    perm = tuple(row_modes) + tuple(col_modes)
    return np.reshape(np.transpose(t, perm), (rows, cols), order="F")


def unmatricize(
    mat: np.ndarray,
    dims: Sequence[int],
    row_modes: Sequence[int],
    col_modes: Sequence[int],
) -> np.ndarray:
    """Inverse of :func:`matricize` for a tensor with mode sizes ``dims``."""
    _check_mode_partition(len(dims), row_modes, col_modes)
    if mat.ndim != 2:
        raise ValueError("unmatricize expects a matrix")
    perm = tuple(row_modes) + tuple(col_modes)
    permuted_dims = tuple(dims[m] for m in perm)
    if mat.size != int(np.prod(dims)):
        raise ValueError(
            f"entry count mismatch: matrix has {mat.size}, target modes need {int(np.prod(dims))}"
        )
    t = np.reshape(mat, permuted_dims, order="F")
    inverse = np.argsort(perm)
    return np.transpose(t, inverse)


def vec(t: np.ndarray) -> np.ndarray:
    """Vectorize with the first index fastest (Fortran-order ravel)."""
    return np.ravel(t, order="F")


def unvec(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec`."""
    _check_dims(dims)
    if v.size != int(np.prod(dims)):
        raise ValueError(f"cannot reshape {v.size} entries into modes {tuple(dims)}")
    return np.reshape(v, tuple(dims), order="F")


def contract(
    a: np.ndarray,
    b: np.ndarray,
    axes_a: Sequence[int],
    axes_b: Sequence[int],
) -> np.ndarray:
    """Sum over the paired modes of ``a`` and ``b``.

    Output modes are the remaining modes of ``a`` followed by the remaining
    modes of ``b``, order preserved.
    """
    axes_a = tuple(axes_a)
    axes_b = tuple(axes_b)
    if len(axes_a) != len(axes_b):
        raise ValueError("must contract the same number of modes on each operand")
    for ax_a, ax_b in zip(axes_a, axes_b):
        if a.shape[ax_a] != b.shape[ax_b]:
            raise ValueError(
                f"contracted mode sizes differ: a mode {ax_a} has {a.shape[ax_a]}, "
                f"b mode {ax_b} has {b.shape[ax_b]}"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two matrices under the first-index-fastest layout.

    The entry at combined row ``(alpha, beta)`` and combined column
    ``(gamma, tau)`` equals ``a[alpha, gamma] * b[beta, tau]``, with ``alpha``
    and ``gamma`` the fast indices.  Note this is ``np.kron(b, a)``, not
    ``np.kron(a, b)``; the swap keeps the combined indices consistent with
    :func:`multi_index`.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"kronecker needs two matrices, got {a.ndim}-d and {b.ndim}-d")
    ra, ca = a.shape
    rb, cb = b.shape
    # axes ordered (beta, alpha, tau, gamma) so the C-order reshape combines
    # each pair with the second (fast) index last
    blocks = np.einsum("ag,bt->batg", a, b)
    return np.ascontiguousarray(blocks.reshape(ra * rb, ca * cb))


def outer(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Rank-1 tensor from a list of vectors; entry = product of vector entries."""
    if len(vectors) == 0:
        raise ValueError("outer needs at least one vector")
    result = np.asarray(vectors[0], dtype=np.float64)
    if result.ndim != 1:
        raise ValueError("outer operands must be vectors")
    for v in vectors[1:]:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("outer operands must be vectors")
        result = np.multiply.outer(result, v)
    return result
