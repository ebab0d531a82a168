"""KCP and KT weight representations.

A weight tensor with modes ``m[i] * n[i]`` is stored as K branches of factor
matrices: ``A[k][i]`` of shape ``(m[i], cA[k])`` and ``B[k][i]`` of shape
``(n[i], cB[k])``.  Read as a KT weight, branch ``k`` is the pair of
CP-factored tensors whose Kronecker products sum to the dense tensor.  Read
as a KCP weight, the same numbers form CP factor matrices built by
concatenating the per-branch Kronecker blocks (see :func:`assemble_factor`).
The two readings share storage; converting between them never copies data.

Kernel tensors are implicitly all-ones everywhere: all scale lives in the
factors, which removes redundant degrees of freedom.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .tensor import kronecker, outer, vec

__all__ = [
    "KCPConfig",
    "KCPWeight",
    "KTWeight",
    "WeightFormatError",
    "kt_to_kcp",
    "kcp_to_kt",
    "assemble_factor",
    "reconstruct_dense",
    "reconstruct_kt_dense",
    "matricize_rank_k",
    "kt_rank_lower_bound",
    "random_init",
    "serialize",
    "deserialize",
    "save",
    "load",
]

MAGIC = b"KCPW1"

# numerical-rank cutoff relative to the largest singular value; fp64 SVD
# noise floor at desk scale
DEFAULT_RANK_TOL = 1e-10


class WeightFormatError(ValueError):
    """Raised when a serialized weight stream is malformed."""


@dataclass(frozen=True)
class KCPConfig:
    """Shape and rank metadata for a KCP/KT weight.

    ``m`` and ``n`` are the input/output mode sizes (identical across all
    branches), ``cA[k]``/``cB[k]`` the per-branch CP ranks.  The number of
    branches K is ``len(cA)``.
    """

    m: tuple[int, ...]
    n: tuple[int, ...]
    cA: tuple[int, ...]
    cB: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "cA", tuple(int(v) for v in self.cA))
        object.__setattr__(self, "cB", tuple(int(v) for v in self.cB))
        if len(self.m) != len(self.n) or len(self.m) == 0:
            raise ValueError(
                f"m and n must be non-empty and equally long, got {self.m} / {self.n}"
            )
        if len(self.cA) != len(self.cB) or len(self.cA) == 0:
            raise ValueError(
                f"cA and cB must be non-empty and equally long, got {self.cA} / {self.cB}"
            )
        for name, values in (("m", self.m), ("n", self.n), ("cA", self.cA), ("cB", self.cB)):
            if any(v < 1 for v in values):
                raise ValueError(f"{name} entries must be >= 1, got {values}")

    @classmethod
    def uniform(cls, m: Sequence[int], n: Sequence[int], K: int, cA: int, cB: int) -> "KCPConfig":
        """Config with the same CP ranks on every branch."""
        return cls(tuple(m), tuple(n), (cA,) * K, (cB,) * K)

    @property
    def d(self) -> int:
        return len(self.m)

    @property
    def K(self) -> int:
        return len(self.cA)

    @property
    def C(self) -> int:
        """Total CP rank: sum over branches of cA[k] * cB[k]."""
        return sum(a * b for a, b in zip(self.cA, self.cB))

    @property
    def input_size(self) -> int:
        return int(np.prod(self.m))

    @property
    def output_size(self) -> int:
        return int(np.prod(self.n))

    @property
    def dense_modes(self) -> tuple[int, ...]:
        return tuple(mi * ni for mi, ni in zip(self.m, self.n))

    @property
    def n_params(self) -> int:
        """Stored scalars: factor matrix entries over all branches and modes."""
        return sum(
            sum(mi * a + ni * b for mi, ni in zip(self.m, self.n))
            for a, b in zip(self.cA, self.cB)
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Read-only float64 view of ``arr``; copies unless already frozen.

    Passing an already-frozen array through unchanged is what lets several
    weights share one factor matrix as the same physical object.
    """
    if (
        isinstance(arr, np.ndarray)
        and arr.dtype == np.float64
        and arr.flags["C_CONTIGUOUS"]
        and not arr.flags["WRITEABLE"]
    ):
        return arr
    out = np.array(arr, dtype=np.float64, order="C")
    out.setflags(write=False)
    return out


def _validate_factors(config, A, B):
    if len(A) != config.K or len(B) != config.K:
        raise ValueError(f"expected {config.K} branches, got {len(A)} / {len(B)}")
    A = tuple(tuple(_freeze(a) for a in branch) for branch in A)
    B = tuple(tuple(_freeze(b) for b in branch) for branch in B)
    for k in range(config.K):
        if len(A[k]) != config.d or len(B[k]) != config.d:
            raise ValueError(f"branch {k} must carry {config.d} factor matrices per side")
        for i in range(config.d):
            want_a = (config.m[i], config.cA[k])
            want_b = (config.n[i], config.cB[k])
            if A[k][i].shape != want_a:
                raise ValueError(f"A[{k}][{i}] has shape {A[k][i].shape}, expected {want_a}")
            if B[k][i].shape != want_b:
                raise ValueError(f"B[{k}][{i}] has shape {B[k][i].shape}, expected {want_b}")
    return A, B


@dataclass(frozen=True)
class KCPWeight:
    """Weight in KCP form: factor matrices indexed ``A[k][i]``, ``B[k][i]``."""

    config: KCPConfig
    A: tuple[tuple[np.ndarray, ...], ...]
    B: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        A, B = _validate_factors(self.config, self.A, self.B)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_params(self) -> int:
        return self.config.n_params


@dataclass(frozen=True)
class KTWeight:
    """Same storage as :class:`KCPWeight`, read branch-wise as K Kronecker pairs."""

    config: KCPConfig
    A: tuple[tuple[np.ndarray, ...], ...]
    B: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        A, B = _validate_factors(self.config, self.A, self.B)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


def kt_to_kcp(kt: KTWeight) -> KCPWeight:
    """Re-tag a KT weight as KCP.  Storage is shared, nothing is copied."""
    return KCPWeight(kt.config, kt.A, kt.B)


def kcp_to_kt(w: KCPWeight) -> KTWeight:
    """Inverse re-tag of :func:`kt_to_kcp`."""
    return KTWeight(w.config, w.A, w.B)


def assemble_factor(w: KCPWeight | KTWeight, i: int) -> np.ndarray:
    """Mode-``i`` CP factor matrix: the K Kronecker blocks side by side.

    Shape ``(m[i]*n[i], C)`` with branch order preserved; column ``c`` inside
    branch ``k`` pairs A-column ``gamma`` with B-column ``tau`` at the
    combined index ``gamma + tau*cA[k]``.
    """
    cfg = w.config
    if not 0 <= i < cfg.d:
        raise ValueError(f"mode {i} out of range for order {cfg.d}")
    blocks = [kronecker(w.A[k][i], w.B[k][i]) for k in range(cfg.K)]
    return np.concatenate(blocks, axis=1)


def _cp_dense(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Dense tensor of a CP factorization with an implicit all-ones kernel."""
    rank = factors[0].shape[1]
    shape = tuple(f.shape[0] for f in factors)
    out = np.zeros(shape)
    for c in range(rank):
        out += outer([f[:, c] for f in factors])
    return out


def _branch_dense(w: KCPWeight | KTWeight, k: int) -> tuple[np.ndarray, np.ndarray]:
    return _cp_dense(w.A[k]), _cp_dense(w.B[k])


def _pair_product(a_dense: np.ndarray, b_dense: np.ndarray) -> np.ndarray:
    """Combine factor tensors entrywise into modes ``m[i]*n[i]``.

    The combined index on mode ``i`` is ``mu_i + nu_i*m[i]`` (input index
    fastest), so the ``(nu_i, mu_i)`` axis pairs are interleaved before the
    C-order reshape merges them.
    """
    d = a_dense.ndim
    full = np.multiply.outer(b_dense, a_dense)  # axes (nu_1..nu_d, mu_1..mu_d)
    perm = []
    for i in range(d):
        perm.extend([i, d + i])
    full = np.transpose(full, perm)
    modes = tuple(a_dense.shape[i] * b_dense.shape[i] for i in range(d))
    return full.reshape(modes)


def reconstruct_kt_dense(kt: KTWeight) -> np.ndarray:
    """Dense tensor of a KT weight: sum over branches of Kronecker pairs."""
    cfg = kt.config
    out = np.zeros(cfg.dense_modes)
    for k in range(cfg.K):
        a_dense, b_dense = _branch_dense(kt, k)
        out += _pair_product(a_dense, b_dense)
    return out


def reconstruct_dense(w: KCPWeight) -> np.ndarray:
    """Dense tensor of a KCP weight: sum of rank-1 outer products over all C columns."""
    cfg = w.config
    factors = [assemble_factor(w, i) for i in range(cfg.d)]
    return _cp_dense(factors)


def matricize_rank_k(kt: KTWeight) -> np.ndarray:
    """Rank-K matrix form: sum over branches of vec(A_k) vec(B_k)^T.

    Vectorization uses the first-index-fastest convention, so this equals the
    (input x output) matricization of the dense tensor.
    """
    cfg = kt.config
    out = np.zeros((cfg.input_size, cfg.output_size))
    for k in range(cfg.K):
        a_dense, b_dense = _branch_dense(kt, k)
        out += np.outer(vec(a_dense), vec(b_dense))
    return out


def kt_rank_lower_bound(w: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> int:
    """Numerical matrix rank: singular values above ``tol * sigma_max``.

    This is a lower bound on the branch count K of any exact KT form of the
    matrix (each branch contributes a rank-1 term).
    """
    if w.ndim != 2:
        raise ValueError(f"rank bound needs a matrix, got {w.ndim}-d input")
    sigma = np.linalg.svd(w, compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > tol * sigma[0]))


def random_init(config: KCPConfig, seed: int) -> KCPWeight:
    """Gaussian factors scaled so reconstructed dense entries have variance
    about ``2 / (input_size + output_size)``.

    Each dense entry is a sum of C products of 2d independent factor entries,
    so a per-factor standard deviation of ``(target_var / C) ** (1 / (4d))``
    puts the dense-entry variance at the target.  Factors are drawn
    branch-major, mode-minor, A before B, so equal seeds give identical
    weights.
    """
    rng = np.random.default_rng(seed)
    target_var = 2.0 / (config.input_size + config.output_size)
    sigma = (target_var / config.C) ** (1.0 / (4 * config.d))
    A = []
    B = []
    for k in range(config.K):
        branch_a = []
        branch_b = []
        for i in range(config.d):
            branch_a.append(rng.normal(0.0, sigma, size=(config.m[i], config.cA[k])))
            branch_b.append(rng.normal(0.0, sigma, size=(config.n[i], config.cB[k])))
        A.append(tuple(branch_a))
        B.append(tuple(branch_b))
    return KCPWeight(config, tuple(A), tuple(B))


def serialize(w: KCPWeight | KTWeight) -> bytes:
    """Encode to the KCPW1 byte format.

    Layout: 5-byte magic ``KCPW1``; little-endian u32 fields d, K, the d
    input mode sizes, the d output mode sizes, the K A-side ranks, the K
    B-side ranks; then all factor entries as little-endian f64, branch-major
    and mode-minor with A before B, each matrix row-major.
    """
    cfg = w.config
    header = [cfg.d, cfg.K, *cfg.m, *cfg.n, *cfg.cA, *cfg.cB]
    parts = [MAGIC, struct.pack(f"<{len(header)}I", *header)]
    for k in range(cfg.K):
        for i in range(cfg.d):
            parts.append(np.ascontiguousarray(w.A[k][i]).astype("<f8").tobytes())
            parts.append(np.ascontiguousarray(w.B[k][i]).astype("<f8").tobytes())
    return b"".join(parts)


def deserialize(data: bytes) -> KCPWeight:
    """Decode the KCPW1 byte format; exact inverse of :func:`serialize`."""
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise WeightFormatError(
            f"bad magic at offset 0: expected {MAGIC!r}, got {data[:len(MAGIC)]!r}"
        )
    pos = len(MAGIC)

    def read_u32(count: int, what: str) -> tuple[int, ...]:
        nonlocal pos
        need = 4 * count
        if len(data) < pos + need:
            raise WeightFormatError(
                f"truncated while reading {what} at offset {pos}: "
                f"expected {pos + need} bytes total, got {len(data)}"
            )
        values = struct.unpack_from(f"<{count}I", data, pos)
        pos += need
        return values

    d, K = read_u32(2, "order and branch count")
    if d < 1 or K < 1:
        raise WeightFormatError(f"order {d} and branch count {K} must be >= 1 (offset 5)")
    m = read_u32(d, "input mode sizes")
    n = read_u32(d, "output mode sizes")
    cA = read_u32(K, "A-side ranks")
    cB = read_u32(K, "B-side ranks")
    try:
        cfg = KCPConfig(m, n, cA, cB)
    except ValueError as exc:
        raise WeightFormatError(f"inconsistent header (offset 13): {exc}") from exc

    expected = sum(
        (cfg.m[i] * cfg.cA[k] + cfg.n[i] * cfg.cB[k])
        for k in range(K)
        for i in range(d)
    )
    if len(data) != pos + 8 * expected:
        raise WeightFormatError(
            f"payload size mismatch at offset {pos}: expected {pos + 8 * expected} "
            f"bytes total for {expected} factor entries, got {len(data)}"
        )

    def read_matrix(rows: int, cols: int) -> np.ndarray:
        nonlocal pos
        count = rows * cols
        mat = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(rows, cols)
        pos += 8 * count
        return mat.astype(np.float64)

    A = []
    B = []
    for k in range(K):
        branch_a = []
        branch_b = []
        for i in range(d):
            branch_a.append(read_matrix(cfg.m[i], cfg.cA[k]))
            branch_b.append(read_matrix(cfg.n[i], cfg.cB[k]))
        A.append(tuple(branch_a))
        B.append(tuple(branch_b))
    return KCPWeight(cfg, tuple(A), tuple(B))


def save(w: KCPWeight | KTWeight, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(w))


def load(path) -> KCPWeight:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
