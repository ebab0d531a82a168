"""Input times KCP-weight multiplication strategies with exact operation counts.

Four routes compute the same tensor ``y`` with modes ``n[0..d-1]`` from an
input with modes ``m[0..d-1]``:

* ``multiply_dense_oracle``: matricize the weight and do a plain
  matrix-vector product.  Ground truth, no counting.
* ``multiply_naive``: contract the assembled CP factors left to right while
  keeping a separate rank mode per step, then remove all d accumulated rank
  modes at once against the materialized all-ones superdiagonal kernel.  The
  final intermediate grows with the d-th power of the total CP rank; the op
  exists to demonstrate that, guarded by a configurable size cap.
* ``multiply_strict``: the fast path.  One shared rank mode of size C (the
  total CP rank) threads through the whole chain: every step contracts one
  input mode against the assembled factor while the rank mode rides along
  diagonally, and a single contraction with the all-ones vector removes it
  after the last mode.  Intermediates stay linear in C.
* ``multiply_relaxed``: per-branch variant that never assembles factor
  blocks.  Each branch carries its own pair of small rank modes (one per
  factor side) through all d modes: the A factor is contracted when the
  input mode is consumed, the B factor enters as a pure product when the
  output mode is appended.  Branch outputs are reduced at the end.  Skipping
  the block assembly keeps the per-step cost free of the branch-count
  blowup.  Requires even order.
* ``multiply_parallel``: evaluates the K branches of the strict chain as
  independent tasks (each on its own small rank mode) and sums the branch
  outputs in fixed ascending-branch order, so results are bitwise
  reproducible for any worker count.

Operation counts follow one convention everywhere: a scalar multiply costs
1, a scalar add costs 1, counts are exact integers.  ``count_flops_strict``
and ``count_flops_relaxed`` evaluate the same numbers from shape arithmetic
alone; the instrumented results match them exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import prod

import numpy as np

from .tensor import unvec, vec
from .weights import KCPConfig, KCPWeight, KTWeight, kcp_to_kt, matricize_rank_k

__all__ = [
    "MultiplyResult",
    "IntermediateSizeError",
    "multiply_dense_oracle",
    "multiply_naive",
    "multiply_strict",
    "multiply_relaxed",
    "multiply_parallel",
    "multiply_backward",
    "strict_vjp",
    "count_flops_strict",
    "count_flops_strict_detail",
    "count_flops_relaxed",
    "count_flops_relaxed_detail",
    "strict_multiply_bound",
    "DEFAULT_NAIVE_CAP",
]

# the naive route is exponential in the total CP rank by design; refuse to
# materialize intermediates beyond this many scalars unless overridden
DEFAULT_NAIVE_CAP = 100_000_000


class IntermediateSizeError(RuntimeError):
    """Raised when the naive route would materialize an oversized intermediate."""


@dataclass(frozen=True)
class MultiplyResult:
    """Output tensor plus the exact scalar operation count that produced it."""

    y: np.ndarray
    mults: int
    adds: int

    @property
    def flops(self) -> int:
        return self.mults + self.adds


def _check_input(x: np.ndarray, config: KCPConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != config.m:
        raise ValueError(f"input has shape {x.shape}, weight expects modes {config.m}")
    return x


def _branch_block_3d(w: KCPWeight | KTWeight, k: int, i: int) -> np.ndarray:
    """Mode-i factor block of branch k as (m_i, n_i, cA_k*cB_k).

    The last axis is the branch-local rank column, A-column index fastest.
    """
    a = w.A[k][i]
    b = w.B[k][i]
    block = np.einsum("ag,bt->abtg", a, b)
    return block.reshape(a.shape[0], b.shape[0], a.shape[1] * b.shape[1])


def _factor_3d(w: KCPWeight | KTWeight, i: int) -> np.ndarray:
    """Assembled mode-i factor as (m_i, n_i, C), branches concatenated."""
    blocks = [_branch_block_3d(w, k, i) for k in range(w.config.K)]
    return np.concatenate(blocks, axis=2)


def _rank_step(T: np.ndarray, w3: np.ndarray, nb: int) -> np.ndarray:
    """One strict step: contract the leading input mode, rank mode shared.

    ``T`` has the consumed mode at axis ``nb`` and the rank mode last; the
    result replaces them with the output mode just before the rank mode.
    Realized as a rank-batched matrix product.
    """
    T2 = np.moveaxis(T, nb, -2)  # [lead..., alpha, c]
    lead = T2.shape[:-2]
    a, c = T2.shape[-2], T2.shape[-1]
    rows = prod(lead) if lead else 1
    out = np.matmul(
        T2.reshape(rows, a, c).transpose(2, 0, 1),  # (c, rows, alpha)
        w3.transpose(2, 0, 1),  # (c, alpha, beta)
    )  # (c, rows, beta)
    return out.transpose(1, 2, 0).reshape(*lead, w3.shape[1], c)


def _strict_chain(x: np.ndarray, factor_3d: list[np.ndarray], d: int, nb: int = 0):
    """Run the strict contraction chain; returns all d+2 intermediates.

    ``x`` may carry ``nb`` leading batch axes that ride along untouched.
    The first step introduces the shared rank mode, every later step keeps
    it, and the final entry has it contracted away against the all-ones
    vector.
    """
    rank = factor_3d[0].shape[2]
    T = np.tensordot(x, factor_3d[0], axes=([nb], [0]))
    inter = [x, T]
    for i in range(1, d):
        T = _rank_step(T, factor_3d[i], nb)
        inter.append(T)
    T = np.tensordot(T, np.ones(rank), axes=([T.ndim - 1], [0]))
    inter.append(T)
    return inter


def _count_chain(factor_3d, inter, d, m):
    """Exact op count of a realized strict chain, read off the live arrays."""
    rank = factor_3d[0].shape[2]
    mults = sum(w3.size for w3 in factor_3d)  # one product per block entry
    adds = 0
    for i in range(d):
        out = inter[i + 1].size
        mults += out * m[i]
        adds += out * (m[i] - 1)
    out = inter[d + 1].size
    mults += out * rank
    adds += out * (rank - 1)
    return mults, adds


def multiply_dense_oracle(x: np.ndarray, w: KCPWeight) -> np.ndarray:
    """Ground truth: matricized weight times vectorized input, then reshape."""
    x = _check_input(x, w.config)
    mat = matricize_rank_k(kcp_to_kt(w))
    return unvec(mat.T @ vec(x), w.config.n)


def multiply_strict(x: np.ndarray, w: KCPWeight) -> MultiplyResult:
    """Fast multiplication with a single shared rank mode of size C."""
    x = _check_input(x, w.config)
    cfg = w.config
    factor_3d = [_factor_3d(w, i) for i in range(cfg.d)]
    inter = _strict_chain(x, factor_3d, cfg.d)
    mults, adds = _count_chain(factor_3d, inter, cfg.d, cfg.m)
    return MultiplyResult(np.ascontiguousarray(inter[-1]), mults, adds)


def multiply_naive(
    x: np.ndarray, w: KCPWeight, cap: int = DEFAULT_NAIVE_CAP
) -> MultiplyResult:
    """Left-to-right contraction that defers all rank removal to the end.

    Every step contracts only the input mode, so one rank mode per step
    accumulates; the final step contracts all d of them against the
    materialized all-ones superdiagonal kernel.
    """
    x = _check_input(x, w.config)
    cfg = w.config
    C = cfg.C
    mults = adds = 0
    T = x
    for i in range(cfg.d):
        w3 = _factor_3d(w, i)
        mults += w3.size
        projected = (T.size // cfg.m[i]) * cfg.n[i] * C
        if projected > cap:
            raise IntermediateSizeError(
                f"naive intermediate would hold {projected} scalars at mode {i}, "
                f"cap is {cap}"
            )
        T = np.tensordot(T, w3, axes=([0], [0]))
        mults += T.size * cfg.m[i]
        adds += T.size * (cfg.m[i] - 1)
    # T now carries axes (n_1, C, n_2, C, ..., n_d, C)
    kernel = np.zeros((C,) * cfg.d)
    kernel[np.diag_indices(C, ndim=cfg.d)] = 1.0
    rank_axes = list(range(1, 2 * cfg.d, 2))
    T = np.tensordot(T, kernel, axes=(rank_axes, list(range(cfg.d))))
    mults += T.size * C**cfg.d
    adds += T.size * (C**cfg.d - 1)
    return MultiplyResult(np.ascontiguousarray(T), mults, adds)


def multiply_relaxed(x: np.ndarray, w: KCPWeight) -> MultiplyResult:
    """Per-branch multiplication without factor-block assembly (even order only).

    Each branch carries a pair of rank modes (A side, B side).  Per mode,
    the input mode is contracted against the A factor with the A-rank mode
    shared, then the output mode is appended as a product with the B factor
    with the B-rank mode shared.  Both rank modes are removed once after the
    last mode, and branch outputs are summed in ascending branch order.
    """
    x = _check_input(x, w.config)
    cfg = w.config
    if cfg.d % 2 != 0:
        raise ValueError(
            f"relaxed multiplication needs an even order, got d={cfg.d}: modes "
            "are consumed in input/output pairs"
        )
    mults = adds = 0
    total = None
    for k in range(cfg.K):
        Xk = x
        for i in range(cfg.d):
            A = w.A[k][i]
            B = w.B[k][i]
            if i == 0:
                Xk = np.tensordot(Xk, A, axes=([0], [0]))  # [m_2.., gamma]
            else:
                # contract the input mode, A-rank shared; B-rank rides along
                Xk = np.moveaxis(Xk, 0, -3)
                Xk = np.einsum("...agt,ag->...gt", Xk, A, optimize=True)
            mults += Xk.size * cfg.m[i]
            adds += Xk.size * (cfg.m[i] - 1)
            Xk = np.einsum("...g,bt->...bgt" if i == 0 else "...gt,bt->...bgt",
                           Xk, B, optimize=True)
            mults += Xk.size
        ones = np.ones((cfg.cA[k], cfg.cB[k]))
        Xk = np.tensordot(Xk, ones, axes=([Xk.ndim - 2, Xk.ndim - 1], [0, 1]))
        mults += Xk.size * cfg.cA[k] * cfg.cB[k]
        adds += Xk.size * (cfg.cA[k] * cfg.cB[k] - 1)
        if total is None:
            total = Xk
        else:
            total = total + Xk
            adds += total.size
    return MultiplyResult(np.ascontiguousarray(total), mults, adds)


def _branch_weight(w: KCPWeight, k: int) -> KCPWeight:
    cfg = w.config
    branch_cfg = KCPConfig(cfg.m, cfg.n, (cfg.cA[k],), (cfg.cB[k],))
    return KCPWeight(branch_cfg, (w.A[k],), (w.B[k],))


def multiply_parallel(x: np.ndarray, w: KCPWeight, workers: int) -> MultiplyResult:
    """Branch-parallel multiplication with an order-fixed reduction.

    Each branch runs the strict chain on its own small rank mode; branch
    outputs are summed in ascending branch order after all tasks finish, so
    the result is bitwise identical for every worker count.
    """
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    x = _check_input(x, w.config)
    cfg = w.config

    def run_branch(k: int):
        bw = _branch_weight(w, k)
        factor_3d = [_factor_3d(bw, i) for i in range(cfg.d)]
        inter = _strict_chain(x, factor_3d, cfg.d)
        return inter[-1], _count_chain(factor_3d, inter, cfg.d, cfg.m)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_branch, range(cfg.K)))

    y = results[0][0]
    mults, adds = results[0][1]
    for branch_y, (bm, ba) in results[1:]:
        y = y + branch_y
        mults += bm
        adds += ba + y.size
    return MultiplyResult(np.ascontiguousarray(y), mults, adds)


def strict_vjp(x: np.ndarray, w: KCPWeight, dY: np.ndarray, nb: int = 0):
    """Reverse-mode derivatives of the strict chain.

    ``x`` and ``dY`` may carry ``nb`` leading batch axes; factor gradients
    are summed over them.  Returns ``(dX, dA, dB)`` with the gradient lists
    shaped like the weight's factor lists.
    """
    cfg = w.config
    d = cfg.d
    factor_3d = [_factor_3d(w, i) for i in range(d)]
    inter = _strict_chain(x, factor_3d, d, nb)

    # undo the trailing all-ones contraction: broadcast over the rank mode
    G = np.multiply.outer(np.asarray(dY, dtype=np.float64), np.ones(cfg.C))
    dW3 = [None] * d
    for i in reversed(range(d)):
        T_prev = inter[i]
        w3 = factor_3d[i]
        if i == 0:
            dT = np.tensordot(G, w3, axes=([G.ndim - 2, G.ndim - 1], [1, 2]))
            dT = np.moveaxis(dT, -1, nb)
            ax_t = [a for a in range(T_prev.ndim) if a != nb]
            ax_g = list(range(G.ndim - 2))
            dW3[i] = np.tensordot(T_prev, G, axes=(ax_t, ax_g))
        else:
            T2 = np.moveaxis(T_prev, nb, -2)  # [lead..., alpha, c]
            dT2 = np.einsum("...bc,abc->...ac", G, w3, optimize=True)
            dT = np.moveaxis(dT2, -2, nb)
            dW3[i] = np.einsum("...ac,...bc->abc", T2, G, optimize=True)
        G = dT

    dA = []
    dB = []
    for k in range(cfg.K):
        offset = sum(cfg.cA[j] * cfg.cB[j] for j in range(k))
        width = cfg.cA[k] * cfg.cB[k]
        branch_dA = []
        branch_dB = []
        for i in range(d):
            blk = dW3[i][:, :, offset : offset + width]
            blk4 = blk.reshape(cfg.m[i], cfg.n[i], cfg.cB[k], cfg.cA[k])
            branch_dA.append(np.einsum("abtg,bt->ag", blk4, w.B[k][i]))
            branch_dB.append(np.einsum("abtg,ag->bt", blk4, w.A[k][i]))
        dA.append(branch_dA)
        dB.append(branch_dB)
    return G, dA, dB


def multiply_backward(x: np.ndarray, w: KCPWeight, dY: np.ndarray):
    """Gradients of the strict multiplication for the input and every factor.

    Returns ``(dX, dA, dB)`` where ``dA[k][i]`` matches ``w.A[k][i]`` in
    shape (same for B).
    """
    x = _check_input(x, w.config)
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != w.config.n:
        raise ValueError(f"dY has shape {dY.shape}, expected {w.config.n}")
    return strict_vjp(x, w, dY, nb=0)


def count_flops_strict_detail(config: KCPConfig) -> tuple[int, int]:
    """Closed-form (multiplies, adds) of the strict path from shapes alone."""
    C = config.C
    m, n, d = config.m, config.n, config.d
    mults = sum(m[i] * n[i] * C for i in range(d))  # block assembly
    adds = 0
    for i in range(d):
        P = prod(n[:i]) * prod(m[i + 1 :])
        out = P * n[i] * C
        mults += out * m[i]
        adds += out * (m[i] - 1)
    N = config.output_size
    mults += N * C
    adds += N * (C - 1)
    return mults, adds


def count_flops_strict(config: KCPConfig) -> int:
    """Exact total operation count of :func:`multiply_strict`."""
    mults, adds = count_flops_strict_detail(config)
    return mults + adds


def count_flops_relaxed_detail(config: KCPConfig) -> tuple[int, int]:
    """Closed-form (multiplies, adds) of the relaxed path from shapes alone."""
    if config.d % 2 != 0:
        raise ValueError("relaxed count is defined for even order only")
    m, n, d = config.m, config.n, config.d
    N = config.output_size
    mults = adds = 0
    for a, b in zip(config.cA, config.cB):
        for i in range(d):
            P = prod(n[:i]) * prod(m[i + 1 :])
            ranks = a if i == 0 else a * b
            out = P * ranks
            mults += out * m[i]
            adds += out * (m[i] - 1)
            mults += P * n[i] * a * b
        mults += N * a * b
        adds += N * (a * b - 1)
    adds += (config.K - 1) * N
    return mults, adds


def count_flops_relaxed(config: KCPConfig) -> int:
    """Exact total operation count of :func:`multiply_relaxed`."""
    mults, adds = count_flops_relaxed_detail(config)
    return mults + adds


def strict_multiply_bound(config: KCPConfig) -> int:
    """Coarse closed-form cost of the strict path: d * max(m,n)^(d+1) * cA * cB * K.

    Uses the maximum mode size and the maximum per-branch ranks, and counts
    one unit per multiply-accumulate.  In the multiply-plus-add convention of
    the exact counters one unit is two scalar operations, so the comparable
    budget is twice this number; the property suite checks the relaxed path
    against that budget and against the exact strict count.
    """
    big = max(max(config.m), max(config.n))
    return (
        config.d * big ** (config.d + 1) * max(config.cA) * max(config.cB) * config.K
    )
