"""LSTM cell with KCP-compressed input weights, plus a desk-scale trainer.

Only the four input-to-hidden matrices are compressed; the recurrent
matrices stay dense.  Gate nonlinearities follow the standard convention:
logistic for the forget/input/output gates, tanh for the candidate and for
the cell-state squash.

Weight sharing stores one factor set for all four gates except the
first-mode factor matrices (both sides), which stay per gate.  Shared
factors are the same physical arrays across the gate weights, so the stored
scalar count drops accordingly and gradients from all gates accumulate into
one buffer.

Initialization choices (not dictated elsewhere): recurrent matrices are
Gaussian with standard deviation 0.01, biases start at zero except the
forget-gate bias at +1 to keep early memory open.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .multiply import strict_vjp, _strict_chain, _factor_3d
from .weights import KCPConfig, KCPWeight, _freeze

__all__ = [
    "GATE_ORDER",
    "LSTMState",
    "LSTMCellWeights",
    "TrainingDivergedError",
    "make_cell_weights",
    "make_shared_weights",
    "lstm_step",
    "forward_sequence",
    "cell_kcp_scalar_count",
    "unrolled_loss_and_grads",
    "train_toy",
]

GATE_ORDER = ("f", "i", "z", "o")


class TrainingDivergedError(RuntimeError):
    """Raised when the toy trainer hits a non-finite loss."""


@dataclass(frozen=True)
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.c.shape or self.h.ndim != 1:
            raise ValueError(
                f"state vectors must be equal-length 1-d, got {self.h.shape} / {self.c.shape}"
            )


@dataclass(frozen=True)
class LSTMCellWeights:
    """Per-gate KCP input weight, dense recurrent matrix, and bias."""

    config: KCPConfig
    w: dict  # gate -> KCPWeight
    u: dict  # gate -> (hidden, hidden) ndarray
    b: dict  # gate -> (hidden,) ndarray
    sharing: bool

    def __post_init__(self):
        hidden = self.config.output_size
        for g in GATE_ORDER:
            if g not in self.w or g not in self.u or g not in self.b:
                raise ValueError(f"missing weights for gate {g!r}")
            if self.w[g].config != self.config:
                raise ValueError(f"gate {g!r} weight disagrees with the cell config")
        object.__setattr__(self, "u", {g: _freeze(self.u[g]) for g in GATE_ORDER})
        object.__setattr__(self, "b", {g: _freeze(self.b[g]) for g in GATE_ORDER})
        for g in GATE_ORDER:
            if self.u[g].shape != (hidden, hidden) or self.b[g].shape != (hidden,):
                raise ValueError(f"gate {g!r} recurrent/bias shapes are wrong")

    @property
    def hidden_size(self) -> int:
        return self.config.output_size

    @property
    def input_size(self) -> int:
        return self.config.input_size


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C")
    out.setflags(write=False)
    return out


def _build_gate_weights(config, factors, sharing):
    """Per-gate KCPWeight dict from raw factor arrays.

    ``factors[g]`` holds (A, B) nested lists for gate ``g``.  With sharing
    the mode >= 1 arrays must already be the same objects across gates; they
    are frozen once so the constructed weights keep sharing them physically.
    """
    frozen: dict[int, np.ndarray] = {}

    def freeze_once(arr):
        key = id(arr)
        if key not in frozen:
            frozen[key] = _frozen(arr)
        return frozen[key]

    out = {}
    for g in GATE_ORDER:
        A_raw, B_raw = factors[g]
        A = tuple(tuple(freeze_once(a) for a in branch) for branch in A_raw)
        B = tuple(tuple(freeze_once(b) for b in branch) for branch in B_raw)
        out[g] = KCPWeight(config, A, B)
    if sharing:
        for g in GATE_ORDER[1:]:
            for k in range(config.K):
                for i in range(1, config.d):
                    assert out[g].A[k][i] is out[GATE_ORDER[0]].A[k][i]
    return out


def make_cell_weights(
    config: KCPConfig, hidden: int, *, sharing: bool = False, seed: int = 0
) -> LSTMCellWeights:
    """Fresh cell weights; deterministic in ``seed``."""
    if hidden != config.output_size:
        raise ValueError(
            f"hidden size {hidden} must equal the product of output modes "
            f"({config.output_size})"
        )
    gate_seeds, shared_seed, dense_seed = np.random.SeedSequence(seed).spawn(3)
    gate_rngs = [np.random.default_rng(s) for s in gate_seeds.spawn(4)]
    shared = random_init_from(config, np.random.default_rng(shared_seed))

    factors = {}
    for g, rng in zip(GATE_ORDER, gate_rngs):
        if sharing:
            own = random_init_from(config, rng)
            A = [
                [own.A[k][0] if i == 0 else shared.A[k][i] for i in range(config.d)]
                for k in range(config.K)
            ]
            B = [
                [own.B[k][0] if i == 0 else shared.B[k][i] for i in range(config.d)]
                for k in range(config.K)
            ]
        else:
            own = random_init_from(config, rng)
            A = [list(branch) for branch in own.A]
            B = [list(branch) for branch in own.B]
        factors[g] = (A, B)

    w = _build_gate_weights(config, factors, sharing)
    dense_rng = np.random.default_rng(dense_seed)
    u = {g: dense_rng.normal(0.0, 0.01, size=(hidden, hidden)) for g in GATE_ORDER}
    b = {g: np.zeros(hidden) for g in GATE_ORDER}
    b["f"] = np.full(hidden, 1.0)
    return LSTMCellWeights(config, w, u, b, sharing)


def random_init_from(config: KCPConfig, rng: np.random.Generator) -> KCPWeight:
    """Same distribution and draw order as ``random_init`` but from a live rng."""
    target_var = 2.0 / (config.input_size + config.output_size)
    sigma = (target_var / config.C) ** (1.0 / (4 * config.d))
    A, B = [], []
    for k in range(config.K):
        branch_a, branch_b = [], []
        for i in range(config.d):
            branch_a.append(rng.normal(0.0, sigma, size=(config.m[i], config.cA[k])))
            branch_b.append(rng.normal(0.0, sigma, size=(config.n[i], config.cB[k])))
        A.append(tuple(branch_a))
        B.append(tuple(branch_b))
    return KCPWeight(config, tuple(A), tuple(B))


def make_shared_weights(config: KCPConfig, hidden: int, seed: int) -> LSTMCellWeights:
    """Cell with the first-mode-only unsharing scheme enabled."""
    return make_cell_weights(config, hidden, sharing=True, seed=seed)


def cell_kcp_scalar_count(cell: LSTMCellWeights) -> int:
    """Unique stored scalars across the four gates' KCP factors."""
    seen = set()
    total = 0
    for g in GATE_ORDER:
        for side in (cell.w[g].A, cell.w[g].B):
            for branch in side:
                for mat in branch:
                    if id(mat) not in seen:
                        seen.add(id(mat))
                        total += mat.size
    return total


def _batch_vec(t: np.ndarray) -> np.ndarray:
    """(batch, modes...) -> (batch, prod) with the first mode index fastest."""
    moved = np.moveaxis(t, 0, -1)
    return np.reshape(moved, (-1, t.shape[0]), order="F").T


def _batch_unvec(v: np.ndarray, dims) -> np.ndarray:
    """Inverse of :func:`_batch_vec`."""
    t = np.reshape(v.T, tuple(dims) + (v.shape[0],), order="F")
    return np.moveaxis(t, -1, 0)


def _gate_preactivations(xt: np.ndarray, h: np.ndarray, cell: LSTMCellWeights):
    """Batched s_g = compressed(x) + U_g h + b_g for every gate.

    ``xt`` is (batch, m modes...), ``h`` is (batch, hidden).
    """
    s = {}
    for g in GATE_ORDER:
        wg = cell.w[g]
        factor_3d = [_factor_3d(wg, i) for i in range(wg.config.d)]
        y = _strict_chain(xt, factor_3d, wg.config.d, nb=1)[-1]
        s[g] = _batch_vec(y) + h @ cell.u[g].T + cell.b[g]
    return s


def _step_batch(xt: np.ndarray, h: np.ndarray, c: np.ndarray, cell: LSTMCellWeights):
    """One batched cell step; returns (h', c', cache-for-backprop)."""
    s = _gate_preactivations(xt, h, cell)
    y = {
        "f": _sigmoid(s["f"]),
        "i": _sigmoid(s["i"]),
        "z": np.tanh(s["z"]),
        "o": _sigmoid(s["o"]),
    }
    c_new = y["f"] * c + y["i"] * y["z"]
    tanh_c = np.tanh(c_new)
    h_new = y["o"] * tanh_c
    cache = {"xt": xt, "h_prev": h, "c_prev": c, "y": y, "tanh_c": tanh_c}
    return h_new, c_new, cache


def lstm_step(x: np.ndarray, state: LSTMState, cell: LSTMCellWeights) -> LSTMState:
    """One cell step on a single input vector of length prod(m)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cell.input_size,):
        raise ValueError(f"input has shape {x.shape}, expected ({cell.input_size},)")
    if state.h.shape != (cell.hidden_size,):
        raise ValueError(
            f"state has length {state.h.shape[0]}, expected {cell.hidden_size}"
        )
    xt = _batch_unvec(x[None, :], cell.config.m)
    h, c, _ = _step_batch(xt, state.h[None, :], state.c[None, :], cell)
    return LSTMState(h[0], c[0])


def forward_sequence(
    xs, cell: LSTMCellWeights, init: LSTMState | None = None
) -> list[LSTMState]:
    """Run the cell over a sequence of input vectors; returns every state."""
    xs = list(xs)
    if not xs:
        raise ValueError("forward_sequence needs a non-empty sequence")
    if init is None:
        zero = np.zeros(cell.hidden_size)
        init = LSTMState(zero, zero.copy())
    states = []
    state = init
    for x in xs:
        state = lstm_step(x, state, cell)
        states.append(state)
    return states


# ---------------------------------------------------------------------------
# toy trainer


def _make_task(task_seed: int, samples: int, steps: int, input_size: int):
    """Sequence classification: label is the sign of a fixed linear functional
    of the summed sequence."""
    rng = np.random.default_rng(np.random.SeedSequence((task_seed, 0xA5)))
    xs = rng.standard_normal((steps, samples, input_size))
    teacher = rng.standard_normal(input_size)
    labels = (xs.sum(axis=0) @ teacher > 0).astype(np.float64)
    return xs, labels


class _TrainableCell:
    """Mutable factor/parameter store that re-materializes frozen cell weights."""

    def __init__(self, cell: LSTMCellWeights):
        self.config = cell.config
        self.sharing = cell.sharing
        copies: dict[int, np.ndarray] = {}

        def thaw(arr):
            if id(arr) not in copies:
                copies[id(arr)] = arr.copy()
            return copies[id(arr)]

        self.A = {g: [[thaw(a) for a in br] for br in cell.w[g].A] for g in GATE_ORDER}
        self.B = {g: [[thaw(b) for b in br] for br in cell.w[g].B] for g in GATE_ORDER}
        self.u = {g: cell.u[g].copy() for g in GATE_ORDER}
        self.b = {g: cell.b[g].copy() for g in GATE_ORDER}

    def freeze(self) -> LSTMCellWeights:
        factors = {g: (self.A[g], self.B[g]) for g in GATE_ORDER}
        w = _build_gate_weights(self.config, factors, self.sharing)
        return LSTMCellWeights(self.config, w, self.u, self.b, self.sharing)

    def sgd_update(self, dA, dB, dU, db, lr):
        # with sharing the mode >= 1 arrays alias across gates: update each
        # unique array once, with the gate-summed gradient
        done = set()
        for g in GATE_ORDER:
            for k in range(self.config.K):
                for i in range(self.config.d):
                    for store, grad in ((self.A, dA), (self.B, dB)):
                        arr = store[g][k][i]
                        if id(arr) in done:
                            continue
                        done.add(id(arr))
                        total = grad[g][k][i]
                        if self.sharing and i >= 1:
                            total = sum(grad[gg][k][i] for gg in GATE_ORDER)
                        arr -= lr * total
            self.u[g] -= lr * dU[g]
            self.b[g] -= lr * db[g]


def unrolled_loss_and_grads(frozen: LSTMCellWeights, xs, labels, w_out, b_out):
    """Loss, accuracy, and full gradients of the unrolled classification run.

    ``xs`` is a list of (batch, input modes...) tensors, ``labels`` a 0/1
    vector; the readout is a logistic regression on the final hidden state.
    Gradients come from backpropagation through every step; the trainer and
    the finite-difference checks both go through here.
    """
    config = frozen.config
    samples = labels.shape[0]
    hidden = frozen.hidden_size
    h = np.zeros((samples, hidden))
    c = np.zeros((samples, hidden))
    caches = []
    for xt in xs:
        h, c, cache = _step_batch(xt, h, c, frozen)
        caches.append(cache)

    logits = h @ w_out + b_out
    p = _sigmoid(logits)
    loss = float(
        np.mean(-labels * np.log(p + 1e-12) - (1 - labels) * np.log(1 - p + 1e-12))
    )
    accuracy = float(np.mean((p > 0.5) == labels.astype(bool)))

    dA = {g: [[np.zeros_like(a) for a in br] for br in frozen.w[g].A] for g in GATE_ORDER}
    dB = {g: [[np.zeros_like(b) for b in br] for br in frozen.w[g].B] for g in GATE_ORDER}
    dU = {g: np.zeros_like(frozen.u[g]) for g in GATE_ORDER}
    db = {g: np.zeros_like(frozen.b[g]) for g in GATE_ORDER}

    dlogits = (p - labels) / samples
    dw_out = h.T @ dlogits
    db_out = float(dlogits.sum())
    dh = np.outer(dlogits, w_out)
    dc = np.zeros_like(dh)
    for cache in reversed(caches):
        y, tanh_c = cache["y"], cache["tanh_c"]
        dc = dc + dh * y["o"] * (1.0 - tanh_c**2)
        ds = {
            "o": dh * tanh_c * y["o"] * (1.0 - y["o"]),
            "f": dc * cache["c_prev"] * y["f"] * (1.0 - y["f"]),
            "i": dc * y["z"] * y["i"] * (1.0 - y["i"]),
            "z": dc * y["i"] * (1.0 - y["z"] ** 2),
        }
        dh = np.zeros_like(dh)
        for g in GATE_ORDER:
            dh += ds[g] @ frozen.u[g]
            dU[g] += ds[g].T @ cache["h_prev"]
            db[g] += ds[g].sum(axis=0)
            dy = _batch_unvec(ds[g], config.n)
            _, gA, gB = strict_vjp(cache["xt"], frozen.w[g], dy, nb=1)
            for k in range(config.K):
                for i in range(config.d):
                    dA[g][k][i] += gA[k][i]
                    dB[g][k][i] += gB[k][i]
        dc = dc * y["f"]
    return loss, accuracy, (dA, dB, dU, db, dw_out, db_out)


def train_toy(
    task_seed: int = 0,
    epochs: int = 200,
    lr: float = 1.0,
    *,
    input_modes=(4, 4, 4, 4),
    hidden_modes=(2, 2, 2, 2),
    ranks=(2, 2, 2),
    steps: int = 4,
    samples: int = 96,
    sharing: bool = False,
    target_accuracy: float = 0.9,
):
    """Full-batch SGD on the synthetic sign-classification task.

    Returns a list of per-epoch records ``{"epoch", "loss", "train_accuracy"}``.
    Training stops early once the target accuracy is reached; a non-finite
    loss raises :class:`TrainingDivergedError`.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    K, cA, cB = ranks
    config = KCPConfig.uniform(input_modes, hidden_modes, K, cA, cB)
    hidden = config.output_size
    cell = make_cell_weights(config, hidden, sharing=sharing, seed=task_seed)
    trainable = _TrainableCell(cell)

    xs_flat, labels = _make_task(task_seed, samples, steps, config.input_size)
    xs = [_batch_unvec(xs_flat[t], config.m) for t in range(steps)]

    rng = np.random.default_rng(np.random.SeedSequence((task_seed, 0x5E)))
    w_out = rng.normal(0.0, 0.1, size=hidden)
    b_out = 0.0

    log = []
    for epoch in range(epochs):
        frozen = trainable.freeze()
        loss, accuracy, grads = unrolled_loss_and_grads(frozen, xs, labels, w_out, b_out)
        log.append({"epoch": epoch, "loss": loss, "train_accuracy": accuracy})
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}")
        if (accuracy >= target_accuracy and epoch >= 1) or epoch == epochs - 1:
            break

        dA, dB, dU, db, dw_out, db_out = grads
        trainable.sgd_update(dA, dB, dU, db, lr)
        w_out = w_out - lr * dw_out
        b_out = b_out - lr * db_out
    return log
