"""Acceptance suite: one test per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v`` for one line per criterion;
each test also prints an ``ACCEPTANCE n PASS/FAIL`` line.
"""

import time
from itertools import product

import numpy as np

from kcp.cli import main as cli_main
from kcp.complexity import benchmark_rows, figure4_curves
from kcp.lstm import (
    GATE_ORDER,
    _TrainableCell,
    make_cell_weights,
    train_toy,
    unrolled_loss_and_grads,
    _batch_unvec,
)
from kcp.multiply import (
    count_flops_relaxed,
    count_flops_strict,
    multiply_backward,
    multiply_dense_oracle,
    multiply_naive,
    multiply_parallel,
    multiply_relaxed,
    multiply_strict,
    strict_multiply_bound,
)
from kcp.verify import sample_config
from kcp.weights import (
    KCPConfig,
    KCPWeight,
    kcp_to_kt,
    kt_rank_lower_bound,
    matricize_rank_k,
    random_init,
    reconstruct_dense,
    reconstruct_kt_dense,
)
from kcp.tensor import matricize


def report(number, ok, message):
    print(f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {message}")
    assert ok, f"criterion {number}: {message}"


def rel_err(got, ref):
    return float(np.max(np.abs(got - ref)) / (1.0 + np.max(np.abs(ref))))


def test_criterion_1_parameter_counts():
    t0 = time.time()
    rows = {(r["dataset"], r["ranks"], r["sharing"]): r for r in benchmark_rows()}
    expected = {
        ("UCF11", (4, 4, 2), False): 4736,
        ("UCF11", (4, 2, 2), False): 2624,
        ("YCF", (4, 4, 2), False): 5632,
        ("YCF", (4, 2, 2), False): 3072,
        ("UCF50", (6, 4, 4), False): 8640,
        ("UCF50", (6, 4, 2), False): 7296,
        ("UCF50", (6, 2, 2), False): 4320,
        ("UCF11", (4, 4, 2), True): 1664,
        ("YCF", (4, 4, 2), True): 1696,
        ("YCF", (4, 2, 2), True): 960,
        ("UCF50", (6, 4, 4), True): 3816,
        ("UCF50", (6, 4, 2), True): 3192,
        ("UCF50", (6, 2, 2), True): 1908,
    }
    bad = [key for key, want in expected.items() if rows[key]["params"] != want]
    # the sharing scheme yields 944 for this entry; the published 994 stays
    # flagged as a mismatch rather than being silently matched
    odd = rows[("UCF11", (4, 2, 2), True)]
    flagged = odd["params"] == 944 and odd["reference_params"] == 994 and not odd["match"]
    elapsed = time.time() - t0
    report(
        1,
        not bad and flagged and elapsed < 1.0,
        f"13 exact parameter counts, 944-vs-994 flagged, {elapsed:.2f}s",
    )


def test_criterion_2_compression_ratios():
    rows = {(r["dataset"], r["ranks"], r["sharing"]): r for r in benchmark_rows()}
    targets = {
        ("UCF11", (4, 4, 2), False): 12454,
        ("UCF11", (4, 2, 2), False): 22478,
        ("UCF50", (6, 2, 2), True): 278219,
    }
    bad = []
    for key, want in targets.items():
        got = rows[key]["compression_ratio"]  # truncated toward zero
        if abs(got - want) > 1:
            bad.append((key, got, want))
    report(2, not bad, f"ratios within +-1 after truncation: {bad or 'all three'}")


def test_criterion_3_reconstruction_oracles():
    t0 = time.time()
    rng = np.random.default_rng(2025)
    worst_dense = worst_mat = 0.0
    for trial in range(200):
        cfg = sample_config(rng, d_choices=(2, 3, 4), max_mode=6, max_K=4,
                            max_rank=3, naive_budget=None)
        kt = kcp_to_kt(random_init(cfg, seed=trial))
        dense_kt = reconstruct_kt_dense(kt)
        worst_dense = max(worst_dense, rel_err(reconstruct_dense(kt), dense_kt))
        mat = matricize_rank_k(kt)
        interleaved = dense_kt.reshape([s for pair in zip(cfg.n, cfg.m) for s in pair])
        rows = tuple(range(1, 2 * cfg.d, 2))
        cols = tuple(range(0, 2 * cfg.d, 2))
        worst_mat = max(worst_mat, rel_err(mat, matricize(interleaved, rows, cols)))
    elapsed = time.time() - t0
    report(
        3,
        worst_dense <= 1e-12 and worst_mat <= 1e-12 and elapsed < 60,
        f"200 configs, dense err {worst_dense:.2e}, matricization err "
        f"{worst_mat:.2e}, {elapsed:.1f}s",
    )


def test_criterion_4_multiplication_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(4096)
    worst = 0.0
    bitwise_ok = True
    for trial in range(200):
        cfg = sample_config(rng, d_choices=(2, 4), max_mode=6, max_K=4, max_rank=3)
        w = random_init(cfg, seed=trial)
        x = rng.standard_normal(cfg.m)
        y0 = multiply_dense_oracle(x, w)
        candidates = [
            multiply_naive(x, w).y,
            multiply_strict(x, w).y,
            multiply_relaxed(x, w).y,
        ]
        parallel = [multiply_parallel(x, w, workers=k).y for k in (1, 2, 8)]
        candidates.append(parallel[0])
        worst = max(worst, max(rel_err(y, y0) for y in candidates))
        bitwise_ok = bitwise_ok and all(np.array_equal(parallel[0], p) for p in parallel[1:])
    elapsed = time.time() - t0
    report(
        4,
        worst <= 1e-10 and bitwise_ok and elapsed < 120,
        f"200 configs, max err vs oracle {worst:.2e}, parallel bitwise across "
        f"workers 1/2/8: {bitwise_ok}, {elapsed:.1f}s",
    )


def test_criterion_5_flop_count_theorems():
    rng = np.random.default_rng(555)
    counter_ok = True
    for trial in range(100):
        cfg = sample_config(rng, d_choices=(1, 2, 3, 4), max_mode=5, max_rank=3)
        w = random_init(cfg, seed=trial)
        x = rng.standard_normal(cfg.m)
        counter_ok = counter_ok and multiply_strict(x, w).flops == count_flops_strict(cfg)

    # cost dominance on the full grid, in consistent operation units: the
    # relaxed count never exceeds the strict count, and never exceeds the
    # closed-form budget d*max(m,n)^(d+1)*cA*cB*K once that budget is stated
    # in the same multiply-plus-add units (x2).  The mixed-unit comparison
    # against the raw closed form is arithmetically impossible at 2x2-mode
    # corners (see the repo notes); these two renderings carry the theorem.
    grid_ok = True
    worst_case = None
    for d in (2, 4):
        for mm, nn, a, b, K in product(range(2, 7), range(2, 7), range(1, 5),
                                       range(1, 5), range(1, 4)):
            cfg = KCPConfig.uniform((mm,) * d, (nn,) * d, K, a, b)
            relaxed = count_flops_relaxed(cfg)
            if relaxed > count_flops_strict(cfg) or relaxed > 2 * strict_multiply_bound(cfg):
                grid_ok = False
                worst_case = (d, mm, nn, a, b, K)

    blowup_ok = True
    checked = 0
    while checked < 100:
        cfg = sample_config(rng, d_choices=(2, 3, 4), max_mode=5, max_rank=3)
        if cfg.C < 2:
            continue
        checked += 1
        w = random_init(cfg, seed=checked)
        x = rng.standard_normal(cfg.m)
        blowup_ok = blowup_ok and (
            multiply_naive(x, w).flops > multiply_strict(x, w).flops
        )
    report(
        5,
        counter_ok and grid_ok and blowup_ok,
        "strict counter exact on 100 configs; relaxed <= strict and <= 2x "
        f"closed-form budget on 2400-grid (violation: {worst_case}); naive "
        "exceeds strict on 100 rank>=2 configs",
    )


def test_criterion_6_gradient_checks():
    h = 1e-5
    rng = np.random.default_rng(66)
    worst_layer = 0.0
    for d in (2, 4):
        cfg = KCPConfig.uniform((2,) * d, (2,) * d, 2, 2, 1)
        w = random_init(cfg, seed=d)
        x = rng.standard_normal(cfg.m)
        dY = rng.standard_normal(cfg.n)
        dX, dA, dB = multiply_backward(x, w, dY)

        def layer_loss(weight, inp):
            return float(np.sum(multiply_strict(inp, weight).y * dY))

        for idx in np.ndindex(*cfg.m):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            num = (layer_loss(w, xp) - layer_loss(w, xm)) / (2 * h)
            worst_layer = max(worst_layer, abs(num - dX[idx]) / (1.0 + abs(num)))
        for side, grads in (("A", dA), ("B", dB)):
            for k in range(cfg.K):
                for i in range(cfg.d):
                    for r, c in np.ndindex(*getattr(w, side)[k][i].shape):
                        def perturbed(delta):
                            A = [[m.copy() for m in br] for br in w.A]
                            B = [[m.copy() for m in br] for br in w.B]
                            (A if side == "A" else B)[k][i][r, c] += delta
                            return KCPWeight(cfg, tuple(tuple(br) for br in A),
                                             tuple(tuple(br) for br in B))

                        num = (layer_loss(perturbed(h), x)
                               - layer_loss(perturbed(-h), x)) / (2 * h)
                        worst_layer = max(
                            worst_layer, abs(num - grads[k][i][r, c]) / (1.0 + abs(num))
                        )

    # unrolled toy cell: finite differences through three timesteps
    cfg = KCPConfig.uniform((2, 2), (2, 2), 1, 1, 1)
    cell = make_cell_weights(cfg, cfg.output_size, sharing=False, seed=7)
    xs = [_batch_unvec(rng.standard_normal((2, cfg.input_size)), cfg.m) for _ in range(3)]
    labels = np.array([1.0, 0.0])
    w_out = rng.normal(0.0, 0.5, size=cfg.output_size)
    b_out = 0.1
    _, _, (dA, dB, dU, db, dw_out, db_out) = unrolled_loss_and_grads(
        cell, xs, labels, w_out, b_out
    )

    def unrolled_loss(cell_frozen, wo, bo):
        return unrolled_loss_and_grads(cell_frozen, xs, labels, wo, bo)[0]

    worst_unrolled = 0.0

    def check(analytic, plus, minus):
        nonlocal worst_unrolled
        num = (plus - minus) / (2 * h)
        worst_unrolled = max(worst_unrolled, abs(num - analytic) / (1.0 + abs(num)))

    for g in GATE_ORDER:
        for k in range(cfg.K):
            for i in range(cfg.d):
                for store, grad in (("A", dA), ("B", dB)):
                    mat = getattr(cell.w[g], store)[k][i]
                    for r, c in np.ndindex(*mat.shape):
                        vals = []
                        for delta in (h, -h):
                            t = _TrainableCell(cell)
                            getattr(t, store)[g][k][i][r, c] += delta
                            vals.append(unrolled_loss(t.freeze(), w_out, b_out))
                        check(grad[g][k][i][r, c], *vals)
        for r, c in np.ndindex(*cell.u[g].shape):
            vals = []
            for delta in (h, -h):
                t = _TrainableCell(cell)
                t.u[g][r, c] += delta
                vals.append(unrolled_loss(t.freeze(), w_out, b_out))
            check(dU[g][r, c], *vals)
        for j in range(cfg.output_size):
            vals = []
            for delta in (h, -h):
                t = _TrainableCell(cell)
                t.b[g][j] += delta
                vals.append(unrolled_loss(t.freeze(), w_out, b_out))
            check(db[g][j], *vals)
    for j in range(cfg.output_size):
        wp, wm = w_out.copy(), w_out.copy()
        wp[j] += h
        wm[j] -= h
        check(dw_out[j], unrolled_loss(cell, wp, b_out), unrolled_loss(cell, wm, b_out))
    check(db_out, unrolled_loss(cell, w_out, b_out + h), unrolled_loss(cell, w_out, b_out - h))

    report(
        6,
        worst_layer < 1e-5 and worst_unrolled < 1e-4,
        f"layer rel err {worst_layer:.2e} (< 1e-5), unrolled rel err "
        f"{worst_unrolled:.2e} (< 1e-4)",
    )


def test_criterion_7_rank_sweep_ordering(tmp_path):
    t0 = time.time()
    out = tmp_path / "curves.csv"
    code = cli_main(["curves", "--out", str(out), "--no-figure"])
    elapsed = time.time() - t0
    rows = figure4_curves(4, 20, 8, range(16, 33), P=2, K=4)
    strict_min = True
    for r in range(16, 33):
        at_r = [row for row in rows if row[0] == r]
        kcp = next(row for row in at_r if row[1] == "KCP")
        for other in at_r:
            if other[1] != "KCP" and not (kcp[2] < other[2] and kcp[3] < other[3]):
                strict_min = False
    report(
        7,
        code == 0 and strict_min and out.exists() and elapsed < 1.0,
        f"KCP strictly minimal on both axes for r=16..32, CSV in {elapsed:.2f}s",
    )


def test_criterion_8_rank_lower_bound():
    rng = np.random.default_rng(88)
    ok = True
    for trial in range(100):
        cfg = sample_config(rng, d_choices=(2, 3), max_mode=4, max_K=4,
                            max_rank=3, naive_budget=None)
        kt = kcp_to_kt(random_init(cfg, seed=trial))
        rank = kt_rank_lower_bound(matricize_rank_k(kt), tol=1e-10)
        ok = ok and rank <= cfg.K
    report(8, ok, "numerical rank of the rank-K matrix form <= K on 100 weights")


def test_criterion_9_toy_learnability(tmp_path, capsys):
    t0 = time.time()
    out = tmp_path / "train.csv"
    code = cli_main(["train-toy", "--epochs", "200", "--out", str(out), "--no-figure"])
    elapsed = time.time() - t0
    log = train_toy(task_seed=0, epochs=200, lr=1.0)
    final = log[-1]["train_accuracy"]
    # the published video-recognition accuracy columns need full video
    # training and are intentionally NOT reproduced; this desk-scale
    # learnability run plus the oracle-equivalence suites stand in for them
    report(
        9,
        code == 0 and final >= 0.9 and len(log) <= 200 and elapsed < 300,
        f"train accuracy {final:.3f} in {log[-1]['epoch'] + 1} epochs, {elapsed:.0f}s",
    )


def test_criterion_10_parallel_timing_trend(tmp_path):
    # informational, never gating: record serial vs parallel at C=64, K=4
    out = tmp_path / "timing.csv"
    code = cli_main([
        "timing", "--c-grid", "64", "--repeats", "2", "--workers", "4",
        "--shape-in", "4,4,4,4", "--shape-out", "4,4,4,4", "--ranks", "4,1,1",
        "--out", str(out), "--no-figure",
    ])
    lines = out.read_text().strip().splitlines()
    recorded = code == 0 and len(lines) == 2
    detail = lines[1] if recorded else "no row"
    print(f"ACCEPTANCE 10 PASS (informational): timing row recorded: {detail}")
    assert recorded  # structure only; the speedup value is machine-dependent
