import numpy as np
import pytest

from kcp.multiply import (
    DEFAULT_NAIVE_CAP,
    IntermediateSizeError,
    count_flops_relaxed,
    count_flops_relaxed_detail,
    count_flops_strict,
    count_flops_strict_detail,
    multiply_backward,
    multiply_dense_oracle,
    multiply_naive,
    multiply_parallel,
    multiply_relaxed,
    multiply_strict,
    strict_multiply_bound,
)
from kcp.verify import sample_config
from kcp.weights import KCPConfig, KCPWeight, random_init


def rel_err(got, ref):
    return np.max(np.abs(got - ref)) / (1.0 + np.max(np.abs(ref)))


def ones_weight(m, n):
    cfg = KCPConfig.uniform(m, n, 1, 1, 1)
    A = tuple((tuple(np.ones((mi, 1)) for mi in m),))
    B = tuple((tuple(np.ones((ni, 1)) for ni in n),))
    return KCPWeight(cfg, A, B)


class TestDenseOracle:
    def test_all_ones(self):
        w = ones_weight((2, 3), (2, 2))
        y = multiply_dense_oracle(np.ones((2, 3)), w)
        assert np.allclose(y, 6.0)  # every output sums all M inputs

    def test_zero_input(self):
        w = random_init(KCPConfig.uniform((2, 3), (2, 2), 2, 2, 1), seed=0)
        assert np.array_equal(multiply_dense_oracle(np.zeros((2, 3)), w), np.zeros((2, 2)))

    def test_single_mode_is_matvec(self):
        from kcp.weights import kcp_to_kt, matricize_rank_k

        w = random_init(KCPConfig((5,), (3,), (2,), (2,)), seed=1)
        x = np.random.default_rng(2).standard_normal(5)
        mat = matricize_rank_k(kcp_to_kt(w))
        assert np.allclose(multiply_dense_oracle(x, w), mat.T @ x)

    def test_shape_mismatch(self):
        w = ones_weight((2, 3), (2, 2))
        with pytest.raises(ValueError, match="shape"):
            multiply_dense_oracle(np.zeros((3, 2)), w)


class TestNaive:
    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(40):
            cfg = sample_config(rng, d_choices=(1, 2, 3), max_mode=4)
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            assert rel_err(multiply_naive(x, w).y, multiply_dense_oracle(x, w)) <= 1e-10

    def test_rank_one_flops_equal_strict(self):
        rng = np.random.default_rng(4)
        for d in (1, 2, 3, 4):
            cfg = KCPConfig.uniform((2,) * d, (3,) * d, 1, 1, 1)
            w = random_init(cfg, seed=d)
            x = rng.standard_normal(cfg.m)
            assert multiply_naive(x, w).flops == multiply_strict(x, w).flops

    def test_blowup_beats_strict(self):
        rng = np.random.default_rng(5)
        for trial in range(30):
            cfg = sample_config(rng, d_choices=(2, 3, 4), max_mode=4)
            if cfg.C < 2:
                continue
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            assert multiply_naive(x, w).flops > multiply_strict(x, w).flops

    def test_final_intermediate_scales_with_rank_power(self):
        # d=3 with total rank 4: the pre-kernel intermediate holds N * 4^3
        cfg = KCPConfig.uniform((2, 2, 2), (2, 1, 1), 1, 2, 2)
        assert cfg.C == 4
        w = random_init(cfg, seed=6)
        x = np.random.default_rng(7).standard_normal(cfg.m)
        limit = cfg.output_size * cfg.C**3
        with pytest.raises(IntermediateSizeError, match=str(limit)):
            multiply_naive(x, w, cap=limit - 1)
        multiply_naive(x, w, cap=limit)  # exactly at the cap is fine

    def test_default_cap(self):
        assert DEFAULT_NAIVE_CAP == 100_000_000


class TestStrict:
    def test_matches_oracle_many_orders(self):
        rng = np.random.default_rng(8)
        for trial in range(200):
            cfg = sample_config(rng, d_choices=(1, 2, 3, 4, 5), max_mode=4, naive_budget=None)
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            assert rel_err(multiply_strict(x, w).y, multiply_dense_oracle(x, w)) <= 1e-10

    def test_video_gate_shape(self):
        cfg = KCPConfig.uniform((8, 20, 20, 18), (4, 4, 4, 4), 4, 4, 2)
        w = random_init(cfg, seed=9)
        x = np.random.default_rng(10).standard_normal(cfg.m)
        out = multiply_strict(x, w)
        assert out.y.shape == (4, 4, 4, 4)

    def test_counter_matches_closed_form(self):
        rng = np.random.default_rng(11)
        for trial in range(40):
            cfg = sample_config(rng, max_mode=4)
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            out = multiply_strict(x, w)
            mults, adds = count_flops_strict_detail(cfg)
            assert (out.mults, out.adds) == (mults, adds)
            assert out.flops == count_flops_strict(cfg)

    def test_hand_traced_count(self):
        # d=2, m=n=(2,2), single rank-1 branch:
        #   block assembly        2*2*1 + 2*2*1           =  8 multiplies
        #   mode-1 contraction    out 2*2*1=4: 4*2 mults, 4*1 adds
        #   mode-2 contraction    out 2*2*1=4: 4*2 mults, 4*1 adds
        #   rank removal          out 4: 4*1 mults, 4*0 adds
        cfg = KCPConfig.uniform((2, 2), (2, 2), 1, 1, 1)
        assert count_flops_strict_detail(cfg) == (8 + 8 + 8 + 4, 4 + 4)
        assert count_flops_strict(cfg) == 36

    def test_linearity(self):
        rng = np.random.default_rng(12)
        cfg = KCPConfig.uniform((3, 4), (2, 3), 2, 2, 2)
        w = random_init(cfg, seed=13)
        x1 = rng.standard_normal(cfg.m)
        x2 = rng.standard_normal(cfg.m)
        combined = multiply_strict(0.5 * x1 + x2, w).y
        separate = 0.5 * multiply_strict(x1, w).y + multiply_strict(x2, w).y
        assert rel_err(combined, separate) <= 1e-12


class TestRelaxed:
    def test_odd_order_rejected(self):
        cfg = KCPConfig.uniform((2, 2, 2), (2, 2, 2), 1, 1, 1)
        w = random_init(cfg, seed=14)
        with pytest.raises(ValueError, match="even order"):
            multiply_relaxed(np.zeros(cfg.m), w)

    def test_rank_one_pair_hand_expansion(self):
        cfg = KCPConfig.uniform((3, 2), (2, 3), 1, 1, 1)
        w = random_init(cfg, seed=15)
        x = np.random.default_rng(16).standard_normal(cfg.m)
        a1, a2 = w.A[0][0][:, 0], w.A[0][1][:, 0]
        b1, b2 = w.B[0][0][:, 0], w.B[0][1][:, 0]
        scalar = float(np.einsum("ij,i,j->", x, a1, a2))
        assert np.allclose(multiply_relaxed(x, w).y, scalar * np.outer(b1, b2))

    def test_matches_strict(self):
        rng = np.random.default_rng(17)
        for trial in range(200):
            cfg = sample_config(rng, d_choices=(2, 4), max_mode=4, naive_budget=None)
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            assert rel_err(multiply_relaxed(x, w).y, multiply_strict(x, w).y) <= 1e-10

    def test_counter_matches_closed_form(self):
        rng = np.random.default_rng(18)
        for trial in range(40):
            cfg = sample_config(rng, d_choices=(2, 4), max_mode=4, naive_budget=None)
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            out = multiply_relaxed(x, w)
            assert (out.mults, out.adds) == count_flops_relaxed_detail(cfg)

    def test_count_requires_even_order(self):
        with pytest.raises(ValueError, match="even order"):
            count_flops_relaxed(KCPConfig.uniform((2,), (2,), 1, 1, 1))

    def test_never_above_strict_on_real_modes(self):
        # all mode sizes >= 2, as in any meaningful mode factorization
        rng = np.random.default_rng(19)
        for _ in range(200):
            cfg = sample_config(
                rng, d_choices=(2, 4), max_mode=6, naive_budget=None, min_mode=2
            )
            assert count_flops_relaxed(cfg) <= count_flops_strict(cfg)
            assert count_flops_relaxed(cfg) <= 2 * strict_multiply_bound(cfg)


class TestParallel:
    def test_worker_count_validated(self):
        w = ones_weight((2, 2), (2, 2))
        with pytest.raises(ValueError, match=">= 1"):
            multiply_parallel(np.zeros((2, 2)), w, workers=0)

    def test_bitwise_across_worker_counts(self):
        rng = np.random.default_rng(20)
        for trial in range(20):
            cfg = sample_config(rng, d_choices=(2, 4), max_mode=4, naive_budget=None)
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            outs = [multiply_parallel(x, w, workers=wk).y for wk in (1, 2, 8)]
            assert np.array_equal(outs[0], outs[1])
            assert np.array_equal(outs[0], outs[2])

    def test_matches_strict_tightly(self):
        rng = np.random.default_rng(21)
        for trial in range(100):
            cfg = sample_config(rng, d_choices=(2, 4), max_mode=4, naive_budget=None)
            w = random_init(cfg, seed=trial)
            x = rng.standard_normal(cfg.m)
            assert rel_err(multiply_parallel(x, w, 3).y, multiply_strict(x, w).y) <= 1e-12


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        cfg = KCPConfig.uniform((2, 3), (3, 2), 2, 2, 1)
        w = random_init(cfg, seed=22)
        x = np.random.default_rng(23).standard_normal(cfg.m)
        dX, dA, dB = multiply_backward(x, w, np.zeros(cfg.n))
        assert np.array_equal(dX, np.zeros(cfg.m))
        for k in range(cfg.K):
            for i in range(cfg.d):
                assert np.array_equal(dA[k][i], np.zeros_like(w.A[k][i]))
                assert np.array_equal(dB[k][i], np.zeros_like(w.B[k][i]))

    @pytest.mark.parametrize("d", [2, 4])
    def test_full_finite_difference_sweep(self, d):
        h = 1e-5
        cfg = KCPConfig.uniform((2,) * d, (2,) * d, 2, 2, 1)
        w = random_init(cfg, seed=24 + d)
        rng = np.random.default_rng(25 + d)
        x = rng.standard_normal(cfg.m)
        dY = rng.standard_normal(cfg.n)
        dX, dA, dB = multiply_backward(x, w, dY)

        def loss(weight, inp):
            return float(np.sum(multiply_strict(inp, weight).y * dY))

        for idx in np.ndindex(*cfg.m):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            num = (loss(w, xp) - loss(w, xm)) / (2 * h)
            assert abs(num - dX[idx]) / (1.0 + abs(num)) < 1e-5

        for side, grads in (("A", dA), ("B", dB)):
            for k in range(cfg.K):
                for i in range(cfg.d):
                    mat = getattr(w, side)[k][i]
                    for r, c in np.ndindex(*mat.shape):
                        def perturbed(delta):
                            A = [[a.copy() for a in br] for br in w.A]
                            B = [[b.copy() for b in br] for br in w.B]
                            (A if side == "A" else B)[k][i][r, c] += delta
                            return KCPWeight(
                                cfg,
                                tuple(tuple(br) for br in A),
                                tuple(tuple(br) for br in B),
                            )

                        num = (loss(perturbed(h), x) - loss(perturbed(-h), x)) / (2 * h)
                        assert abs(num - grads[k][i][r, c]) / (1.0 + abs(num)) < 1e-5

    def test_single_entry_matches_oracle_perturbation(self):
        cfg = KCPConfig.uniform((3, 2), (2, 2), 1, 2, 2)
        w = random_init(cfg, seed=30)
        rng = np.random.default_rng(31)
        x = rng.standard_normal(cfg.m)
        dY = rng.standard_normal(cfg.n)
        _, dA, _ = multiply_backward(x, w, dY)
        h = 1e-6
        vals = []
        for delta in (h, -h):
            A = [[a.copy() for a in br] for br in w.A]
            A[0][1][1, 0] += delta
            wp = KCPWeight(cfg, tuple(tuple(br) for br in A), w.B)
            vals.append(float(np.sum(multiply_dense_oracle(x, wp) * dY)))
        num = (vals[0] - vals[1]) / (2 * h)
        assert abs(num - dA[0][1][1, 0]) < 1e-5 * (1 + abs(num))

    def test_dy_shape_checked(self):
        w = ones_weight((2, 2), (2, 2))
        with pytest.raises(ValueError, match="dY"):
            multiply_backward(np.zeros((2, 2)), w, np.zeros((2, 3)))


class TestBatchedChain:
    def test_vjp_batch_equals_per_sample(self):
        from kcp.multiply import strict_vjp

        cfg = KCPConfig.uniform((3, 2), (2, 2), 2, 2, 1)
        w = random_init(cfg, seed=40)
        rng = np.random.default_rng(41)
        B = 5
        xb = rng.standard_normal((B,) + cfg.m)
        dyb = rng.standard_normal((B,) + cfg.n)
        dX, dA, dB_ = strict_vjp(xb, w, dyb, nb=1)
        assert dX.shape == xb.shape

        acc_A = [[np.zeros_like(a) for a in br] for br in w.A]
        acc_B = [[np.zeros_like(b) for b in br] for br in w.B]
        for s in range(B):
            dx_s, da_s, db_s = multiply_backward(xb[s], w, dyb[s])
            assert np.allclose(dX[s], dx_s, atol=1e-12)
            for k in range(cfg.K):
                for i in range(cfg.d):
                    acc_A[k][i] += da_s[k][i]
                    acc_B[k][i] += db_s[k][i]
        for k in range(cfg.K):
            for i in range(cfg.d):
                assert np.allclose(dA[k][i], acc_A[k][i], atol=1e-10)
                assert np.allclose(dB_[k][i], acc_B[k][i], atol=1e-10)

    def test_parallel_handles_odd_order(self):
        cfg = KCPConfig.uniform((2, 3, 2), (3, 2, 2), 3, 2, 1)
        w = random_init(cfg, seed=42)
        x = np.random.default_rng(43).standard_normal(cfg.m)
        assert rel_err(multiply_parallel(x, w, 2).y, multiply_strict(x, w).y) <= 1e-12
