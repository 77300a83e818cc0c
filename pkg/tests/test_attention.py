import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (dense_attention_reference, naive_band_global_grid,
                     numeric_gradient)
from slat.attention import (LowRankProjection, attention_flops, build_mask,
                            dense_attention_flops, lowrank_project,
                            masked_attention, masked_softmax, mha_backward,
                            mha_forward, multi_head_attention)


class TestMask:
    def test_worked_example_grid(self):
        # L=5, band 1, global {0}
        mask = build_mask(5, 1, [0])
        expected = ("11111\n"
                    "11100\n"
                    "01110\n"
                    "00111\n"
                    "00011")
        expected = np.array([[c == "1" for c in row]
                             for row in expected.split("\n")])
        expected[0, :] = True
        expected[:, 0] = True
        np.testing.assert_array_equal(mask.dense, expected)
        assert mask.nnz == 19

    def test_grid_rendering(self):
        mask = build_mask(3, 0, [])
        assert mask.to_grid() == "100\n010\n001"

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_mask(0, 1)
        with pytest.raises(ValueError):
            build_mask(4, -1)
        with pytest.raises(ValueError):
            build_mask(4, 1, [4])

    def test_dense_array_is_read_only(self):
        mask = build_mask(4, 1)
        with pytest.raises(ValueError):
            mask.dense[0, 0] = False

    @given(length=st.integers(1, 40), band=st.integers(0, 12), data=st.data())
    @settings(max_examples=60)
    def test_matches_naive_grid(self, length, band, data):
        globals_ = data.draw(st.sets(st.integers(0, length - 1), max_size=4))
        mask = build_mask(length, band, globals_)
        np.testing.assert_array_equal(
            mask.dense, naive_band_global_grid(length, band, globals_))

    @given(length=st.integers(1, 30), band=st.integers(0, 8), data=st.data())
    @settings(max_examples=40)
    def test_symmetric_with_full_diagonal(self, length, band, data):
        globals_ = data.draw(st.sets(st.integers(0, length - 1), max_size=3))
        mask = build_mask(length, band, globals_)
        np.testing.assert_array_equal(mask.dense, mask.dense.T)
        assert np.all(np.diag(mask.dense))

    def test_wide_band_is_fully_dense(self):
        mask = build_mask(6, 5)
        assert mask.nnz == 36


class TestMaskedSoftmax:
    def test_exact_zeros_and_row_sums(self):
        rng = np.random.default_rng(0)
        mask = build_mask(7, 1, [2])
        logits = rng.normal(0, 3, size=(4, 7, 7))
        w = masked_softmax(logits, mask.dense)
        assert np.all(w[:, ~mask.dense] == 0.0)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(w >= 0)

    def test_hadamard_mode_keeps_masked_entries(self):
        # masked logits become 0 and still get weight exp(0)/Z
        logits = np.array([[1.0, 2.0, 3.0]])
        allowed = np.array([[True, False, True]])
        w_inf = masked_softmax(logits, allowed, mode="neg_inf")
        w_had = masked_softmax(logits, allowed, mode="hadamard")
        assert w_inf[0, 1] == 0.0
        assert w_had[0, 1] > 0.0
        expected = np.exp([1.0, 0.0, 3.0])
        np.testing.assert_allclose(w_had[0], expected / expected.sum(), atol=1e-12)

    def test_large_logits_stay_finite(self):
        logits = np.array([[1000.0, -1000.0, 999.0]])
        w = masked_softmax(logits, None)
        assert np.all(np.isfinite(w))
        np.testing.assert_allclose(w.sum(), 1.0, atol=1e-12)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            masked_softmax(np.zeros((2, 2)), None, mode="zero_fill")


class TestMaskedAttention:
    def test_recovers_dense_attention(self):
        # band covering everything and no globals must match the unmasked oracle
        rng = np.random.default_rng(7)
        L, d = 6, 4
        q, k, v = (rng.normal(size=(L, d)) for _ in range(3))
        mask = build_mask(L, L - 1)
        got = masked_attention(q, k, v, mask)
        want_out, want_w = dense_attention_reference(q, k, v)
        np.testing.assert_allclose(got.values, want_out, atol=1e-9)
        np.testing.assert_allclose(got.weights, want_w, atol=1e-9)

    def test_batched_leading_axes(self):
        rng = np.random.default_rng(8)
        q, k, v = (rng.normal(size=(2, 3, 5, 4)) for _ in range(3))
        mask = build_mask(5, 1)
        got = masked_attention(q, k, v, mask)
        single = masked_attention(q[1, 2], k[1, 2], v[1, 2], mask)
        np.testing.assert_allclose(got.values[1, 2], single.values, atol=1e-12)

    def test_fully_masked_inputs_rejected(self):
        q = np.full((3, 2), np.nan)
        with pytest.raises(ValueError):
            masked_attention(q, q, q, None)
        rng = np.random.default_rng(9)
        a = rng.normal(size=(4, 2))
        with pytest.raises(ValueError):
            masked_attention(a, a[:3], a, None)
        with pytest.raises(ValueError):
            masked_attention(a, a, a, build_mask(5, 1))

    @given(seed=st.integers(0, 10**6), band=st.integers(0, 4))
    @settings(max_examples=25)
    def test_rows_stochastic_under_any_mask(self, seed, band):
        rng = np.random.default_rng(seed)
        q, k, v = (rng.normal(size=(6, 3)) for _ in range(3))
        out = masked_attention(q, k, v, build_mask(6, band, [1]))
        np.testing.assert_allclose(out.weights.sum(axis=-1), 1.0, atol=1e-12)


class TestLowRank:
    def test_parameter_economy_at_reference_dims(self):
        # d_model 64, head dim 8: rank-4 factors store 288 vs 512 dense
        rng = np.random.default_rng(0)
        proj = LowRankProjection(u=rng.normal(size=(64, 4)),
                                 v=rng.normal(size=(4, 8)))
        assert proj.n_params == 288
        assert 64 * 8 == 512
        assert proj.n_params < 512

    def test_projection_equals_composed_matrix(self):
        rng = np.random.default_rng(1)
        proj = LowRankProjection(u=rng.normal(size=(10, 3)),
                                 v=rng.normal(size=(3, 5)))
        x = rng.normal(size=(7, 10))
        np.testing.assert_allclose(lowrank_project(x, proj), x @ (proj.u @ proj.v),
                                   atol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            LowRankProjection(u=np.zeros((4, 2)), v=np.zeros((3, 5)))
        proj = LowRankProjection(u=np.zeros((4, 2)), v=np.zeros((2, 5)))
        with pytest.raises(ValueError):
            lowrank_project(np.zeros((3, 6)), proj)

    def test_rank_bounds_output_rank(self):
        rng = np.random.default_rng(2)
        proj = LowRankProjection(u=rng.normal(size=(12, 2)),
                                 v=rng.normal(size=(2, 8)))
        x = rng.normal(size=(20, 12))
        y = lowrank_project(x, proj)
        assert np.linalg.matrix_rank(y) <= 2


def _random_mha_weights(rng, d, h, e, r=None):
    if r is None:
        return {
            "q_u": rng.normal(size=(h, d, e)), "k_u": rng.normal(size=(h, d, e)),
            "v_u": rng.normal(size=(h, d, e)),
            "out_w": rng.normal(size=(h * e, d)), "out_b": rng.normal(size=d),
        }
    w = {}
    for name in ("q", "k", "v"):
        w[f"{name}_u"] = rng.normal(size=(h, d, r))
        w[f"{name}_v"] = rng.normal(size=(h, r, e))
    w["out_w"] = rng.normal(size=(h * e, d))
    w["out_b"] = rng.normal(size=d)
    return w


class TestMultiHead:
    def test_wrapper_matches_batched_form(self):
        rng = np.random.default_rng(3)
        d, h, e, r, L = 8, 2, 4, 3, 5
        heads = []
        for _ in range(h):
            heads.append(tuple(
                LowRankProjection(u=rng.normal(size=(d, r)),
                                  v=rng.normal(size=(r, e)))
                for _ in range(3)))
        w_o = rng.normal(size=(d, d))
        mask = build_mask(L, 1, [0])
        x = rng.normal(size=(L, d))
        out = multi_head_attention(x, heads, w_o, mask)
        weights = {
            "q_u": np.stack([t[0].u for t in heads]),
            "q_v": np.stack([t[0].v for t in heads]),
            "k_u": np.stack([t[1].u for t in heads]),
            "k_v": np.stack([t[1].v for t in heads]),
            "v_u": np.stack([t[2].u for t in heads]),
            "v_v": np.stack([t[2].v for t in heads]),
            "out_w": w_o, "out_b": np.zeros(d),
        }
        want, _ = mha_forward(x[None], x[None], weights, mask)
        np.testing.assert_allclose(out, want[0], atol=1e-12)

    def test_head_count_must_divide_d_model(self):
        rng = np.random.default_rng(4)
        heads = [tuple(LowRankProjection(u=rng.normal(size=(6, 2)),
                                         v=rng.normal(size=(2, 2)))
                       for _ in range(3))] * 4
        with pytest.raises(ValueError):
            multi_head_attention(rng.normal(size=(3, 6)), heads,
                                 rng.normal(size=(6, 6)), None)

    @pytest.mark.parametrize("rank", [None, 2])
    @pytest.mark.parametrize("mode", ["neg_inf", "hadamard"])
    def test_gradients_match_numeric(self, rank, mode):
        rng = np.random.default_rng(5)
        b, L, d, h, e = 2, 5, 6, 2, 3
        weights = _random_mha_weights(rng, d, h, e, rank)
        x_q = rng.normal(size=(b, L, d))
        x_kv = rng.normal(size=(b, L, d))
        mask = build_mask(L, 1, [0])
        direction = rng.normal(size=(b, L, d))

        out, cache = mha_forward(x_q, x_kv, weights, mask, mode)
        gx_q, gx_kv, grads = mha_backward(direction, cache)

        def loss_for(name):
            def f(w):
                trial = dict(weights)
                trial[name] = w
                y, _ = mha_forward(x_q, x_kv, trial, mask, mode)
                return float(np.sum(y * direction))
            return f

        for name in grads:
            num = numeric_gradient(loss_for(name), weights[name].copy())
            np.testing.assert_allclose(grads[name], num, atol=1e-6,
                                       err_msg=name)

        num_xq = numeric_gradient(
            lambda xx: float(np.sum(mha_forward(xx, x_kv, weights, mask, mode)[0]
                                    * direction)), x_q.copy())
        np.testing.assert_allclose(gx_q, num_xq, atol=1e-6)
        num_xkv = numeric_gradient(
            lambda xx: float(np.sum(mha_forward(x_q, xx, weights, mask, mode)[0]
                                    * direction)), x_kv.copy())
        np.testing.assert_allclose(gx_kv, num_xkv, atol=1e-6)

    def test_cross_attention_lengths_differ(self):
        rng = np.random.default_rng(6)
        weights = _random_mha_weights(rng, 6, 2, 3, r=2)
        x_q = rng.normal(size=(1, 1, 6))
        x_kv = rng.normal(size=(1, 9, 6))
        out, _ = mha_forward(x_q, x_kv, weights, None)
        assert out.shape == (1, 1, 6)


class TestFlops:
    def test_sparse_below_dense_at_reference_shape(self):
        # 30 tokens, band 2, two globals, head dim 8
        sparse = attention_flops(30, 2, 2, 8)
        dense = dense_attention_flops(30, 8)
        assert sparse < dense
        assert sparse == build_mask(30, 2, [0, 1]).nnz * 8

    def test_monotone_in_band_width(self):
        vals = [attention_flops(20, w, 1, 4) for w in range(6)]
        assert vals == sorted(vals)

    def test_full_band_matches_dense(self):
        assert attention_flops(12, 11, 0, 4) == dense_attention_flops(12, 4)
