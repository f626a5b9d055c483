import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, gated_fusion_reference, max_rel_error
from triview.fusion import (
    GateParams,
    ensemble_scores,
    fuse_add,
    fuse_concat,
    gated_fusion_backward,
    gated_fusion_forward,
)


def random_instance(rng, views=3, n=8, channels=4, weight_scale=0.5):
    xs = [rng.uniform(-1.0, 1.0, (n, channels)) for _ in range(views)]
    params = GateParams(
        tuple(rng.normal(0.0, weight_scale, (views, channels)) for _ in range(views))
    )
    return xs, params


class TestForward:
    def test_zero_gates_two_views(self, rng):
        xs = [rng.uniform(-1, 1, (6, 3)) for _ in range(2)]
        fused, cache = gated_fusion_forward(xs, GateParams.zeros(2, 3))
        assert (np.concatenate(cache.gates) == 0.5).all()
        np.testing.assert_array_equal(cache.softmax, np.full((6, 2), 0.5))
        np.testing.assert_array_equal(fused, (xs[0] + xs[1]) / 2.0)

    def test_equal_gates_with_zero_views(self, rng):
        x1 = rng.uniform(-1, 1, (5, 2))
        zeros = np.zeros((5, 2))
        fused, _ = gated_fusion_forward([x1, zeros, zeros], GateParams.zeros(3, 2))
        np.testing.assert_array_equal(fused, x1 / 3.0)

    def test_matches_straight_line_reference(self, rng):
        xs, params = random_instance(rng)
        fused, _ = gated_fusion_forward(xs, params)
        expected = gated_fusion_reference(xs, [np.asarray(w) for w in params.weights])
        assert np.abs(fused - expected).max() < 1e-6

    def test_rejects_single_view(self, rng):
        with pytest.raises(ValueError, match="two views"):
            gated_fusion_forward([rng.uniform(-1, 1, (4, 2))], GateParams.zeros(1, 2))

    def test_rejects_shape_mismatch(self, rng):
        xs = [rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 3))]
        with pytest.raises(ValueError):
            gated_fusion_forward(xs, GateParams.zeros(2, 2))

    def test_rejects_param_mismatch(self, rng):
        xs = [rng.uniform(-1, 1, (4, 2)) for _ in range(2)]
        with pytest.raises(ValueError):
            gated_fusion_forward(xs, GateParams.zeros(3, 2))


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self, rng):
        xs, params = random_instance(rng)
        _, cache = gated_fusion_forward(xs, params)
        dxs, dws = gated_fusion_backward(np.zeros_like(xs[0]), cache, params)
        for g in dxs + dws:
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_zero_gate_direct_path(self, rng):
        xs = [rng.uniform(-1, 1, (7, 3)) for _ in range(2)]
        params = GateParams.zeros(2, 3)
        _, cache = gated_fusion_forward(xs, params)
        upstream = rng.uniform(-1, 1, (7, 3))
        dxs, _ = gated_fusion_backward(upstream, cache, params)
        for g in dxs:
            np.testing.assert_array_equal(g, 0.5 * upstream)

    @pytest.mark.parametrize("views", [2, 3])
    def test_matches_finite_differences(self, rng, views):
        xs, params = random_instance(rng, views=views, n=5, channels=3)
        upstream = rng.uniform(-1, 1, xs[0].shape)
        _, cache = gated_fusion_forward(xs, params)
        dxs, dws = gated_fusion_backward(upstream, cache, params)
        for i in range(views):
            def loss_of_view(x, i=i):
                patched = list(xs)
                patched[i] = x
                return float((gated_fusion_forward(patched, params)[0] * upstream).sum())

            assert max_rel_error(dxs[i], central_difference(loss_of_view, xs[i])) < 1e-6

            def loss_of_weights(w, i=i):
                mats = list(params.weights)
                mats[i] = w
                return float(
                    (gated_fusion_forward(xs, GateParams(tuple(mats)))[0] * upstream).sum()
                )

            numeric = central_difference(loss_of_weights, np.asarray(params.weights[i]))
            assert max_rel_error(dws[i], numeric) < 1e-6


class TestBaselines:
    def test_add_cancels_opposites(self, rng):
        x = rng.uniform(-1, 1, (5, 3))
        np.testing.assert_array_equal(fuse_add([x, -x]), np.zeros((5, 3)))

    def test_add_matches_loop(self, rng):
        xs = [rng.uniform(-1, 1, (6, 2)) for _ in range(3)]
        expected = np.zeros((6, 2))
        for x in xs:
            for p in range(6):
                for c in range(2):
                    expected[p, c] += x[p, c]
        np.testing.assert_allclose(fuse_add(xs), expected, atol=1e-12)

    def test_concat_keeps_view_order(self, rng):
        a = rng.uniform(-1, 1, (4, 2))
        b = rng.uniform(-1, 1, (4, 3))
        out = fuse_concat([a, b])
        assert out.shape == (4, 5)
        np.testing.assert_array_equal(out[:, :2], a)
        np.testing.assert_array_equal(out[:, 2:], b)

    def test_add_rejects_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            fuse_add([np.zeros((2, 2)), np.zeros((3, 2))])


class TestEnsemble:
    def test_identical_sets_keep_argmax(self, rng):
        raw = rng.uniform(0.1, 1.0, (10, 4))
        probs = raw / raw.sum(axis=1, keepdims=True)
        summed = ensemble_scores([probs, probs])
        np.testing.assert_array_equal(summed.argmax(axis=1), probs.argmax(axis=1))

    def test_majority_wins_for_one_hot(self):
        a = np.array([[1.0, 0.0]])
        b = np.array([[1.0, 0.0]])
        c = np.array([[0.0, 1.0]])
        assert ensemble_scores([a, b, c]).argmax(axis=1)[0] == 0

    def test_matches_naive_accumulation(self, rng):
        raw = [rng.uniform(0.1, 1.0, (8, 3)) for _ in range(3)]
        probs = [r / r.sum(axis=1, keepdims=True) for r in raw]
        expected = probs[0] + probs[1] + probs[2]
        np.testing.assert_allclose(ensemble_scores(probs), expected, atol=1e-12)

    def test_rejects_non_probability_rows(self, rng):
        bad = rng.uniform(0.5, 1.0, (4, 3))  # rows sum well above 1
        with pytest.raises(ValueError, match="probability"):
            ensemble_scores([bad, bad])


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 1 << 32), st.integers(2, 3), st.integers(1, 10), st.integers(1, 4))
    def test_softmax_rows_sum_to_one(self, seed, views, n, channels):
        rng = np.random.default_rng(seed)
        xs, params = random_instance(rng, views=views, n=n, channels=channels, weight_scale=2.0)
        _, cache = gated_fusion_forward(xs, params)
        assert np.abs(cache.softmax.sum(axis=1) - 1.0).max() <= 1e-6
        assert cache.softmax.min() >= 0.0

    def test_scalar_output_stays_in_view_hull(self, rng):
        xs, params = random_instance(rng, views=3, n=50, channels=1, weight_scale=3.0)
        fused, _ = gated_fusion_forward(xs, params)
        stacked = np.stack(xs)
        assert (fused >= stacked.min(axis=0) - 1e-12).all()
        assert (fused <= stacked.max(axis=0) + 1e-12).all()

    def test_permutation_symmetry(self, rng):
        xs, params = random_instance(rng, views=3)
        upstream = rng.uniform(-1, 1, xs[0].shape)
        fused, cache = gated_fusion_forward(xs, params)
        dxs, dws = gated_fusion_backward(upstream, cache, params)

        perm = [2, 0, 1]
        # permute views and, inside each gate matrix, the vote rows
        permuted_ws = tuple(np.asarray(params.weights[i])[perm, :] for i in perm)
        fused_p, cache_p = gated_fusion_forward([xs[i] for i in perm], GateParams(permuted_ws))
        np.testing.assert_allclose(fused_p, fused, atol=1e-12)
        dxs_p, dws_p = gated_fusion_backward(upstream, cache_p, GateParams(permuted_ws))
        for k, i in enumerate(perm):
            np.testing.assert_allclose(dxs_p[k], dxs[i], atol=1e-12)
            np.testing.assert_allclose(dws_p[k], np.asarray(dws[i])[perm, :], atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1 << 32), st.integers(2, 4))
    def test_zero_gates_reduce_to_scaled_add(self, seed, views):
        rng = np.random.default_rng(seed)
        xs = [rng.uniform(-10, 10, (6, 3)) for _ in range(views)]
        fused, _ = gated_fusion_forward(xs, GateParams.zeros(views, 3))
        np.testing.assert_array_equal(fused, fuse_add(xs) / views)
