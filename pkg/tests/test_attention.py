"""Scoring variants, softmax weighting, weighted sums and intra contexts."""

import math

import numpy as np
import pytest

from riskset.attention import (
    IntraScorer,
    attend,
    context_vector,
    make_scorer,
    score,
    weighted_sum,
)
from riskset.gradcheck import compare_gradients, finite_difference_gradient
from riskset.tensor import ParamStore, Tensor, backward_pass, tensor_sum


class TestScoreVariants:
    def test_general_zero_query_is_zero(self, rng):
        scorer = make_scorer("general", 4, 3, rng)
        assert score(scorer, np.zeros(4), rng.normal(size=3)) == 0.0

    def test_general_matches_bilinear_form(self, rng):
        scorer = make_scorer("general", 4, 3, rng)
        q, k = rng.normal(size=4), rng.normal(size=3)
        expected = float(q @ scorer.weight.data @ k)
        assert score(scorer, q, k) == pytest.approx(expected, rel=1e-12)

    def test_general_linear_in_key(self, rng):
        scorer = make_scorer("general", 4, 3, rng)
        q = rng.normal(size=4)
        for _ in range(10):
            k1, k2 = rng.normal(size=3), rng.normal(size=3)
            a, b = rng.normal(), rng.normal()
            combined = score(scorer, q, a * k1 + b * k2)
            assert combined == pytest.approx(a * score(scorer, q, k1) + b * score(scorer, q, k2), rel=1e-9, abs=1e-12)

    def test_dot_unit_basis(self):
        scorer = make_scorer("dot", 3, 3)
        e = np.zeros(3)
        e[1] = 1.0
        assert score(scorer, e, e) == 1.0

    def test_dot_requires_equal_widths(self):
        with pytest.raises(ValueError):
            make_scorer("dot", 3, 4)

    def test_location_ignores_key(self, rng):
        scorer = make_scorer("location", 4, 3, rng)
        q = rng.normal(size=4)
        e1 = score(scorer, q, rng.normal(size=3))
        e2 = score(scorer, q, rng.normal(size=3))
        assert e1 == e2 == pytest.approx(float(scorer.weight.data @ q), rel=1e-12)

    def test_additive_shapes_and_value(self, rng):
        scorer = make_scorer("additive", 4, 3, rng, attn_dim=5)
        q, k = rng.normal(size=4), rng.normal(size=3)
        expected = float(
            scorer.v.data @ np.tanh(q @ scorer.w_query.data + k @ scorer.w_key.data)
        )
        assert score(scorer, q, k) == pytest.approx(expected, rel=1e-12)
        assert scorer.parameter_count() == 5 * (4 + 3 + 1)

    def test_cosine_scale_invariance(self, rng):
        scorer = make_scorer("cosine", 3, 3)
        q = rng.normal(size=3)
        assert score(scorer, q, 2.0 * q) == pytest.approx(1.0, abs=1e-12)
        assert score(scorer, q, 0.37 * q) == pytest.approx(1.0, abs=1e-12)

    def test_cosine_zero_vector_convention(self, rng):
        scorer = make_scorer("cosine", 3, 3)
        assert score(scorer, np.zeros(3), rng.normal(size=3)) == 0.0
        assert score(scorer, rng.normal(size=3), np.zeros(3)) == 0.0

    def test_cosine_range(self, rng):
        scorer = make_scorer("cosine", 3, 3)
        for _ in range(20):
            e = score(scorer, rng.normal(size=3), rng.normal(size=3))
            assert -1.0 - 1e-12 <= e <= 1.0 + 1e-12

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            make_scorer("bilinear", 3, 3)

    def test_width_validation(self, rng):
        scorer = make_scorer("general", 4, 3, rng)
        with pytest.raises(ValueError):
            scorer.energies(Tensor(np.zeros(5)), Tensor(np.zeros((2, 3))))


class TestAttend:
    def test_uniform_for_equal_energies(self):
        for m in (2, 5, 9):
            np.testing.assert_allclose(attend(np.full(m, 1.7)), np.full(m, 1.0 / m), atol=1e-15)

    def test_single_writing_weight_exactly_one(self):
        assert attend(np.array([3.3]))[0] == 1.0
        assert attend(Tensor(np.array([3.3]))).data[0] == 1.0

    def test_direct_exponentiation(self):
        e = np.array([1.0, 2.0, 3.0])
        exps = np.exp(e - 3.0)
        np.testing.assert_allclose(attend(e), exps / exps.sum(), atol=1e-14)

    def test_tensor_and_array_agree(self, rng):
        e = rng.normal(size=6)
        np.testing.assert_allclose(attend(e), attend(Tensor(e)).data, atol=1e-14)

    def test_permutation_equivariance(self, rng):
        for _ in range(20):
            e = rng.normal(size=int(rng.integers(2, 12)))
            perm = rng.permutation(e.size)
            assert np.array_equal(attend(e)[perm], attend(e[perm]))
            assert abs(attend(e).sum() - 1.0) < 1e-12


class TestWeightedSum:
    def test_uniform_weights_give_mean(self, rng):
        vs = rng.normal(size=(4, 3))
        np.testing.assert_allclose(weighted_sum(np.full(4, 0.25), vs), vs.mean(axis=0), atol=1e-14)

    def test_one_hot_selects_vector(self, rng):
        vs = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(weighted_sum(np.array([0.0, 1.0, 0.0]), vs), vs[1])

    def test_hand_combination(self):
        vs = np.array([[1.0, 2.0], [5.0, -2.0]])
        np.testing.assert_allclose(weighted_sum(np.array([0.25, 0.75]), vs), [4.0, -1.0], atol=1e-15)

    def test_identical_vectors_fixed_point(self, rng):
        v = rng.normal(size=4)
        vs = np.tile(v, (6, 1))
        w = attend(rng.normal(size=6))
        np.testing.assert_allclose(weighted_sum(w, vs), v, atol=1e-12)

    def test_count_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            weighted_sum(np.array([0.5, 0.5]), rng.normal(size=(3, 2)))

    def test_non_probability_weights_rejected(self, rng):
        with pytest.raises(ValueError):
            weighted_sum(np.array([0.5, 0.2]), rng.normal(size=(2, 2)))


class TestContextVector:
    def test_empty_past_gives_zero(self, rng):
        scorer = IntraScorer(4, 3, rng)
        out = context_vector(scorer, rng.normal(size=4), [])
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_zero_weight_matrix_gives_mean(self, rng):
        scorer = IntraScorer(4, 3, rng)
        scorer.weight.data[...] = 0.0
        past = [rng.normal(size=3) for _ in range(5)]
        out = context_vector(scorer, rng.normal(size=4), past)
        np.testing.assert_allclose(out.data, np.mean(past, axis=0), atol=1e-14)

    def test_two_past_inputs_hand_computed(self, rng):
        scorer = IntraScorer(2, 2, rng)
        scorer.weight.data[...] = [[1.0, 0.0], [0.0, 2.0]]
        h = np.array([1.0, -1.0])
        x1, x2 = np.array([0.5, 0.0]), np.array([0.0, 0.25])
        e1 = float(h @ scorer.weight.data @ x1)   # 0.5
        e2 = float(h @ scorer.weight.data @ x2)   # -0.5
        z = math.exp(e1) + math.exp(e2)
        expected = (math.exp(e1) * x1 + math.exp(e2) * x2) / z
        out = context_vector(scorer, h, [x1, x2])
        np.testing.assert_allclose(out.data, expected, atol=1e-14)

    def test_width_mismatch_rejected(self, rng):
        scorer = IntraScorer(4, 3, rng)
        with pytest.raises(ValueError):
            context_vector(scorer, rng.normal(size=5), [])
        with pytest.raises(ValueError):
            context_vector(scorer, rng.normal(size=4), [rng.normal(size=2)])


class TestScorerGradients:
    @pytest.mark.parametrize("variant", ["general", "dot", "location", "additive", "cosine"])
    def test_energies_gradient_matches_fd(self, variant, rng):
        scorer = make_scorer(variant, 4, 4, rng, attn_dim=3)
        store = ParamStore()
        scorer.register(store, "s")
        q = store.add("query", rng.normal(size=4) + 0.5)  # keep away from the cosine origin
        keys = rng.normal(size=(3, 4))
        coeff = rng.normal(size=3)

        def loss_tensor():
            return tensor_sum(scorer.energies(q, Tensor(keys)) * Tensor(coeff))

        loss = loss_tensor()
        store.accumulate(backward_pass(loss, store.tensors()))
        analytic = {n: t.grad.copy() for n, t in store.items()}
        store.zero_grads()
        numeric = finite_difference_gradient(lambda p: loss_tensor().item(), store, eps=1e-5)
        report = compare_gradients(analytic, numeric, tolerance=1e-4, eps=1e-5)
        assert report.passed, (variant, report.block_errors)

    def test_intra_context_gradient_matches_fd(self, rng):
        scorer = IntraScorer(4, 3, rng)
        store = ParamStore()
        scorer.register(store, "intra")
        h = store.add("hidden", rng.normal(size=4))
        past = [rng.normal(size=3) for _ in range(4)]
        coeff = rng.normal(size=3)

        def loss_tensor():
            return tensor_sum(context_vector(scorer, h, past) * Tensor(coeff))

        loss = loss_tensor()
        store.accumulate(backward_pass(loss, store.tensors()))
        analytic = {n: t.grad.copy() for n, t in store.items()}
        store.zero_grads()
        numeric = finite_difference_gradient(lambda p: loss_tensor().item(), store, eps=1e-5)
        report = compare_gradients(analytic, numeric, tolerance=1e-4, eps=1e-5)
        assert report.passed, report.block_errors
