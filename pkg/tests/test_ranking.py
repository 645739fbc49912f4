import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reccbm.gradcheck import central_difference, max_rel_err
from reccbm.ranking import build_pairs, ranking_loss


class TestBuildPairs:
    def test_single_strict_pair(self):
        ps = build_pairs(np.array([[2], [0]]))
        assert ps.pairs[0] == ((0, 1),)

    def test_all_equal_gives_empty(self):
        ps = build_pairs(np.array([[1], [1], [1]]))
        assert ps.pairs[0] == ()
        assert ps.active_concepts == 0

    def test_three_way_ordering(self):
        # labels (0,1,2): of the 6 ordered pairs exactly (1,0),(2,0),(2,1) are strict.
        ps = build_pairs(np.array([[0], [1], [2]]))
        assert set(ps.pairs[0]) == {(1, 0), (2, 0), (2, 1)}
        assert len(ps.pairs[0]) == 3

    def test_deterministic_order(self):
        ps = build_pairs(np.array([[3], [0], [2]]))
        assert ps.pairs[0] == ((0, 1), (0, 2), (2, 1))  # i ascending, then j

    def test_per_concept_independence(self):
        labels = np.array([[2, 1], [0, 1]])
        ps = build_pairs(labels)
        assert ps.pairs[0] == ((0, 1),)
        assert ps.pairs[1] == ()


class TestRankingLoss:
    def test_equal_scores_log2(self):
        scores = np.array([[1.0], [1.0]])
        pairs = build_pairs(np.array([[1], [0]]))
        loss, _ = ranking_loss(scores, pairs)
        assert abs(loss - np.log(2)) < 1e-12

    def test_margin_three_closed_form(self):
        scores = np.array([[3.5], [0.5]])
        pairs = build_pairs(np.array([[2], [0]]))
        loss, _ = ranking_loss(scores, pairs)
        assert abs(loss - np.log1p(np.exp(-3.0))) < 1e-12

    def test_empty_pairs_zero_loss_zero_grad(self):
        scores = np.random.default_rng(0).uniform(0, 3, size=(4, 3))
        pairs = build_pairs(np.ones((4, 3), dtype=int))
        loss, grad = ranking_loss(scores, pairs)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(scores))

    def test_single_pair_gradient_antisymmetry(self):
        scores = np.array([[2.0], [0.7]])
        pairs = build_pairs(np.array([[3], [1]]))
        _, grad = ranking_loss(scores, pairs)
        assert grad[0, 0] == pytest.approx(-grad[1, 0], abs=1e-15)

    def test_shift_invariance_per_concept(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 4, size=(6, 3))
        scores = rng.uniform(0, 3, size=(6, 3))
        pairs = build_pairs(labels)
        base, _ = ranking_loss(scores, pairs)
        shifted = scores.copy()
        shifted[:, 1] += 17.3
        loss, _ = ranking_loss(shifted, pairs)
        assert loss == pytest.approx(base, abs=1e-9)

    def test_loss_decreases_with_correct_margin(self):
        pairs = build_pairs(np.array([[2], [0]]))
        losses = [ranking_loss(np.array([[m], [0.0]]), pairs)[0] for m in (0.0, 0.5, 1.5, 4.0)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        labels = rng.integers(0, 4, size=(5, 4))
        scores = rng.uniform(0, 3, size=(5, 4))
        pairs = build_pairs(labels)
        _, grad = ranking_loss(scores, pairs)
        numeric = central_difference(lambda: ranking_loss(scores, pairs)[0], scores)
        assert max_rel_err(grad, numeric) < 1e-4

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_loss_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        B, K = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        labels = rng.integers(0, 3, size=(B, K))
        scores = rng.normal(size=(B, K))
        loss, _ = ranking_loss(scores, build_pairs(labels))
        assert loss >= 0.0
