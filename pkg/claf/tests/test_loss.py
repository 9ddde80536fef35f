import math

import numpy as np
import pytest

from claf import tensor as T
from claf.errors import ConfigError, EmptyPositiveSet, LabelError, ShapeError
from claf.loss import (cross_entropy, per_sample_cross_entropy, positive_mask,
                       scl_loss, scl_loss_reference)


def _unit_rows(rng, n, p):
    z = rng.normal(size=(n, p))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class TestSclLoss(object):

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(1, 5))
            views = 3 if trial % 2 else 2
            labels = np.tile(rng.integers(0, 3, size=n), views)
            z = _unit_rows(rng, len(labels), int(rng.integers(2, 9)))
            tau = (0.07, 0.1, 0.5)[trial % 3]
            assert abs(scl_loss(z, labels, tau).item() -
                       scl_loss_reference(z, labels, tau)) < 1e-10

    def test_two_views_by_hand(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0]])
        # each anchor has one other view, which is also its positive
        assert scl_loss(z, [0, 0], 0.5).item() == pytest.approx(0.0)

    def test_closed_form(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        # every anchor: one positive at cosine 1, two negatives at cosine 0
        anchor = -math.log(math.exp(2.0) / (math.exp(2.0) + 2.0))
        assert scl_loss(z, [0, 1, 0, 1], 0.5).item() == \
            pytest.approx(4 * anchor)

    def test_view_order_does_not_matter(self):
        rng = np.random.default_rng(3)
        z = _unit_rows(rng, 6, 3)
        labels = np.array([0, 1, 2, 0, 1, 2])
        order = rng.permutation(6)
        assert scl_loss(z[order], labels[order], 0.2).item() == \
            pytest.approx(scl_loss(z, labels, 0.2).item())

    def test_gradient_flows_to_adversarial_rows(self):
        rng = np.random.default_rng(1)
        z = T.parameter(_unit_rows(rng, 6, 4))
        with T.Tape() as tape:
            out = scl_loss(z, [0, 1, 0, 1, 0, 1], 0.1)
        grad = tape.backward(out).of(z)
        assert np.abs(grad[4:]).sum() > 0

    def test_lower_temperature_lowers_loss_at_the_optimum(self):
        # positives at similarity 1, negatives at -1
        z = np.array([[1.0, 0.0]] * 3 + [[-1.0, 0.0]] * 3)
        labels = [0, 0, 0, 1, 1, 1]
        losses = [scl_loss(z, labels, tau).item() for tau in (1.0, 0.5, 0.1)]
        assert losses[0] > losses[1] > losses[2]
        for tau, loss in zip((1.0, 0.5, 0.1), losses):
            expected = 6 * math.log(2 + 3 * math.exp(-2.0 / tau))
            assert loss == pytest.approx(expected, abs=1e-12)

    def test_empty_positive_set(self):
        with pytest.raises(EmptyPositiveSet) as e:
            scl_loss(np.eye(3), [0, 1, 1], 0.1)
        assert list(e.value.anchors) == [0]

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            scl_loss(np.eye(2), [0, 0], 0.0)

    def test_label_count_mismatch(self):
        with pytest.raises(ShapeError):
            scl_loss(np.eye(3), [0, 0], 0.1)

    def test_positive_mask_excludes_self(self):
        mask = positive_mask([0, 1, 0])
        assert mask.tolist() == [[False, False, True],
                                 [False, False, False],
                                 [True, False, False]]


class TestCrossEntropy(object):

    def test_uniform_logits(self):
        assert cross_entropy(np.zeros((4, 10)), [0, 1, 2, 3]).item() == \
            pytest.approx(math.log(10))

    def test_mean_over_batch(self):
        logits = np.array([[2.0, 0.0], [0.0, 2.0]])
        expected = math.log(1 + math.exp(-2.0))
        assert cross_entropy(logits, [0, 1]).item() == pytest.approx(expected)

    def test_matches_per_sample(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(5, 3)) * 10
        labels = np.array([0, 2, 1, 1, 0])
        np.testing.assert_allclose(
            cross_entropy(logits, labels).item(),
            per_sample_cross_entropy(logits, labels).mean())

    def test_gradient_is_softmax_minus_onehot(self):
        logits = T.parameter([[1.0, 2.0, 3.0]])
        with T.Tape() as tape:
            out = cross_entropy(logits, [2])
        expected = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
        expected[2] -= 1.0
        np.testing.assert_allclose(tape.backward(out).of(logits)[0], expected)

    def test_confident_true_class(self):
        logits = np.zeros((2, 10))
        logits[0, 3] = logits[1, 7] = 30.0
        assert cross_entropy(logits, [3, 7]).item() < 1e-9

    def test_matches_scalar_loops(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(5, 10)) * 3.0
        labels = [4, 0, 9, 2, 2]
        total = 0.0
        for row, label in zip(logits, labels):
            top = max(row)
            lse = top + math.log(sum(math.exp(value - top) for value in row))
            total += lse - row[label]
        assert abs(cross_entropy(logits, labels).item() - total / 5) < 1e-12

    def test_row_shift_invariance(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(4, 6))
        labels = [0, 5, 2, 3]
        shifts = np.array([[5.0], [-12.5], [40.0], [0.25]])
        before = cross_entropy(logits, labels).item()
        after = cross_entropy(logits + shifts, labels).item()
        assert abs(before - after) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            cross_entropy(np.zeros((2, 3)), [0, 3])
        with pytest.raises(LabelError):
            cross_entropy(np.zeros((2, 3)), [0, -1])
