import numpy as np
import pytest

from sbpool.errors import (
    InconsistentLabels,
    IndexOutOfRange,
    InvalidSpec,
    NonFiniteValue,
    NonPositiveRatio,
    ShapeMismatch,
)
from sbpool.labels import build_label_tree
from sbpool.losses import (
    BatchLabels,
    PenaltyConfig,
    combined_loss,
    cross_entropy,
    cross_entropy_batch,
    generalized_cross_entropy,
    loss_weights,
    penalty_mask,
    softmax,
)

TREE = build_label_tree(
    [("makeA", "modelA8"), ("makeA", "modelA6"), ("makeB", "modelH3")]
)
# indices: modelA8=0, modelA6=1 (parent makeA=0); modelH3=2 (parent makeB=1)

TWO_PARENT_TREE = build_label_tree([("A", "a"), ("B", "b")])
ONE_PARENT_TREE = build_label_tree([("A", "a"), ("A", "b")])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)

    def test_large_logits_no_overflow(self):
        a = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(a))
        assert a[0] > 0.999999 and a[1] >= 0.0
        assert abs(a.sum() - 1.0) <= 1e-12

    def test_hand_case(self):
        np.testing.assert_allclose(softmax(np.array([0.0, np.log(3)])), [0.25, 0.75], atol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            z = rng.uniform(-1000, 1000, size=int(rng.integers(2, 12)))
            a = softmax(z)
            assert abs(a.sum() - 1.0) <= 1e-12
            assert np.all(np.isfinite(a))

    def test_strictly_positive_on_representable_range(self):
        # exp underflows to exactly 0 once a logit sits ~745 below the max;
        # strict positivity only holds inside that range
        rng = np.random.default_rng(1)
        for _ in range(200):
            z = rng.uniform(-350, 350, size=int(rng.integers(2, 12)))
            assert np.all(softmax(z) > 0)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteValue):
            softmax(np.array([np.inf, 0.0]))


def fd_gradient(fn, z, h=1e-6):
    g = np.zeros_like(z)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp.flat[i] += h
        zm.flat[i] -= h
        g.flat[i] = (fn(zp) - fn(zm)) / (2 * h)
    return g


class TestCrossEntropy:
    def test_uniform_two_class(self):
        loss, _ = cross_entropy(np.zeros(2), 0)
        assert abs(loss - np.log(2)) < 1e-15

    def test_hand_case(self):
        loss, _ = cross_entropy(np.array([0.0, np.log(3)]), 1)
        assert abs(loss - (-np.log(0.75))) < 1e-15

    def test_gradient_is_probs_minus_onehot(self):
        z = np.array([0.3, -0.7, 1.1])
        _, dz = cross_entropy(z, 2)
        expected = softmax(z)
        expected[2] -= 1
        np.testing.assert_allclose(dz, expected, atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            z = rng.normal(size=5)
            _, dz = cross_entropy(z, 3)
            numeric = fd_gradient(lambda zz: cross_entropy(zz, 3)[0], z)
            np.testing.assert_allclose(dz, numeric, atol=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            cross_entropy(np.zeros(3), 3)


class TestPenaltyMask:
    def test_sibling_prediction_not_penalized(self):
        # true pair (makeA, modelA8); argmax is sibling modelA6
        labels = BatchLabels([0], [0], TREE)
        z = np.array([[0.0, 5.0, 1.0]])
        mask = penalty_mask(z, labels, TREE, b=2.0)
        assert mask.alpha.tolist() == [1.0]

    def test_cross_make_prediction_penalized(self):
        labels = BatchLabels([0], [0], TREE)
        z = np.array([[0.0, 1.0, 5.0]])  # argmax modelH3, different make
        mask = penalty_mask(z, labels, TREE, b=2.0)
        assert mask.alpha.tolist() == [2.0]

    def test_b_one_never_penalizes(self):
        rng = np.random.default_rng(2)
        labels = BatchLabels([0, 0, 1], [0, 1, 2], TREE)
        z = rng.normal(size=(3, 3))
        assert penalty_mask(z, labels, TREE, b=1.0).alpha.tolist() == [1.0, 1.0, 1.0]

    def test_argmax_tie_breaks_low(self):
        labels = BatchLabels([1], [2], TREE)
        z = np.array([[1.0, 1.0, 1.0]])  # tie -> index 0 (parent makeA) -> violation
        assert penalty_mask(z, labels, TREE, b=3.0).alpha.tolist() == [3.0]

    def test_shape_error(self):
        labels = BatchLabels([0], [0], TREE)
        with pytest.raises(ShapeMismatch):
            penalty_mask(np.zeros((1, 2)), labels, TREE, b=2.0)


class TestGeneralizedCrossEntropy:
    def test_b_one_degenerates_to_summed_ce(self):
        rng = np.random.default_rng(3)
        labels = BatchLabels([0, 0, 1, 0], [0, 1, 2, 0], TREE)
        z = rng.normal(size=(4, 3))
        loss, _ = generalized_cross_entropy(z, labels, TREE, b=1.0, reduction="sum")
        expected = sum(cross_entropy(z[i], labels.fine[i])[0] for i in range(4))
        assert abs(loss - expected) <= 1e-12

    def test_violating_pair_hand_value(self):
        # two fine classes with different parents, z=[0,1], true fine 0:
        # argmax 1 violates, so loss = 2*ln(1+e)
        labels = BatchLabels([0], [0], TWO_PARENT_TREE)
        loss, _ = generalized_cross_entropy(
            np.array([[0.0, 1.0]]), labels, TWO_PARENT_TREE, b=2.0, reduction="sum"
        )
        assert abs(loss - 2 * np.log(1 + np.e)) < 1e-12

    def test_same_parent_pair_hand_value(self):
        labels = BatchLabels([0], [0], ONE_PARENT_TREE)
        loss, _ = generalized_cross_entropy(
            np.array([[0.0, 1.0]]), labels, ONE_PARENT_TREE, b=2.0, reduction="sum"
        )
        assert abs(loss - np.log(1 + np.e)) < 1e-12

    def test_violating_sample_scales_exactly_by_b(self):
        rng = np.random.default_rng(4)
        labels = BatchLabels([0], [0], TWO_PARENT_TREE)
        for b in (1.5, 2.0, 3.0):
            z = rng.normal(size=(1, 2))
            z[0, 1] = z[0, 0] + 1.0  # force violation
            penalized, _ = generalized_cross_entropy(
                z, labels, TWO_PARENT_TREE, b=b, reduction="sum"
            )
            plain, _ = generalized_cross_entropy(
                z, labels, TWO_PARENT_TREE, b=1.0, reduction="sum"
            )
            assert penalized == b * plain

    def test_monotone_in_b_strict_iff_violation(self):
        labels = BatchLabels([0, 0], [0, 0], TWO_PARENT_TREE)
        z_violating = np.array([[0.0, 1.0], [2.0, 0.0]])
        prev = -np.inf
        for b in (1.0, 1.5, 2.0, 3.0):
            loss, _ = generalized_cross_entropy(
                z_violating, labels, TWO_PARENT_TREE, b=b, reduction="sum"
            )
            assert loss > prev
            prev = loss
        z_correct = np.array([[2.0, 0.0], [1.0, 0.0]])
        values = {
            generalized_cross_entropy(z_correct, labels, TWO_PARENT_TREE, b=b, reduction="sum")[0]
            for b in (1.0, 2.0, 3.0)
        }
        assert len(values) == 1

    def test_mean_reduction_divides_by_batch(self):
        rng = np.random.default_rng(5)
        labels = BatchLabels([0, 0, 1, 1], [0, 1, 2, 3],
                             build_label_tree([("A", "a"), ("A", "b"), ("B", "c"), ("B", "d")]))
        tree = build_label_tree([("A", "a"), ("A", "b"), ("B", "c"), ("B", "d")])
        z = rng.normal(size=(4, 4))
        s, ds = generalized_cross_entropy(z, labels, tree, b=2.0, reduction="sum")
        m, dm = generalized_cross_entropy(z, labels, tree, b=2.0, reduction="mean")
        assert abs(m - s / 4) < 1e-15
        np.testing.assert_allclose(dm, ds / 4, atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        tree = build_label_tree([("A", "a"), ("A", "b"), ("B", "c"), ("B", "d")])
        labels = BatchLabels([0, 1, 1], [0, 2, 3], tree)
        for _ in range(5):
            z = rng.normal(size=(3, 4))
            # keep top-2 gaps wide so alpha is locally constant
            top = z.argmax(axis=1)
            z[np.arange(3), top] += 0.5
            _, dz = generalized_cross_entropy(z, labels, tree, b=2.0, reduction="mean")
            numeric = fd_gradient(
                lambda zz: generalized_cross_entropy(
                    zz.reshape(3, 4), labels, tree, b=2.0, reduction="mean"
                )[0],
                z.ravel(),
            )
            np.testing.assert_allclose(dz.ravel(), numeric, atol=1e-6)

    def test_inconsistent_labels_rejected(self):
        with pytest.raises(InconsistentLabels):
            BatchLabels([1], [0], TREE)
        labels = BatchLabels([0], [0])
        labels.coarse = np.array([1])
        with pytest.raises(InconsistentLabels):
            generalized_cross_entropy(np.zeros((1, 3)), labels, TREE, b=2.0)


class TestCombinedLoss:
    def test_even_ratio_averages(self):
        assert combined_loss(2.0, 4.0, (1, 1)) == 3.0

    def test_equal_losses_fixed_point(self):
        assert abs(combined_loss(1.0, 1.0, (7, 3)) - 1.0) < 1e-15

    def test_seven_three_weights_fine_branch(self):
        assert abs(combined_loss(0.0, 1.0, (7, 3)) - 0.3) < 1e-15

    def test_ratio_rescaling_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            lc, lf = rng.uniform(0, 5, size=2)
            assert combined_loss(lc, lf, (7, 3)) == combined_loss(lc, lf, (70, 30))

    def test_nonpositive_ratio_rejected(self):
        for r in ((0, 1), (1, 0), (-1, 2)):
            with pytest.raises(NonPositiveRatio):
                combined_loss(1.0, 1.0, r)

    def test_weights_normalize(self):
        wt, wg = loss_weights((7, 3))
        assert abs(wt - 0.7) < 1e-15 and abs(wg - 0.3) < 1e-15


class TestPenaltyConfig:
    def test_defaults(self):
        cfg = PenaltyConfig()
        assert cfg.b == 2.0 and cfg.r == (7.0, 3.0)

    def test_b_below_one_rejected(self):
        with pytest.raises(InvalidSpec):
            PenaltyConfig(b=0.5)

    def test_bad_ratio_rejected(self):
        with pytest.raises(NonPositiveRatio):
            PenaltyConfig(r=(0.0, 3.0))


class TestCrossEntropyBatch:
    def test_matches_per_sample(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        total, dz = cross_entropy_batch(z, labels, reduction="sum")
        expected = sum(cross_entropy(z[i], int(labels[i]))[0] for i in range(6))
        assert abs(total - expected) < 1e-12

    def test_bad_reduction(self):
        with pytest.raises(InvalidSpec):
            cross_entropy_batch(np.zeros((1, 2)), [0], reduction="median")
