import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvtsc.domain import InputError
from cvtsc.surrogate import (
    CvMetrics,
    DecisionTree,
    Leaf,
    Split,
    SurrogateModel,
    cross_validate,
    delta_I,
    mse,
    predict_timing_plan,
    sfs,
)


def exact_mse(labels):
    ys = [Fraction(v) for v in labels]
    mean = sum(ys) / len(ys)
    return sum((v - mean) ** 2 for v in ys) / len(ys)


def leaf_tree(value, n_features):
    tree = DecisionTree()
    tree.root = Leaf(float(value), 1)
    tree.n_features = n_features
    return tree


class TestMse:
    def test_constant_labels(self):
        assert mse([3, 3]) == 0.0

    def test_two_point(self):
        assert mse([2, 4]) == 1.0

    def test_six_point(self):
        assert mse([1, 2, 3, 4, 5, 6]) == pytest.approx(35 / 12, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            mse([])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
    def test_matches_exact_arithmetic(self, labels):
        expected = float(exact_mse(labels))
        assert mse(labels) == pytest.approx(expected, rel=1e-9, abs=1e-9)


class TestDeltaI:
    def test_spec_case(self):
        assert delta_I([2, 4, 6, 8], [2, 4], [6, 8]) == pytest.approx(3.0, rel=1e-12)

    def test_constant_parent_zero(self):
        assert delta_I([5, 5, 5], [5], [5, 5]) == 0.0

    def test_pair_split_gives_parent_error(self):
        assert delta_I([2, 4], [2], [4]) == pytest.approx(mse([2, 4]), rel=1e-12)

    def test_weighted_variant(self):
        got = delta_I([0, 0, 0, 10], [0, 0, 0], [10], weighted=True)
        assert got == pytest.approx(18.75, rel=1e-12)

    def test_empty_child_rejected(self):
        with pytest.raises(InputError):
            delta_I([1, 2], [1, 2], [])

    def test_non_partition_rejected(self):
        with pytest.raises(InputError):
            delta_I([1, 2, 3], [1, 2], [4])

    def test_unweighted_can_be_negative(self):
        assert delta_I([0, 0, 0, 10], [0], [0, 0, 10]) < 0


# -- fitting -------------------------------------------------------------------

def oracle_best_split(X, y, min_samples_leaf, weighted):
    """Exhaustive (feature, observed value) search ranked by delta_I."""
    best = None
    for f in range(X.shape[1]):
        for thr in sorted(set(X[:, f])):
            mask = X[:, f] <= thr
            nl, nr = int(mask.sum()), int((~mask).sum())
            if nl < min_samples_leaf or nr < min_samples_leaf or nr == 0:
                continue
            gain = delta_I(y, y[mask], y[~mask], weighted)
            if best is None or gain > best[0]:
                best = (gain, f, thr)
    if best is None or best[0] <= 0:
        return None
    return best[1], best[2]


def walk_splits(tree, X, y):
    """Yield (node, X_node, y_node) for every internal node via routing."""
    stack = [(tree.root, X, y)]
    while stack:
        node, Xn, yn = stack.pop()
        if isinstance(node, Split):
            yield node, Xn, yn
            mask = Xn[:, node.feature] <= node.threshold
            stack.append((node.left, Xn[mask], yn[mask]))
            stack.append((node.right, Xn[~mask], yn[~mask]))


def walk_leaves(tree, X, y):
    stack = [(tree.root, X, y)]
    while stack:
        node, Xn, yn = stack.pop()
        if isinstance(node, Leaf):
            yield node, Xn, yn
        else:
            mask = Xn[:, node.feature] <= node.threshold
            stack.append((node.left, Xn[mask], yn[mask]))
            stack.append((node.right, Xn[~mask], yn[~mask]))


class TestFit:
    def test_constant_labels_single_leaf(self):
        X = np.arange(10.0).reshape(-1, 1)
        tree = DecisionTree(min_samples_leaf=1).fit(X, np.full(10, 7.0))
        assert isinstance(tree.root, Leaf)
        assert tree.root.value == 7.0

    def test_step_function_splits_on_informative_feature(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.uniform(0, 1, 40), rng.uniform(0, 1, 40)])
        y = np.where(X[:, 1] <= 0.5, 3.0, 9.0)
        tree = DecisionTree(min_samples_leaf=1, max_depth=4).fit(X, y)
        assert isinstance(tree.root, Split)
        assert tree.root.feature == 1
        assert float(tree.predict(np.array([0.5, 0.1]))) == 3.0
        assert float(tree.predict(np.array([0.5, 0.9]))) == 9.0

    @pytest.mark.parametrize("weighted", [False, True])
    @pytest.mark.parametrize("seed", range(6))
    def test_every_split_matches_exhaustive_search(self, seed, weighted):
        rng = np.random.default_rng([seed, int(weighted)])
        n, d = int(rng.integers(4, 13)), int(rng.integers(1, 4))
        X = rng.uniform(0, 10, (n, d))
        y = rng.uniform(0, 30, n)
        tree = DecisionTree(max_depth=2, min_samples_leaf=1,
                            weighted_gain=weighted).fit(X, y)
        for node, Xn, yn in walk_splits(tree, X, y):
            expected = oracle_best_split(Xn, yn, 1, weighted)
            assert expected is not None
            assert (node.feature, node.threshold) == expected

    def test_min_samples_leaf_respected(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, (40, 2))
        y = rng.uniform(0, 30, 40)
        tree = DecisionTree(max_depth=6, min_samples_leaf=5).fit(X, y)
        for leaf, _, yn in walk_leaves(tree, X, y):
            assert leaf.count == len(yn) >= 5

    @settings(deadline=None, max_examples=25)
    @given(st.integers(0, 10_000))
    def test_leaf_predicts_mean_of_routed_labels(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        X = rng.uniform(0, 5, (n, 2))
        y = rng.uniform(0, 30, n)
        tree = DecisionTree(max_depth=3, min_samples_leaf=1).fit(X, y)
        for leaf, _, yn in walk_leaves(tree, X, y):
            assert leaf.value == pytest.approx(float(np.mean(yn)), rel=1e-9)

    @settings(deadline=None, max_examples=25)
    @given(st.integers(0, 10_000))
    def test_child_weighted_error_never_exceeds_parent(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 40))
        X = rng.uniform(0, 5, (n, 2))
        y = rng.uniform(0, 30, n)
        tree = DecisionTree(max_depth=4, min_samples_leaf=1).fit(X, y)
        for node, Xn, yn in walk_splits(tree, X, y):
            mask = Xn[:, node.feature] <= node.threshold
            nl, nr = int(mask.sum()), int((~mask).sum())
            weighted_children = (nl * mse(yn[mask]) + nr * mse(yn[~mask])) / len(yn)
            assert weighted_children <= mse(yn) + 1e-9

    def test_classification_majority_vote(self):
        X = np.array([[0.0], [1.0], [2.0], [10.0], [11.0]])
        y = np.array([1.0, 1.0, 0.0, 2.0, 2.0])
        tree = DecisionTree(task="classification", min_samples_leaf=1,
                            max_depth=1).fit(X, y)
        assert float(tree.predict(np.array([0.5]))) == 1.0   # majority of {1,1,0}
        assert float(tree.predict(np.array([10.5]))) == 2.0

    def test_classification_tie_smallest_label(self):
        tree = DecisionTree(task="classification", max_depth=0)
        tree.fit(np.zeros((4, 1)), np.array([2.0, 1.0, 2.0, 1.0]))
        assert tree.root.value == 1.0


class TestPredict:
    def test_single_leaf_always_leaf_value(self):
        tree = leaf_tree(12.5, 3)
        for x in ([0, 0, 0], [99, -1, 5]):
            assert float(tree.predict(np.array(x, dtype=float))) == 12.5

    def test_routing_convention_le_goes_left(self):
        tree = DecisionTree()
        tree.root = Split(0, 9.0, Leaf(1.0, 1), Leaf(2.0, 1))
        tree.n_features = 1
        assert float(tree.predict(np.array([9.0]))) == 1.0
        assert float(tree.predict(np.array([9.0001]))) == 2.0

    def test_nested_routing(self):
        # outer split on feature 0 (queue-length style), inner on feature 1
        tree = DecisionTree()
        tree.root = Split(0, 9.0, Split(1, 12.0, Leaf(10.0, 1), Leaf(20.0, 1)),
                          Leaf(30.0, 1))
        tree.n_features = 2
        assert float(tree.predict(np.array([5.0, 12.0]))) == 10.0
        assert float(tree.predict(np.array([5.0, 13.0]))) == 20.0
        assert float(tree.predict(np.array([9.5, 0.0]))) == 30.0

    def test_dimension_mismatch_rejected(self):
        tree = leaf_tree(1.0, 4)
        with pytest.raises(InputError):
            tree.predict(np.zeros(3))

    def test_prediction_within_training_label_range(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(0, 1, (60, 3))
        y = rng.uniform(5, 30, 60)
        tree = DecisionTree().fit(X, y)
        preds = tree.predict(rng.uniform(-2, 3, (200, 3)))
        assert preds.min() >= y.min() and preds.max() <= y.max()


class TestSerialization:
    @pytest.mark.parametrize("task", ["regression", "classification"])
    def test_round_trip_bit_exact(self, task):
        rng = np.random.default_rng(17)
        X = rng.uniform(0, 7, (50, 3))
        y = np.round(rng.uniform(0, 5, 50)) if task == "classification" \
            else rng.uniform(5, 30, 50)
        tree = DecisionTree(task=task, min_samples_leaf=2).fit(X, y)
        text = tree.to_text()
        clone = DecisionTree.from_text(text)
        assert clone.to_text() == text
        probe = rng.uniform(0, 7, (40, 3))
        assert np.array_equal(tree.predict(probe), clone.predict(probe))


class TestPredictTimingPlan:
    def test_subtraction_rule(self):
        plan = predict_timing_plan(leaf_tree(28.0, 8), leaf_tree(12.0, 4),
                                   np.zeros(8))
        assert list(plan) == [12.0, 12.0, 16.0, 16.0]

    def test_lag_clamped_to_minimum(self):
        plan = predict_timing_plan(leaf_tree(20.0, 8), leaf_tree(18.0, 4),
                                   np.zeros(8))
        assert list(plan) == [18.0, 18.0, 5.0, 5.0]

    def test_ring_totals_reconciled(self):
        plan = predict_timing_plan(leaf_tree(28.0, 8),
                                   (leaf_tree(26.0, 4), leaf_tree(10.0, 4)),
                                   np.zeros(8))
        g_d1, g_d2, g_g1, g_g2 = plan
        assert g_d1 + g_g1 == pytest.approx(g_d2 + g_g2)
        assert all(5.0 <= g <= 30.0 for g in plan)

    @settings(deadline=None, max_examples=40)
    @given(st.integers(0, 10_000))
    def test_always_within_bounds_and_consistent(self, seed):
        rng = np.random.default_rng(seed)
        barrier = leaf_tree(float(rng.uniform(5, 70)), 8)
        leads = (leaf_tree(float(rng.uniform(2, 35)), 4),
                 leaf_tree(float(rng.uniform(2, 35)), 4))
        plan = predict_timing_plan(barrier, leads, rng.uniform(0, 50, 8))
        assert all(5.0 - 1e-9 <= g <= 30.0 + 1e-9 for g in plan)
        assert plan[0] + plan[2] == pytest.approx(plan[1] + plan[3], abs=1e-9)


class TestCrossValidate:
    def test_perfect_fit_near_zero(self):
        X = np.arange(40.0).reshape(-1, 1)
        y = np.where(X[:, 0] <= 19.5, 10.0, 20.0)
        m = cross_validate(X, y, {"min_samples_leaf": 1}, repeats=5, seed=1)
        assert m.mae == pytest.approx(0.0, abs=1e-12)
        assert m.rmse == pytest.approx(0.0, abs=1e-12)

    def test_five_point_toy_matches_hand_computation(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
        y = np.array([1.0, 2.0, 3.0, 4.0, 10.0])
        params = {"max_depth": 0}
        got = cross_validate(X, y, params, repeats=2, train_frac=0.8, seed=123)
        maes, mapes, rmses = [], [], []
        for rep in range(2):
            perm = np.random.default_rng([123, rep]).permutation(5)
            train, val = perm[:4], perm[4:]
            pred = float(np.mean(y[train]))       # depth-0 tree is the mean
            err = abs(pred - float(y[val[0]]))
            maes.append(err)
            rmses.append(err)
            mapes.append(err / abs(float(y[val[0]])) * 100.0)
        assert got.mae == pytest.approx(float(np.mean(maes)), rel=1e-12)
        assert got.rmse == pytest.approx(float(np.mean(rmses)), rel=1e-12)
        assert got.mape == pytest.approx(float(np.mean(mapes)), rel=1e-12)

    def test_mape_skips_near_zero_labels(self):
        X = np.arange(12.0).reshape(-1, 1)
        y = np.zeros(12)
        m = cross_validate(X, y, {"max_depth": 0}, repeats=3, seed=5)
        assert math.isnan(m.mape)
        assert m.mae == 0.0

    def test_degenerate_split_rejected(self):
        with pytest.raises(InputError):
            cross_validate(np.zeros((1, 1)), np.zeros(1))


class TestSfs:
    @staticmethod
    def _cv_error(X, cols, y, seed=0):
        return cross_validate(X[:, cols], y, {"min_samples_leaf": 2},
                              repeats=4, seed=seed).rmse

    def test_recovers_planted_feature_pair(self):
        rng = np.random.default_rng(42)
        X = rng.uniform(0, 10, (250, 4))
        y = 3.0 * X[:, 1] + np.where(X[:, 3] > 5, 10.0, 0.0)
        pool = ("f0", "f1", "f2", "f3")

        def error_fn(subset):
            cols = [pool.index(s) for s in subset]
            return self._cv_error(X, cols, y)

        result = sfs(pool, error_fn)
        assert set(result.selected) == {"f1", "f3"}
        # brute force over all nonempty subsets agrees this pair is the best
        import itertools
        best = min(
            (frozenset(c) for r in range(1, 5)
             for c in itertools.combinations(pool, r)),
            key=lambda c: error_fn(tuple(sorted(c))),
        )
        assert best == {"f1", "f3"}

    def test_pure_noise_stops_immediately(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(0, 1, (120, 3))
        y = rng.normal(0, 1, 120) + 10.0
        pool = ("a", "b", "c")

        def error_fn(subset):
            cols = [pool.index(s) for s in subset]
            return self._cv_error(X, cols, y, seed=3)

        result = sfs(pool, error_fn)
        assert len(result.selected) <= 1

    def test_accepted_rounds_strictly_decrease(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(0, 10, (200, 5))
        y = X[:, 0] * 2 + X[:, 2] + rng.normal(0, 0.1, 200)
        pool = tuple(f"x{i}" for i in range(5))

        def error_fn(subset):
            cols = [pool.index(s) for s in subset]
            return self._cv_error(X, cols, y)

        result = sfs(pool, error_fn)
        accepted = [r for r in result.rounds if r.accepted]
        errors = [r.errors[r.chosen] for r in accepted]
        assert all(b < a for a, b in zip(errors, errors[1:]))

    def test_empty_pool_rejected(self):
        with pytest.raises(InputError):
            sfs((), lambda s: 0.0)


class TestSurrogateModel:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        X8 = rng.uniform(0, 100, (80, 8))
        y = rng.uniform(10, 60, 80)
        barrier = DecisionTree().fit(X8, y)
        lead1 = DecisionTree().fit(X8[:, [0, 2, 4, 6]], rng.uniform(5, 30, 80))
        lead2 = DecisionTree().fit(X8[:, [1, 3, 5, 7]], rng.uniform(5, 30, 80))
        model = SurrogateModel(barrier, (lead1, lead2),
                               t_lead=(5.0, 10.0), t_lag=(3.0,))
        text = model.to_text()
        clone = SurrogateModel.from_text(text)
        assert clone.to_text() == text
        for _ in range(10):
            x = rng.uniform(0, 120, 8)
            assert np.array_equal(model.predict_plan(x), clone.predict_plan(x))
