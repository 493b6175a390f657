import unittest

import numpy as np

from src.models.ensembles import (
    BoostModel,
    ForestModel,
    fit_forest,
    fit_lsboost,
    predict_boost,
    predict_forest,
    staged_boost_predictions,
    staged_forest_predictions,
)
from src.models.tree import RegressionTree, TrainConfig, fit_tree
from src.utils.errors import ValidationError


def _stump(value, n_features=1):
    return RegressionTree([-1], [0.0], [-1], [-1], [value], [1], n_features)


def _data(seed, n=100, p=4):
    rng = np.random.default_rng(seed)
    X = rng.random((n, p))
    y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=n)
    return X, y


class TestForest(unittest.TestCase):
    def test_single_tree_without_bootstrap_is_plain_cart(self):
        X, y = _data(0, 60, 3)
        config = TrainConfig(n_trees=1, mtry=3, bootstrap=False, min_leaf_size=2)
        forest = fit_forest(X, y, config)
        tree = fit_tree(X, y, config)
        np.testing.assert_array_equal(predict_forest(forest, X), tree.predict(X))

    def test_constant_response(self):
        X, _ = _data(1, 40)
        forest = fit_forest(X, np.full(40, 2.5), TrainConfig(n_trees=5))
        np.testing.assert_array_equal(predict_forest(forest, X), np.full(40, 2.5))

    def test_mean_of_trees(self):
        forest = ForestModel([_stump(2.0), _stump(4.0)], mtry=1, seed=0, bootstrap=False)
        self.assertEqual(predict_forest(forest, np.zeros((1, 1)))[0], 3.0)

    def test_average_matches_loop(self):
        X, y = _data(2, 20)
        forest = fit_forest(X, y, TrainConfig(n_trees=10, min_leaf_size=2))
        expected = np.zeros(20)
        for tree in forest.trees:
            expected += tree.predict(X)
        np.testing.assert_allclose(predict_forest(forest, X), expected / 10, rtol=1e-12)

    def test_worker_count_does_not_change_the_model(self):
        X, y = _data(3, 80)
        holdout, _ = _data(4, 30)
        config = TrainConfig(n_trees=8, seed=123)
        serial = predict_forest(fit_forest(X, y, config, workers=1), holdout)
        parallel = predict_forest(fit_forest(X, y, config, workers=4), holdout)
        np.testing.assert_array_equal(serial, parallel)

    def test_prefix_equals_smaller_forest(self):
        X, y = _data(5, 70)
        big = fit_forest(X, y, TrainConfig(n_trees=12, seed=9))
        small = fit_forest(X, y, TrainConfig(n_trees=5, seed=9))
        np.testing.assert_array_equal(predict_forest(big.truncate(5), X), predict_forest(small, X))
        staged = staged_forest_predictions(big, X, [5, 12])
        np.testing.assert_allclose(staged[5], predict_forest(small, X), rtol=1e-12)
        np.testing.assert_allclose(staged[12], predict_forest(big, X), rtol=1e-12)

    def test_predictions_within_training_range(self):
        X, y = _data(6, 90)
        forest = fit_forest(X, y, TrainConfig(n_trees=10))
        predictions = predict_forest(forest, np.random.default_rng(7).random((40, 4)) * 2 - 0.5)
        self.assertTrue((predictions >= y.min()).all() and (predictions <= y.max()).all())

    def test_schema_mismatch(self):
        X, y = _data(8, 30)
        forest = fit_forest(X, y, TrainConfig(n_trees=2))
        with self.assertRaises(ValidationError):
            predict_forest(forest, X[:, :2])


class TestBoosting(unittest.TestCase):
    def test_constant_response_has_no_stages(self):
        X, _ = _data(0, 30)
        model = fit_lsboost(X, np.full(30, 1.25), TrainConfig(n_trees=10))
        self.assertEqual(model.initial_prediction, 1.25)
        self.assertEqual(len(model.stages), 0)
        np.testing.assert_array_equal(predict_boost(model, X), np.full(30, 1.25))

    def test_training_error_is_non_increasing(self):
        for seed in range(20):
            X, y = _data(seed, 100)
            model = fit_lsboost(X, y, TrainConfig(n_trees=50, shrinkage=1.0, max_depth=3, min_leaf_size=3))
            staged = staged_boost_predictions(model, X, range(len(model.stages) + 1))
            errors = [float(np.mean((y - staged[m]) ** 2)) for m in range(len(model.stages) + 1)]
            self.assertTrue(all(b <= a + 1e-12 for a, b in zip(errors, errors[1:])))
            self.assertLess(errors[-1], errors[1])
            np.testing.assert_allclose(errors, model.train_mse, rtol=1e-9, atol=1e-15)

    def test_beta_is_the_closed_form_ratio(self):
        X, y = _data(11, 100)
        model = fit_lsboost(X, y, TrainConfig(n_trees=20, max_depth=4))
        current = np.full(len(y), model.initial_prediction)
        for tree, beta in model.stages:
            h = tree.predict(X)
            r = y - current
            self.assertAlmostEqual(beta, float(r @ h) / float(h @ h), delta=1e-10 * max(1.0, abs(beta)))
            # leaf values are residual means, so the ratio is one
            self.assertAlmostEqual(beta, 1.0, delta=1e-10)
            current = current + model.shrinkage * beta * h

    def test_staged_replay(self):
        X, y = _data(12, 60)
        model = fit_lsboost(X, y, TrainConfig(n_trees=20, shrinkage=0.5))
        replay = np.full(len(y), model.initial_prediction)
        for tree, beta in model.stages:
            replay = replay + 0.5 * beta * tree.predict(X)
        np.testing.assert_allclose(predict_boost(model, X), replay, rtol=1e-12)
        truncated = model.truncate(5)
        np.testing.assert_allclose(predict_boost(truncated, X),
                                   staged_boost_predictions(model, X, [5])[5], rtol=1e-12)

    def test_hand_built_models(self):
        base = BoostModel(2.0, [], 1.0, 1)
        np.testing.assert_array_equal(predict_boost(base, np.zeros((3, 1))), [2.0, 2.0, 2.0])
        one = BoostModel(2.0, [(_stump(0.5), 1.0)], 1.0, 1)
        np.testing.assert_array_equal(predict_boost(one, np.zeros((2, 1))), [2.5, 2.5])

    def test_empty_data(self):
        with self.assertRaises(ValidationError):
            fit_lsboost(np.zeros((0, 2)), np.zeros(0))


if __name__ == "__main__":
    unittest.main()
