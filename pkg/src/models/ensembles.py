"""Random Forest and least-squares boosting built on the CART learner."""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.models.tree import FeatureSampler, RegressionTree, TrainConfig, check_training_data, fit_tree
from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)


def tree_rng(seed, index):
    """Random stream of tree ``index``; depends only on (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _check_schema(n_features, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValidationError(f"expected {n_features} feature columns, got shape {X.shape}")
    return X


@dataclass
class ForestModel:
    trees: List[RegressionTree]
    mtry: int
    seed: int
    bootstrap: bool
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.trees:
            raise ValidationError("a forest needs at least one tree")

    @property
    def n_features(self):
        return self.trees[0].n_features

    def truncate(self, n_trees) -> "ForestModel":
        """The forest made of the first ``n_trees`` trees.

        Tree i only depends on (seed, i), so this is exactly the forest that
        fitting with ``n_trees`` would have produced.
        """
        if not 1 <= n_trees <= len(self.trees):
            raise ValidationError(f"forest has {len(self.trees)} trees, cannot keep {n_trees}")
        return replace(self, trees=self.trees[:n_trees], config=self.config.with_trees(n_trees))


def _fit_member(X, y, config, mtry, index):
    rng = tree_rng(config.seed, index)
    if config.bootstrap:
        rows = rng.integers(0, len(y), len(y))
        X, y = X[rows], y[rows]
    return fit_tree(X, y, config, FeatureSampler(X.shape[1], mtry, rng))


def fit_forest(X, y, config: TrainConfig = None, workers=1) -> ForestModel:
    """Bagged CART trees with per-split feature sampling.

    The result is identical for any ``workers`` value.
    """
    config = config or TrainConfig()
    X, y = check_training_data(X, y)
    if len(y) == 0:
        raise ValidationError("cannot fit a forest on empty data")
    mtry = config.forest_mtry(X.shape[1])
    if workers == 1:
        trees = [_fit_member(X, y, config, mtry, i) for i in range(config.n_trees)]
    else:
        trees = Parallel(n_jobs=workers)(
            delayed(_fit_member)(X, y, config, mtry, i) for i in range(config.n_trees)
        )
    logger.debug("forest: %d trees, mtry=%d, %d rows", len(trees), mtry, len(y))
    return ForestModel(list(trees), mtry, config.seed, config.bootstrap, config)


def predict_forest(model: ForestModel, X) -> np.ndarray:
    X = _check_schema(model.n_features, X)
    total = np.zeros(len(X))
    for tree in model.trees:
        total += tree.predict(X)
    return total / len(model.trees)


def staged_forest_predictions(model: ForestModel, X, sizes):
    """Predictions of the first n trees for each n in ``sizes``."""
    X = _check_schema(model.n_features, X)
    wanted = sorted(set(sizes))
    if wanted and wanted[-1] > len(model.trees):
        raise ValidationError(f"forest has {len(model.trees)} trees, asked for {wanted[-1]}")
    result = {}
    total = np.zeros(len(X))
    for count, tree in enumerate(model.trees, start=1):
        total += tree.predict(X)
        if count in wanted:
            result[count] = total / count
    return result


@dataclass
class BoostModel:
    initial_prediction: float
    stages: List[Tuple[RegressionTree, float]]
    shrinkage: float
    n_features: int
    config: TrainConfig = field(default_factory=TrainConfig)
    train_mse: List[float] = field(default_factory=list)

    @property
    def betas(self):
        return [beta for _, beta in self.stages]

    def truncate(self, n_stages) -> "BoostModel":
        n_stages = min(n_stages, len(self.stages))
        return replace(self, stages=self.stages[:n_stages], train_mse=self.train_mse[:n_stages + 1])


def fit_lsboost(X, y, config: TrainConfig = None) -> BoostModel:
    """Stagewise squared-loss boosting.

    Each stage fits a tree h to the current residual r and scales it by the
    stationary point of sum((beta * h - r) ** 2), beta = <r, h> / <h, h>.
    Boosting trees see every feature and the full sample.
    """
    config = config or TrainConfig()
    X, y = check_training_data(X, y)
    if len(y) == 0:
        raise ValidationError("cannot fit a boosting model on empty data")
    stage_config = replace(config, bootstrap=False)
    sampler = FeatureSampler(X.shape[1], config.boost_mtry(X.shape[1]), tree_rng(config.seed, 0))

    f0 = float(y[0]) if np.ptp(y) == 0 else float(np.mean(y))
    current = np.full(len(y), f0)
    residual = y - current
    history = [float(np.mean(residual ** 2))]
    stages = []
    for m in range(config.n_trees):
        if not np.any(residual):
            break
        tree = fit_tree(X, residual, stage_config, sampler)
        h = tree.predict(X)
        hh = float(h @ h)
        if hh == 0.0:
            logger.debug("boosting stopped at stage %d: tree predicts zero", m + 1)
            break
        beta = float(residual @ h) / hh
        current = current + config.shrinkage * beta * h
        residual = y - current
        stages.append((tree, beta))
        history.append(float(np.mean(residual ** 2)))
    logger.debug("lsboost: %d stages, train mse %.6g -> %.6g", len(stages), history[0], history[-1])
    return BoostModel(f0, stages, config.shrinkage, X.shape[1], config, history)


def predict_boost(model: BoostModel, X) -> np.ndarray:
    X = _check_schema(model.n_features, X)
    prediction = np.full(len(X), model.initial_prediction)
    for tree, beta in model.stages:
        prediction += model.shrinkage * beta * tree.predict(X)
    return prediction


def staged_boost_predictions(model: BoostModel, X, sizes):
    """Predictions after n stages for each n in ``sizes``.

    A run that stopped early keeps predicting with all of its stages.
    """
    X = _check_schema(model.n_features, X)
    wanted = sorted(set(sizes))
    result = {}
    prediction = np.full(len(X), model.initial_prediction)
    for n in wanted:
        if n == 0:
            result[0] = prediction.copy()
    for count, (tree, beta) in enumerate(model.stages, start=1):
        prediction = prediction + model.shrinkage * beta * tree.predict(X)
        if count in wanted:
            result[count] = prediction.copy()
    for n in wanted:
        if n not in result:
            result[n] = prediction.copy()
    return result
