import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array

from config import settings
from src.utils.errors import ValidationError

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by the tree learners.

    Args:
        min_leaf_size: smallest number of samples allowed in a child
        max_depth: depth limit (the root is depth 0)
        mtry: features sampled per split; None means ceil(p/3) for forests
            and p for boosting
        n_trees: trees in a forest or stages in a boosting run
        shrinkage: boosting learning rate
        bootstrap: resample rows for each forest tree
        seed: master seed
    """
    min_leaf_size: int = settings.MIN_LEAF_SIZE
    max_depth: int = settings.MAX_DEPTH
    mtry: Optional[int] = None
    n_trees: int = 140
    shrinkage: float = settings.SHRINKAGE
    bootstrap: bool = True
    seed: int = settings.SEED

    def __post_init__(self):
        if self.min_leaf_size < 1:
            raise ValidationError(f"min_leaf_size must be >= 1, got {self.min_leaf_size}")
        if self.max_depth < 0:
            raise ValidationError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")
        if not 0 < self.shrinkage <= 1:
            raise ValidationError(f"shrinkage must lie in (0, 1], got {self.shrinkage}")

    def forest_mtry(self, n_features):
        mtry = self.mtry if self.mtry is not None else math.ceil(n_features / 3)
        return self._checked(mtry, n_features)

    def boost_mtry(self, n_features):
        return self._checked(self.mtry if self.mtry is not None else n_features, n_features)

    @staticmethod
    def _checked(mtry, n_features):
        if not 1 <= mtry <= n_features:
            raise ValidationError(f"mtry must lie in [1, {n_features}], got {mtry}")
        return mtry

    def with_trees(self, n_trees):
        return replace(self, n_trees=n_trees)

    def to_dict(self):
        return asdict(self)


class FeatureSampler:
    """Draws the candidate features examined at each split."""

    def __init__(self, n_features, mtry=None, rng=None):
        self.n_features = n_features
        self.mtry = n_features if mtry is None else mtry
        self.rng = rng

    def sample(self):
        if self.mtry >= self.n_features or self.rng is None:
            return np.arange(self.n_features)
        return np.sort(self.rng.choice(self.n_features, self.mtry, replace=False))


class RegressionTree:
    """CART regression tree stored as flat node arrays.

    Internal nodes have ``feature >= 0`` and send a row left when
    ``x[feature] <= threshold``; leaves have ``feature == -1`` and predict
    ``value``, the mean response of their training samples.
    """

    def __init__(self, feature, threshold, left, right, value, n_samples, n_features):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)
        self.n_features = int(n_features)

    @property
    def node_count(self):
        return len(self.feature)

    @property
    def depth(self):
        depths = np.zeros(self.node_count, dtype=np.int64)
        for node in range(self.node_count):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X):
        """Index of the leaf each row lands in."""
        X = np.asarray(X, dtype=float)
        nodes = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[nodes] != LEAF)
        while len(active):
            current = nodes[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            nodes[active] = np.where(go_left, self.left[current], self.right[current])
            active = active[self.feature[nodes[active]] != LEAF]
        return nodes

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(f"expected {self.n_features} feature columns, got shape {X.shape}")
        return self.value[self.apply(X)]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["feature"], data["threshold"], data["left"], data["right"],
                   data["value"], data["n_samples"], data["n_features"])


def check_training_data(X, y, multi_output=False):
    try:
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64, ensure_2d=False)
    except ValueError as exc:
        raise ValidationError(str(exc))
    if not multi_output and y.ndim != 1:
        raise ValidationError(f"response must be a vector, got shape {y.shape}")
    if len(X) != len(y):
        raise ValidationError(f"X has {len(X)} rows but the response has {len(y)}")
    return X, y


def best_split(X, y, features, min_leaf_size):
    """Best (feature, threshold, score) over the given features, or None.

    Minimising the summed child squared error is the same as maximising
    sum_L**2 / n_L + sum_R**2 / n_R. Thresholds are midpoints between adjacent
    distinct sorted values; ties keep the first feature and smallest threshold.
    """
    n = len(y)
    if n < 2 * min_leaf_size:
        return None
    total = y.sum()
    n_left = np.arange(1, n, dtype=float)
    allowed = (n_left >= min_leaf_size) & (n - n_left >= min_leaf_size)
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="mergesort")
        xs = X[order, f]
        sum_left = np.cumsum(y[order])[:-1]
        valid = allowed & (xs[1:] > xs[:-1])
        if not valid.any():
            continue
        score = np.full(n - 1, -np.inf)
        score[valid] = (sum_left[valid] ** 2 / n_left[valid]
                        + (total - sum_left[valid]) ** 2 / (n - n_left[valid]))
        i = int(np.argmax(score))
        if best is None or score[i] > best[2]:
            best = (int(f), (xs[i] + xs[i + 1]) / 2.0, float(score[i]))
    return best


def fit_tree(X, y, config: TrainConfig = None, feature_sampler: FeatureSampler = None) -> RegressionTree:
    """Grow a CART regression tree on squared error.

    Growth stops at ``max_depth``, when a node cannot produce two children of
    ``min_leaf_size`` samples, or when its responses are constant.
    """
    config = config or TrainConfig()
    X, y = check_training_data(X, y)
    if len(y) == 0:
        raise ValidationError("cannot fit a tree on empty data")
    sampler = feature_sampler or FeatureSampler(X.shape[1])

    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []

    def add_leaf(idx):
        ys = y[idx]
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        # a constant node predicts its value exactly
        value.append(float(ys[0]) if np.ptp(ys) == 0 else float(np.mean(ys)))
        n_samples.append(len(idx))
        return len(feature) - 1

    root_idx = np.arange(len(y))
    stack = [(root_idx, 0, None, None)]
    while stack:
        idx, depth, parent, side = stack.pop()
        ys = y[idx]
        split = None
        if depth < config.max_depth and np.ptp(ys) > 0:
            split = best_split(X[idx], ys, sampler.sample(), config.min_leaf_size)
        if split is None:
            node = add_leaf(idx)
        else:
            f, thr, _ = split
            node = len(feature)
            feature.append(f)
            threshold.append(thr)
            left.append(LEAF)
            right.append(LEAF)
            value.append(float(np.mean(ys)))
            n_samples.append(len(idx))
            goes_left = X[idx, f] <= thr
            # right pushed first so the left subtree is numbered first
            stack.append((idx[~goes_left], depth + 1, node, "right"))
            stack.append((idx[goes_left], depth + 1, node, "left"))
        if parent is not None:
            (left if side == "left" else right)[parent] = node

    tree = RegressionTree(feature, threshold, left, right, value, n_samples, X.shape[1])
    logger.debug("grew tree with %d nodes on %d rows", tree.node_count, len(y))
    return tree
