"""Two-block partial least squares regression (NIPALS).

X and Y are each summarised by an outer relation (X = T P' + E, Y = U Q' + F)
and the blocks are linked through the inner relation u_a = b_a t_a. The
component recursion is composed into a single coefficient matrix so that
prediction is one matrix product.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from sklearn.metrics import mean_squared_error
from sklearn.model_selection import KFold

from config import settings
from src.models.tree import check_training_data
from src.utils.errors import ConvergenceError, ValidationError

logger = logging.getLogger(__name__)


@dataclass
class PlsrModel:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    mask: np.ndarray  # kept predictor columns of the original X
    W: np.ndarray  # X weights, (p_kept, A)
    P: np.ndarray  # X loadings, (p_kept, A)
    Q: np.ndarray  # Y loadings, (m, A)
    b: np.ndarray  # inner coefficients, (A,)
    B_coef: np.ndarray  # (p_kept, m)
    univariate: bool = False
    fitted: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_components(self):
        return len(self.b)

    @property
    def n_features(self):
        return len(self.mask)

    def truncate(self, n_components) -> "PlsrModel":
        """The first ``n_components`` components; NIPALS extracts them in order,
        so this equals a fit with that many components."""
        if not 0 <= n_components <= self.n_components:
            raise ValidationError(f"model has {self.n_components} components, cannot keep {n_components}")
        a = n_components
        W, P, Q, b = self.W[:, :a], self.P[:, :a], self.Q[:, :a], self.b[:a]
        return replace(self, W=W, P=P, Q=Q, b=b, B_coef=compose_coefficients(W, P, Q, b), fitted=None)

    def to_dict(self):
        return {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean.tolist(),
            "mask": self.mask.astype(int).tolist(),
            "W": self.W.tolist(),
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "b": self.b.tolist(),
            "univariate": self.univariate,
        }

    @classmethod
    def from_dict(cls, data):
        p = int(np.sum(data["mask"]))
        m = len(data["y_mean"])
        W = np.asarray(data["W"], dtype=float).reshape(p, -1)
        P = np.asarray(data["P"], dtype=float).reshape(p, -1)
        Q = np.asarray(data["Q"], dtype=float).reshape(m, -1)
        b = np.asarray(data["b"], dtype=float)
        return cls(
            np.asarray(data["x_mean"], dtype=float),
            np.asarray(data["x_scale"], dtype=float),
            np.asarray(data["y_mean"], dtype=float),
            np.asarray(data["mask"], dtype=bool),
            W, P, Q, b,
            compose_coefficients(W, P, Q, b),
            bool(data["univariate"]),
        )


@dataclass
class ComponentSelection:
    candidates: List[int]
    cv_errors: List[float]
    chosen: int


def compose_coefficients(W, P, Q, b):
    """B = W (P'W)^-1 diag(b) Q'."""
    if W.shape[1] == 0:
        return np.zeros((W.shape[0], Q.shape[0]))
    R = W @ np.linalg.inv(P.T @ W)
    return R @ (b[:, None] * Q.T)


def _prepare(X, autoscale):
    x_mean = X.mean(axis=0)
    mask = np.ptp(X, axis=0) > 0
    x_scale = X[:, mask].std(axis=0, ddof=1) if autoscale else np.ones(int(mask.sum()))
    return x_mean[mask], x_scale, mask


def _standardize(model_mean, model_scale, mask, X):
    return (X[:, mask] - model_mean) / model_scale


def _dominant_direction(M):
    _, _, vt = np.linalg.svd(M, full_matrices=False)
    return vt[0]


def fit_plsr(X, Y, n_components, autoscale=True,
             tol=settings.NIPALS_TOLERANCE, max_iter=settings.NIPALS_MAX_ITER) -> PlsrModel:
    """NIPALS two-block PLS with ``n_components`` components."""
    X, Y = check_training_data(X, Y, multi_output=True)
    univariate = Y.ndim == 1
    Y = Y.reshape(len(Y), -1)
    n = len(X)
    if n_components < 0:
        raise ValidationError(f"n_components must be >= 0, got {n_components}")
    if n <= n_components:
        raise ValidationError(f"{n} rows cannot support {n_components} components")

    x_mean, x_scale, mask = _prepare(X, autoscale)
    if not mask.all():
        logger.debug("dropping %d zero-variance predictor columns", int((~mask).sum()))
    y_mean = Y.mean(axis=0)
    E = _standardize(x_mean, x_scale, mask, X)
    F = Y - y_mean

    rank = int(np.linalg.matrix_rank(E)) if E.size else 0
    if n_components > rank:
        raise ValidationError(
            f"{n_components} components requested but the centred predictors have rank {rank}; "
            f"at most {rank} components are attainable")

    p, m = E.shape[1], Y.shape[1]
    W = np.zeros((p, n_components))
    P = np.zeros((p, n_components))
    Q = np.zeros((m, n_components))
    b = np.zeros(n_components)
    for a in range(n_components):
        w, t, q, u = _nipals_component(E, F, a + 1, tol, max_iter)
        tt = float(t @ t)
        p_a = E.T @ t / tt
        b[a] = float(u @ t) / tt
        E = E - np.outer(t, p_a)
        F = F - b[a] * np.outer(t, q)
        W[:, a], P[:, a], Q[:, a] = w, p_a, q

    B_coef = compose_coefficients(W, P, Q, b)
    model = PlsrModel(x_mean, x_scale, y_mean, mask, W, P, Q, b, B_coef, univariate)
    model.fitted = predict_plsr(model, X)
    logger.debug("plsr: %d components, %d predictors kept, %d responses", n_components, p, m)
    return model


def _nipals_component(E, F, index, tol, max_iter):
    """Weights, scores and loadings of one component.

    u starts from the response column with the largest variance. For a single
    response the loop settles in two passes. When several responses have
    nearly equal leading singular values the scores can keep drifting inside
    that subspace; an iterate that ends the pass budget within
    NIPALS_COVARIANCE_SLACK of the maximal covariance is kept, anything else
    is a ConvergenceError.
    """
    cross = E.T @ F
    if not np.any(cross):
        # no covariance left: take the leading X direction, it carries b = 0
        w = _dominant_direction(E)
        t = E @ w
        return w, t, np.eye(F.shape[1])[0], np.zeros(len(t))

    column = int(np.argmax(np.einsum("ij,ij->j", F, F)))
    if not np.any(cross[:, column]):
        column = int(np.argmax(np.linalg.norm(cross, axis=0)))
    u = F[:, column].copy()

    t = t_old = None
    for _ in range(max_iter):
        w = E.T @ u
        w /= np.linalg.norm(w)
        t = E @ w
        q = F.T @ t
        q_norm = np.linalg.norm(q)
        q = q / q_norm if q_norm > 0 else np.eye(F.shape[1])[0]
        u = F @ q
        if t_old is not None and np.linalg.norm(t - t_old) <= tol * np.linalg.norm(t):
            return w, t, q, u
        t_old = t

    if t is not None:
        reached = float(np.sum((F.T @ t) ** 2))
        ceiling = float(np.linalg.norm(cross, 2) ** 2)
        if np.isfinite(reached) and reached >= (1 - settings.NIPALS_COVARIANCE_SLACK) * ceiling:
            logger.debug("component %d: scores still moving after %d passes, covariance at %.6g of maximum",
                         index, max_iter, reached / ceiling)
            return w, t, q, u
    raise ConvergenceError(index, max_iter)


def predict_plsr(model: PlsrModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValidationError(f"expected {model.n_features} predictor columns, got shape {X.shape}")
    Z = _standardize(model.x_mean, model.x_scale, model.mask, X)
    Y = Z @ model.B_coef + model.y_mean
    return Y[:, 0] if model.univariate else Y


def predict_by_scores(model: PlsrModel, X) -> np.ndarray:
    """Prediction through the component recursion instead of ``B_coef``."""
    E = _standardize(model.x_mean, model.x_scale, model.mask, np.asarray(X, dtype=float))
    Y = np.tile(model.y_mean, (len(E), 1))
    for a in range(model.n_components):
        t = E @ model.W[:, a]
        E = E - np.outer(t, model.P[:, a])
        Y = Y + model.b[a] * np.outer(t, model.Q[:, a])
    return Y[:, 0] if model.univariate else Y


def training_scores(model: PlsrModel, X) -> np.ndarray:
    """X scores T of the rows in ``X`` (one column per component)."""
    E = _standardize(model.x_mean, model.x_scale, model.mask, np.asarray(X, dtype=float))
    T = np.zeros((len(E), model.n_components))
    for a in range(model.n_components):
        T[:, a] = E @ model.W[:, a]
        E = E - np.outer(T[:, a], model.P[:, a])
    return T


def attainable_components(X):
    X = np.asarray(X, dtype=float)
    x_mean, x_scale, mask = _prepare(X, True)
    E = _standardize(x_mean, x_scale, mask, X)
    return int(np.linalg.matrix_rank(E)) if E.size else 0


def select_components(X, Y, folds=settings.PLSR_FOLDS,
                      max_components=settings.PLSR_MAX_COMPONENTS) -> ComponentSelection:
    """Pick A by k-fold CV over contiguous row blocks; ties go to the smaller A."""
    X, Y = check_training_data(X, Y, multi_output=True)
    if folds < 2:
        raise ValidationError(f"folds must be >= 2, got {folds}")
    if len(X) < 2 * folds:
        raise ValidationError(f"{len(X)} rows are too few for {folds} folds")
    Y2 = Y.reshape(len(Y), -1)

    ceiling = min(attainable_components(X), len(X) - len(X) // folds - 2)
    if ceiling < 1:
        raise ValidationError("predictors have no variance; no component can be extracted")
    if max_components > ceiling:
        logger.warning("max components %d exceeds attainable %d; capped", max_components, ceiling)
        max_components = ceiling
    candidates = list(range(1, max_components + 1))

    predictions = {a: np.zeros_like(Y2) for a in candidates}
    for train_idx, test_idx in KFold(n_splits=folds, shuffle=False).split(X):
        fold_max = min(max_components, attainable_components(X[train_idx]))
        if fold_max < 1:
            for a in candidates:
                predictions[a][test_idx] = Y2[train_idx].mean(axis=0)
            continue
        full = fit_plsr(X[train_idx], Y2[train_idx], fold_max)
        for a in candidates:
            sub = full.truncate(min(a, fold_max))
            predictions[a][test_idx] = predict_plsr(sub, X[test_idx]).reshape(len(test_idx), -1)

    errors = [float(mean_squared_error(Y2, predictions[a])) for a in candidates]
    chosen = candidates[int(np.argmin(errors))]
    logger.debug("component CV errors %s -> A=%d", errors, chosen)
    return ComponentSelection(candidates, errors, chosen)
