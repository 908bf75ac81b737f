"""Regression learners and their non-conformity score rules.

Five learner families are provided: ordinary least squares, lasso with a
cross-validated penalty, k-nearest neighbours, a bagged regression forest,
and a Gaussian location-scale model. Each ``fit_*`` function returns a
:class:`FittedLearner` whose ``predict`` is deterministic given the fitted
state; randomized fits (lasso fold assignment, forest resampling) consume an
explicit numpy ``Generator`` so identical streams give identical fits.

Scores come in two kinds: ``absolute`` (|y - yhat|) and ``standardized``
(|y - mu| / sigma, used by the location-scale learner).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _tree
from .errors import DataError, DegenerateFoldError, SingularDesignError

LEARNER_KINDS = ("ols", "lasso", "knn", "forest", "locscale")

ABSOLUTE = "absolute"
STANDARDIZED = "standardized"

# -E[log chi^2_1] = -(digamma(1/2) + log 2); intercept correction for the
# log-squared-residual regression in the location-scale fit.
_LOG_CHI2_1_MEAN = -1.2703628454614782


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix and response vector.

    Parameters
    ----------
    x : ndarray of shape (n, p)
        Covariates; every entry finite.
    y : ndarray of shape (n,)
        Response; every entry finite.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        if x.ndim != 2:
            raise DataError("covariates must be a 2-D array")
        if y.ndim != 1:
            raise DataError("response must be a 1-D array")
        if x.shape[0] != y.shape[0]:
            raise DataError(
                f"row mismatch: x has {x.shape[0]} rows, y has {y.shape[0]}"
            )
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError("need at least one row and one covariate")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise DataError("missing or non-finite entries are not allowed")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def subset(self, rows):
        return Dataset(self.x[rows], self.y[rows])


@dataclass(frozen=True)
class LearnerSpec:
    """Learner kind plus its hyperparameters.

    Only the fields relevant to ``kind`` are read:

    - lasso: ``lambdas`` (explicit strictly-decreasing grid, values >= 0) or
      ``num_lambdas``/``lambda_min_ratio`` for the automatic log-spaced grid,
      and ``cv_folds`` for penalty selection.
    - knn: ``k`` neighbours.
    - forest: ``n_trees``, ``max_depth`` (None = unlimited), ``min_leaf``,
      ``mtry`` (None = ceil(p / 3)).
    - locscale: ``iterations`` alternating rounds.
    """

    kind: str
    k: int = 10
    lambdas: tuple = None
    num_lambdas: int = 50
    lambda_min_ratio: float = 1e-3
    cv_folds: int = 10
    n_trees: int = 100
    max_depth: int = None
    min_leaf: int = 5
    mtry: int = None
    iterations: int = 5

    def validate(self):
        if self.kind not in LEARNER_KINDS:
            raise DataError(f"unknown learner kind '{self.kind}'")
        if self.kind == "knn" and self.k < 1:
            raise DataError("knn neighbour count must be >= 1")
        if self.kind == "lasso":
            if self.lambdas is not None:
                grid = np.asarray(self.lambdas, dtype=np.float64)
                if grid.size == 0:
                    raise DataError("lambda grid must be nonempty")
                if np.any(grid < 0):
                    raise DataError("lambda values must be >= 0")
                if grid.size > 1 and np.any(np.diff(grid) >= 0):
                    raise DataError("lambda grid must be strictly decreasing")
            else:
                if self.num_lambdas < 1:
                    raise DataError("num_lambdas must be >= 1")
                if not 0 < self.lambda_min_ratio < 1:
                    raise DataError("lambda_min_ratio must lie in (0, 1)")
            if self.cv_folds < 2:
                raise DataError("lasso cv_folds must be >= 2")
        if self.kind == "forest":
            if self.n_trees < 1:
                raise DataError("tree count must be >= 1")
            if self.min_leaf < 1:
                raise DataError("min leaf size must be >= 1")
            if self.max_depth is not None and self.max_depth < 0:
                raise DataError("max depth must be >= 0")
            if self.mtry is not None and self.mtry < 1:
                raise DataError("mtry must be >= 1")
        if self.kind == "locscale" and self.iterations < 1:
            raise DataError("locscale iterations must be >= 1")
        return self


def _as_matrix(x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr.reshape(1, -1), True
    if arr.ndim != 2:
        raise DataError("covariate input must be 1-D or 2-D")
    return np.ascontiguousarray(arr), False


def _design(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


class FittedLearner:
    """Base class: a deterministic predictor with an optional scale model."""

    learner_id = "base"
    score_kind = ABSOLUTE

    def _predict(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def _scale(self, x):
        return np.ones(x.shape[0])

    def predict(self, x):
        """Point prediction; scalar for a single covariate vector."""
        mat, single = _as_matrix(x)
        out = self._predict(mat)
        return float(out[0]) if single else out

    def scale(self, x):
        """Scale prediction sigma-hat(x); identically 1 for absolute-score
        learners."""
        mat, single = _as_matrix(x)
        out = self._scale(mat)
        return float(out[0]) if single else out


class OlsLearner(FittedLearner):
    learner_id = "ols"

    def __init__(self, coef, rank_deficient):
        self.coef_ = coef
        self.rank_deficient = rank_deficient

    def _predict(self, x):
        return _design(x) @ self.coef_


def fit_ols(data, allow_pinv=True):
    """Least-squares fit with an intercept.

    Parameters
    ----------
    data : Dataset
    allow_pinv : bool
        When the design (intercept plus covariates) is rank-deficient, use
        the minimum-norm pseudo-inverse solution instead of raising.

    Raises
    ------
    SingularDesignError
        If n <= p, or the design is rank-deficient and ``allow_pinv`` is
        False.
    """
    if data.n <= data.p:
        raise SingularDesignError(
            f"ols needs n > p, got n={data.n}, p={data.p}"
        )
    design = _design(data.x)
    coef, _, rank, _ = np.linalg.lstsq(design, data.y, rcond=None)
    deficient = rank < design.shape[1]
    if deficient and not allow_pinv:
        raise SingularDesignError(
            f"design rank {rank} < {design.shape[1]} and pseudo-inverse "
            "fallback disabled"
        )
    return OlsLearner(coef, deficient)


def _standardize(x):
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    return (x - mean) / safe, mean, sd, safe


class LassoLearner(FittedLearner):
    learner_id = "lasso"

    def __init__(self, intercept, coef, lam):
        self.intercept_ = intercept
        self.coef_ = coef
        self.lambda_ = lam

    def _predict(self, x):
        return self.intercept_ + x @ self.coef_


def _lasso_grid(xs, yc, colsq, spec):
    if spec.lambdas is not None:
        return np.asarray(spec.lambdas, dtype=np.float64)
    lam_max = 0.0
    for j in range(xs.shape[1]):
        if colsq[j] > 0:
            lam_max = max(lam_max, abs(xs[:, j] @ yc) / xs.shape[0])
    if lam_max <= 0 or spec.num_lambdas == 1:
        return np.array([lam_max])
    return lam_max * np.logspace(
        0.0, math.log10(spec.lambda_min_ratio), spec.num_lambdas
    )


def _lasso_solve(x, y, lambdas):
    # Returns per-lambda (intercept, slopes) on the original covariate scale.
    xs, mean, sd, safe = _standardize(x)
    colsq = np.where(sd > 0, 1.0, 0.0)
    ybar = y.mean()
    beta = _tree.lasso_path(
        np.ascontiguousarray(xs), y - ybar, colsq, lambdas, 1e-7, 10_000
    )
    slopes = beta / safe
    intercepts = ybar - slopes @ mean
    return intercepts, slopes


def fit_lasso(data, spec, rng=None):
    """Lasso on standardized covariates with a CV-selected penalty.

    The penalty grid is built from the full data (50 log-spaced values from
    lambda_max down to 1e-3 * lambda_max by default). When the grid has more
    than one value, the penalty minimizing the ``spec.cv_folds``-fold
    out-of-fold squared error is selected (ties go to the larger penalty)
    and the model is refitted on all rows. Fold assignment is a seeded
    shuffle of ``rng`` (fresh deterministic stream when omitted).
    """
    spec.validate()
    xs_full, _, _, _ = _standardize(data.x)
    colsq_full = np.where(data.x.std(axis=0) > 0, 1.0, 0.0)
    grid = _lasso_grid(xs_full, data.y - data.y.mean(), colsq_full, spec)
    if grid.size > 1:
        if data.n < spec.cv_folds:
            raise DataError(
                f"lasso needs n >= cv_folds, got n={data.n}, "
                f"cv_folds={spec.cv_folds}"
            )
        if rng is None:
            rng = np.random.default_rng(0)
        folds = np.empty(data.n, dtype=np.int64)
        folds[rng.permutation(data.n)] = np.arange(data.n) % spec.cv_folds
        sq_err = np.zeros(grid.size)
        for v in range(spec.cv_folds):
            held = folds == v
            if not held.any() or held.all():
                raise DegenerateFoldError(f"lasso CV fold {v} is degenerate")
            icpts, slopes = _lasso_solve(
                data.x[~held], data.y[~held], grid
            )
            preds = data.x[held] @ slopes.T + icpts
            sq_err += ((data.y[held, None] - preds) ** 2).sum(axis=0)
        pick = int(np.argmin(sq_err))
    else:
        pick = 0
    icpts, slopes = _lasso_solve(data.x, data.y, grid)
    return LassoLearner(icpts[pick], slopes[pick], float(grid[pick]))


class KnnLearner(FittedLearner):
    learner_id = "knn"

    def __init__(self, xs, y, k, mean, safe_sd):
        self.xs_ = xs
        self.y_ = y
        self.k = k
        self.mean_ = mean
        self.safe_sd_ = safe_sd

    def _predict(self, x):
        q = (x - self.mean_) / self.safe_sd_
        out = np.empty(x.shape[0])
        # Chunked so the (chunk, n, p) difference tensor stays small.
        chunk = max(1, int(2e7 / max(1, self.xs_.shape[0] * self.xs_.shape[1])))
        for lo in range(0, q.shape[0], chunk):
            block = q[lo:lo + chunk]
            d2 = ((block[:, None, :] - self.xs_[None, :, :]) ** 2).sum(axis=2)
            # Stable argsort breaks distance ties by lowest training row.
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[lo:lo + chunk] = self.y_[order].mean(axis=1)
        return out


def fit_knn(data, spec):
    """k-nearest-neighbour mean on covariates standardized by the training
    mean and standard deviation; Euclidean distance, distance ties broken by
    the lowest training row index."""
    spec.validate()
    if not 1 <= spec.k <= data.n:
        raise DataError(f"knn needs 1 <= k <= n, got k={spec.k}, n={data.n}")
    xs, mean, sd, safe = _standardize(data.x)
    return KnnLearner(xs, data.y, spec.k, mean, safe)


class ForestLearner(FittedLearner):
    learner_id = "forest"

    def __init__(self, arrays, boot_pool, feat_pool, min_leaf, max_depth):
        (self.feature_, self.threshold_, self.left_, self.right_,
         self.value_, self.node_counts_) = arrays
        self.boot_pool_ = boot_pool
        self.feat_pool_ = feat_pool
        self.min_leaf = min_leaf
        self.max_depth = max_depth

    def _predict(self, x):
        return _tree.forest_predict(
            x, self.feature_, self.threshold_, self.left_, self.right_,
            self.value_
        )


def _forest_pools(n, p, spec, rng):
    mtry = spec.mtry if spec.mtry is not None else math.ceil(p / 3)
    mtry = min(mtry, p)
    max_nodes = _tree.max_nodes_for(n, spec.min_leaf)
    boot = rng.integers(0, n, size=(spec.n_trees, n)).astype(np.int64)
    # First mtry entries of a uniform permutation per node slot.
    u = rng.random((spec.n_trees, max_nodes, p))
    feat = np.ascontiguousarray(np.argsort(u, axis=-1)[..., :mtry])
    return boot, feat, max_nodes


def fit_forest(data, spec, rng=None):
    """Bagged regression trees with variance-reduction splits.

    Each tree is grown on a bootstrap resample over a random feature subset
    per node (``mtry`` defaults to ceil(p / 3)); splits must leave at least
    ``min_leaf`` rows on each side. All randomness (bootstrap indices and
    per-node feature subsets) is pre-drawn from ``rng`` into pools stored on
    the returned learner, so the fit is a pure function of the pools.
    """
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(0)
    boot, feat, max_nodes = _forest_pools(data.n, data.p, spec, rng)
    depth = _tree.UNLIMITED_DEPTH if spec.max_depth is None else spec.max_depth
    shape = (spec.n_trees, max_nodes)
    feature = np.full(shape, -1, dtype=np.int64)
    threshold = np.zeros(shape)
    left = np.zeros(shape, dtype=np.int64)
    right = np.zeros(shape, dtype=np.int64)
    value = np.zeros(shape)
    counts = _tree.grow_trees(
        data.x, data.y, boot, feat, spec.min_leaf, depth,
        feature, threshold, left, right, value
    )
    arrays = (feature, threshold, left, right, value, counts)
    return ForestLearner(arrays, boot, feat, spec.min_leaf, spec.max_depth)


class LocScaleLearner(FittedLearner):
    learner_id = "locscale"
    score_kind = STANDARDIZED

    def __init__(self, beta, gamma, scale_clamped):
        self.beta_ = beta
        self.gamma_ = gamma
        self.scale_clamped = scale_clamped

    def _predict(self, x):
        return _design(x) @ self.beta_

    def _scale(self, x):
        eta = np.clip(_design(x) @ self.gamma_, -30.0, 30.0)
        return np.maximum(np.exp(eta), 1e-8)


def fit_locscale(data, spec):
    """Gaussian location-scale fit: mu(x) = x'beta, log sigma(x) = x'gamma.

    Alternates ``spec.iterations`` rounds of (1) regressing the log squared
    residuals on the design to update gamma (intercept corrected by
    E[log chi^2_1]) and (2) weighted least squares with weights 1 / sigma^2
    to update beta. Scale predictions are clamped at 1e-8; a fit that hits
    the clamp is flagged via ``scale_clamped``.
    """
    spec.validate()
    if data.n <= 2 * data.p + 2:
        raise DataError(
            f"locscale needs n > 2p + 2, got n={data.n}, p={data.p}"
        )
    design = _design(data.x)
    beta, _, _, _ = np.linalg.lstsq(design, data.y, rcond=None)
    gamma = np.zeros(design.shape[1])
    clamped = False
    for _ in range(spec.iterations):
        resid = data.y - design @ beta
        z = np.log(resid * resid + 1e-300)
        a, _, _, _ = np.linalg.lstsq(design, z, rcond=None)
        # E[log r^2] = 2 x'gamma + E[log chi^2_1], so the intercept of the
        # log squared residual regression overshoots by that mean.
        gamma = a / 2.0
        gamma[0] -= _LOG_CHI2_1_MEAN / 2.0
        sigma = np.exp(np.clip(design @ gamma, -30.0, 30.0))
        if np.any(sigma < 1e-8):
            clamped = True
            sigma = np.maximum(sigma, 1e-8)
        w = 1.0 / sigma
        beta, _, _, _ = np.linalg.lstsq(
            design * w[:, None], data.y * w, rcond=None
        )
    return LocScaleLearner(beta, gamma, clamped)


_FITTERS = {
    "ols": lambda data, spec, rng: fit_ols(data),
    "lasso": lambda data, spec, rng: fit_lasso(data, spec, rng),
    "knn": lambda data, spec, rng: fit_knn(data, spec),
    "forest": lambda data, spec, rng: fit_forest(data, spec, rng),
    "locscale": lambda data, spec, rng: fit_locscale(data, spec),
}


def fit_learner(data, spec, rng=None):
    """Dispatch to the fitter for ``spec.kind``."""
    spec.validate()
    return _FITTERS[spec.kind](data, spec, rng)


def nonconformity_score(learner, x, y):
    """Score of (x, y) under the fitted learner.

    Absolute kind: |y - yhat(x)|. Standardized kind: |y - mu(x)| / sigma(x).
    Vectorized over rows when ``x`` is a matrix and ``y`` a vector.
    """
    center = learner.predict(x)
    if learner.score_kind == STANDARDIZED:
        return np.abs(np.asarray(y) - center) / learner.scale(x)
    return np.abs(np.asarray(y) - center)
