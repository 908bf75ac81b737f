"""Split and full conformal prediction intervals for a single learner.

The split path calibrates the score quantile on held-out scores. The full
path refits the learner on the dataset augmented with (x_new, y) for every
candidate y on a response grid and keeps the candidates whose new-point
score is at most the calibration rank of the training scores. For ols and
knn the per-candidate refits are evaluated in a vectorized pass that is
algebraically identical to refitting (the covariates never change across
candidates); forest, lasso and locscale refit literally per candidate,
reusing one RNG stream so fits differ only through the augmented response.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _tree
from .errors import ConfigError, EmptyAcceptedSetError, EmptyScoresError
from .learners import (
    STANDARDIZED,
    Dataset,
    _design,
    _forest_pools,
    _standardize,
    fit_learner,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Interval:
    """Closed interval with extended-real endpoints.

    ``boundary_censored`` and ``contiguous`` carry full-conformal
    diagnostics; split intervals keep the defaults.
    """

    lower: float
    upper: float
    boundary_censored: bool = False
    contiguous: bool = True

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise ConfigError("interval endpoints must not be NaN")
        if self.lower > self.upper:
            raise ConfigError(
                f"interval lower {self.lower} exceeds upper {self.upper}"
            )

    @property
    def unbounded(self):
        return math.isinf(self.lower) or math.isinf(self.upper)

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, y):
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class CalibrationScores:
    """Sorted nonnegative finite score vector."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1:
            raise ConfigError("scores must be 1-D")
        if s.size and (not np.isfinite(s).all() or np.any(s < 0)):
            raise ConfigError("scores must be finite and nonnegative")
        if s.size > 1 and np.any(np.diff(s) < 0):
            raise ConfigError("scores must be sorted nondecreasing")
        object.__setattr__(self, "scores", s)

    @classmethod
    def from_raw(cls, raw):
        return cls(np.sort(np.asarray(raw, dtype=np.float64)))

    def __len__(self):
        return self.scores.size


@dataclass(frozen=True)
class ConformalConfig:
    """Miscoverage level and interval-construction settings.

    ``full_rank_includes_candidate`` switches the full-conformal acceptance
    rule to the classical rank among all n + 1 augmented scores instead of
    the default rank among the n training scores.
    """

    alpha: float = 0.1
    mode: str = "split"
    split_fraction: float = 0.5
    grid_step: float = 1e-4
    grid_margin: float = 0.25
    full_rank_includes_candidate: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in ("split", "full"):
            raise ConfigError(f"mode must be split or full, got {self.mode}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.grid_step <= 0:
            raise ConfigError("grid_step must be positive")
        if self.grid_margin < 0:
            raise ConfigError("grid_margin must be nonnegative")


def _calibration_rank(m, alpha):
    # r = ceil((1 - alpha) * (m + 1)); the 1e-9 nudge keeps products like
    # 0.9 * 10 = 9.000000000000002 from rounding the index up.
    return max(1, math.ceil((1.0 - alpha) * (m + 1) - 1e-9))


def conformal_quantile(scores, alpha):
    """The ceil((1 - alpha) * (m + 1))-th smallest score, +inf if the rank
    exceeds m."""
    if isinstance(scores, CalibrationScores):
        s = scores.scores
    else:
        s = np.sort(np.asarray(scores, dtype=np.float64))
    m = s.size
    if m == 0:
        raise EmptyScoresError("no calibration scores")
    r = _calibration_rank(m, alpha)
    if r > m:
        return math.inf
    return float(s[r - 1])


def split_conformal_interval(learner, cal, x_new, alpha):
    """Invert the score inequality at the calibrated quantile.

    Absolute scores give [yhat - q, yhat + q]; standardized scores give
    [mu - q * sigma(x_new), mu + q * sigma(x_new)]. An infinite quantile
    yields the whole line.
    """
    q = conformal_quantile(cal, alpha)
    if math.isinf(q):
        return Interval(-math.inf, math.inf)
    center = learner.predict(x_new)
    scale = learner.scale(x_new) if learner.score_kind == STANDARDIZED else 1.0
    return Interval(center - q * scale, center + q * scale)


def _candidate_grid(y, config):
    span = float(y.max() - y.min())
    lo = float(y.min()) - config.grid_margin * span
    hi = float(y.max()) + config.grid_margin * span
    count = int(math.floor((hi - lo) / config.grid_step + 1e-9)) + 1
    return lo + config.grid_step * np.arange(count)


def _quantiles_from_scores(train_scores, s_new, r, n, classical):
    # train_scores: (n, g); s_new: (g,). Returns the per-candidate threshold.
    if classical:
        # Rank among all n + 1 augmented scores, candidate included.
        full = np.vstack([train_scores, s_new[None, :]])
        return np.partition(full, r - 1, axis=0)[r - 1]
    if r > n:
        return np.full(s_new.shape, np.inf)
    return np.partition(train_scores, r - 1, axis=0)[r - 1]


def _affine_accept(base, slope, y, grid, r, classical):
    # Predictions for every training row and the new point are affine in the
    # candidate: pred_i(c) = base_i + slope_i * c. Identical to per-candidate
    # refitting, evaluated in chunks over the grid.
    n = y.size
    accepted = np.empty(grid.size, dtype=bool)
    s_new_all = np.empty(grid.size)
    q_all = np.empty(grid.size)
    chunk = max(1, int(4e7 // (n + 1)))
    for lo in range(0, grid.size, chunk):
        g = grid[lo:lo + chunk]
        preds = base[:, None] + slope[:, None] * g[None, :]
        train_scores = np.abs(y[:, None] - preds[:n])
        s_new = np.abs(g - preds[n])
        q = _quantiles_from_scores(train_scores, s_new, r, n, classical)
        accepted[lo:lo + chunk] = s_new <= q
        s_new_all[lo:lo + chunk] = s_new
        q_all[lo:lo + chunk] = q
    return accepted, s_new_all, q_all


def _full_scan_ols(data, x_aug, grid, r, classical):
    design = _design(x_aug)
    hat = design @ np.linalg.pinv(design)
    y_zero = np.append(data.y, 0.0)
    base = hat @ y_zero
    slope = hat[:, data.n]
    return _affine_accept(base, slope, data.y, grid, r, classical)


def _full_scan_knn(data, spec, x_aug, grid, r, classical):
    if spec.k > data.n + 1:
        raise ConfigError(
            f"knn needs k <= n + 1 for augmented refits, got k={spec.k}"
        )
    xs, _, _, _ = _standardize(x_aug)
    n = data.n
    d2 = ((xs[:, None, :] - xs[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")[:, : spec.k]
    y_zero = np.append(data.y, 0.0)
    base = y_zero[order].sum(axis=1) / spec.k
    slope = (order == n).sum(axis=1) / spec.k
    return _affine_accept(base, slope, data.y, grid, r, classical)


def _full_scan_forest(data, spec, x_aug, grid, r, classical, rng_seed):
    # Pools are drawn once from the same stream a literal per-candidate
    # fit_forest call would use, then every candidate regrows the trees.
    rng = np.random.default_rng([int(rng_seed), 1])
    n_aug = data.n + 1
    boot, feat, max_nodes = _forest_pools(n_aug, x_aug.shape[1], spec, rng)
    depth = _tree.UNLIMITED_DEPTH if spec.max_depth is None else spec.max_depth
    shape = (spec.n_trees, max_nodes)
    feature = np.full(shape, -1, dtype=np.int64)
    threshold = np.zeros(shape)
    left = np.zeros(shape, dtype=np.int64)
    right = np.zeros(shape, dtype=np.int64)
    value = np.zeros(shape)
    x_aug = np.ascontiguousarray(x_aug)
    y_aug = np.append(data.y, 0.0)
    n = data.n
    accepted = np.empty(grid.size, dtype=bool)
    s_new_all = np.empty(grid.size)
    q_all = np.empty(grid.size)
    for ci, cand in enumerate(grid):
        y_aug[n] = cand
        _tree.grow_trees(
            x_aug, y_aug, boot, feat, spec.min_leaf, depth,
            feature, threshold, left, right, value
        )
        preds = _tree.forest_predict(
            x_aug, feature, threshold, left, right, value
        )
        scores = np.abs(y_aug - preds)
        s_new_all[ci] = scores[n]
        q_all[ci] = _quantiles_from_scores(
            scores[:n, None], scores[n:], r, n, classical
        )[0]
        accepted[ci] = s_new_all[ci] <= q_all[ci]
    return accepted, s_new_all, q_all


def _full_scan_generic(data, spec, x_aug, grid, r, classical, rng_seed):
    n = data.n
    y_aug = np.append(data.y, 0.0)
    accepted = np.empty(grid.size, dtype=bool)
    s_new_all = np.empty(grid.size)
    q_all = np.empty(grid.size)
    for ci, cand in enumerate(grid):
        y_aug[n] = cand
        # Fresh identically-seeded stream per candidate: the fit varies only
        # through the augmented response.
        fitted = fit_learner(
            Dataset(x_aug, y_aug.copy()), spec,
            np.random.default_rng([int(rng_seed), 1])
        )
        preds = fitted.predict(x_aug)
        scores = np.abs(y_aug - preds)
        if fitted.score_kind == STANDARDIZED:
            scores = scores / fitted.scale(x_aug)
        s_new_all[ci] = scores[n]
        q_all[ci] = _quantiles_from_scores(
            scores[:n, None], scores[n:], r, n, classical
        )[0]
        accepted[ci] = s_new_all[ci] <= q_all[ci]
    return accepted, s_new_all, q_all


def full_conformal_interval(data, spec, x_new, config, rng_seed=0):
    """Bounds of the accepted candidate set from per-candidate refits.

    Candidates span [min(y) - margin * range(y), max(y) + margin * range(y)]
    at ``config.grid_step``. A candidate y is accepted when its score on the
    learner refitted with (x_new, y) appended is at most the
    ceil((1 - alpha) * (n + 1))-th smallest of the n training scores. The
    returned interval is [min accepted, max accepted]; it is flagged
    ``boundary_censored`` when the accepted set touches the grid edge, and
    ``contiguous=False`` (also logged) when the raw accepted set had gaps.

    Raises EmptyAcceptedSetError, carrying the nearest candidate and its
    score gap, when nothing is accepted.
    """
    if config.mode != "full":
        raise ConfigError("full_conformal_interval requires mode='full'")
    spec.validate()
    x_new = np.asarray(x_new, dtype=np.float64).reshape(-1)
    if x_new.size != data.p:
        raise ConfigError(
            f"x_new has {x_new.size} entries, expected {data.p}"
        )
    grid = _candidate_grid(data.y, config)
    x_aug = np.vstack([data.x, x_new[None, :]])
    r = _calibration_rank(data.n, config.alpha)
    classical = config.full_rank_includes_candidate
    if spec.kind == "ols":
        accepted, s_new, q = _full_scan_ols(data, x_aug, grid, r, classical)
    elif spec.kind == "knn":
        accepted, s_new, q = _full_scan_knn(
            data, spec, x_aug, grid, r, classical
        )
    elif spec.kind == "forest":
        accepted, s_new, q = _full_scan_forest(
            data, spec, x_aug, grid, r, classical, rng_seed
        )
    else:
        accepted, s_new, q = _full_scan_generic(
            data, spec, x_aug, grid, r, classical, rng_seed
        )
    idx = np.flatnonzero(accepted)
    if idx.size == 0:
        gaps = s_new - q
        nearest = int(np.argmin(gaps))
        raise EmptyAcceptedSetError(
            f"no candidate accepted for learner '{spec.kind}'; nearest "
            f"candidate {grid[nearest]:.6g} missed by score gap "
            f"{gaps[nearest]:.6g}",
            nearest_candidate=float(grid[nearest]),
            nearest_gap=float(gaps[nearest]),
        )
    contiguous = bool(idx.size == idx[-1] - idx[0] + 1)
    if not contiguous:
        logger.info(
            "full conformal accepted set for '%s' is non-contiguous "
            "(%d accepted over a span of %d candidates); taking bounds",
            spec.kind, idx.size, int(idx[-1] - idx[0] + 1),
        )
    censored = bool(idx[0] == 0 or idx[-1] == grid.size - 1)
    if censored:
        logger.warning(
            "full conformal accepted set for '%s' touches the candidate "
            "grid boundary; interval is censored", spec.kind,
        )
    return Interval(
        float(grid[idx[0]]), float(grid[idx[-1]]),
        boundary_censored=censored, contiguous=contiguous,
    )
