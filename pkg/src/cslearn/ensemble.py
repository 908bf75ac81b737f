"""Cross-validated risk and stacking weights on the simplex.

Out-of-fold predictions from each learner are regressed onto the response
with non-negative least squares (Lawson-Hanson active set); the solution is
normalized to sum to one. Fold assignment and every per-(fold, learner) fit
are seeded, so parallel and serial runs produce identical matrices.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CslError, DataError, DegenerateFoldError, NumericalError
from .learners import fit_learner


@dataclass(frozen=True)
class WeightVector:
    """Element of the simplex: nonnegative weights summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise DataError("weights must form a nonempty 1-D vector")
        if np.any(w < 0):
            raise DataError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise DataError("weights must sum to one within 1e-12")
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size


@dataclass(frozen=True)
class CvPredictionMatrix:
    """Out-of-fold prediction matrix plus the fold assignment (1-based)."""

    z: np.ndarray
    fold_assignment: np.ndarray


def assign_folds(n, v, rng_seed):
    """Seeded shuffle followed by round-robin fold labels in {1, ..., v}.

    Fold sizes differ by at most one and every fold is nonempty when n >= v.
    """
    rng = np.random.default_rng([int(rng_seed), 7])
    folds = np.empty(n, dtype=np.int64)
    folds[rng.permutation(n)] = np.arange(n) % v + 1
    return folds


def cv_predictions(data, specs, v=5, rng_seed=0):
    """Out-of-fold prediction matrix for a library of learner specs.

    Entry (i, k) is learner k's prediction for row i produced by the fit
    that excluded row i's fold. Each fit consumes the stream keyed by
    (rng_seed, fold, learner), making the matrix independent of execution
    order. Learner failures are re-raised annotated with (fold, learner).
    """
    if v < 2:
        raise DataError(f"fold count must be >= 2, got {v}")
    if data.n < v:
        raise DataError(f"need n >= v, got n={data.n}, v={v}")
    if not specs:
        raise DataError("learner spec list is empty")
    folds = assign_folds(data.n, v, rng_seed)
    z = np.empty((data.n, len(specs)), dtype=np.float64)
    for fold in range(1, v + 1):
        held = folds == fold
        if not held.any():
            raise DegenerateFoldError(f"fold {fold} is empty")
        train = data.subset(~held)
        for k, spec in enumerate(specs):
            rng = np.random.default_rng([int(rng_seed), fold, k])
            try:
                fitted = fit_learner(train, spec, rng)
            except CslError as exc:
                raise type(exc)(
                    f"fold {fold}, learner '{spec.kind}': {exc}"
                ) from exc
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"fold {fold}, learner '{spec.kind}': {exc}"
                ) from exc
            z[held, k] = fitted.predict(data.x[held])
    return CvPredictionMatrix(z, folds)


def _as_z(z):
    return z.z if isinstance(z, CvPredictionMatrix) else np.asarray(z, float)


def _as_w(w):
    return w.w if isinstance(w, WeightVector) else np.asarray(w, float)


def empirical_risk(z, y, w):
    """Mean squared error of the weighted prediction combination."""
    zm = _as_z(z)
    resid = np.asarray(y, float) - zm @ _as_w(w)
    return float(resid @ resid) / zm.shape[0]


def nnls(a, b, max_iter=None):
    """Lawson-Hanson active-set solve of min_{x >= 0} ||a x - b||^2.

    Returns x satisfying the KKT conditions: near-zero gradient on the
    passive (positive) coordinates and nonnegative gradient on the active
    (zero) ones, up to a tolerance far below 1e-8 * ||a'b||.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    if max_iter is None:
        max_iter = 10 * k + 50
    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    scale = float(np.abs(a.T @ b).max(initial=0.0))
    tol = 1e-11 * max(scale, 1e-30)
    for _ in range(max_iter):
        grad = a.T @ (b - a @ x)
        grad[passive] = -np.inf
        j = int(np.argmax(grad))
        if grad[j] <= tol:
            break
        passive[j] = True
        while True:
            s = np.zeros(k)
            cols = np.flatnonzero(passive)
            s[cols] = np.linalg.lstsq(a[:, cols], b, rcond=None)[0]
            if np.all(s[cols] > 0):
                x = s
                break
            # Step back to the boundary and deactivate the zeroed entries.
            bad = passive & (s <= 0)
            ratios = x[bad] / (x[bad] - s[bad])
            alpha = float(ratios.min())
            x = x + alpha * (s - x)
            passive &= x > tol * 1e-3
            x[~passive] = 0.0
    return x


def solve_simplex_weights(z, y):
    """NNLS fit of the response on the prediction columns, normalized to the
    simplex; uniform weights when the NNLS solution is identically zero."""
    zm = _as_z(z)
    b = nnls(zm, np.asarray(y, float))
    total = float(b.sum())
    if total <= 0.0:
        return WeightVector(np.full(zm.shape[1], 1.0 / zm.shape[1]))
    return WeightVector(b / total)


def sl_point_prediction(w, per_learner_predictions):
    """Weighted sum of the per-learner point predictions."""
    preds = np.asarray(per_learner_predictions, dtype=np.float64)
    wv = _as_w(w)
    if preds.shape[-1] != wv.size:
        raise DataError("prediction vector length does not match weights")
    return float(preds @ wv) if preds.ndim == 1 else preds @ wv
