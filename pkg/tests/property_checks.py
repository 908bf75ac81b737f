"""Exactness property checks shared between the module tests and the
acceptance suite.

Each check returns (ok, detail). Randomness is locally seeded so repeated
runs test identical cases.
"""

import numpy as np

from cslearn.aggregate import (
    aggregate_intersection,
    aggregate_union,
    aggregate_wta,
    weighted_majority_vote,
)
from cslearn.conformal import Interval, conformal_quantile
from cslearn.ensemble import empirical_risk, nnls, solve_simplex_weights
from cslearn.learners import Dataset, LearnerSpec, fit_lasso

import oracles


def _random_weights(rng, k):
    u = rng.random(k) + 1e-3
    return u / u.sum()


def _dyadic_intervals(rng, k, denom=8, span=4):
    out = []
    for _ in range(k):
        a, b = sorted(rng.integers(-span * denom, span * denom + 1, size=2))
        out.append((a / denom, b / denom))
    return out


def check_quantile_oracle(cases=500):
    """conformal_quantile against plain sorting at the exact rank."""
    rng = np.random.default_rng(101)
    alphas = [0.05, 0.1, 0.2, 0.25, 1 / 3, 0.5, 0.9]
    bad = 0
    done = 0
    while done < cases:
        m = int(rng.integers(1, 60))
        if rng.random() < 0.5:
            alpha = float(alphas[rng.integers(len(alphas))])
        else:
            alpha = float(rng.uniform(0.01, 0.99))
        # Ranks within float-guard distance of an integer boundary are the
        # one place the implementations may legitimately disagree.
        if oracles.near_rank_boundary(m, alpha):
            continue
        scores = rng.exponential(size=m)
        if rng.random() < 0.3:
            scores = np.round(scores, 1)  # force ties
        got = conformal_quantile(scores, alpha)
        want = oracles.quantile_by_sorting(scores, alpha)
        if got != want:
            bad += 1
        done += 1
    return bad == 0, f"{cases} cases, {bad} mismatches"


def check_vote_grid(cases=500):
    """Vote set membership equals the dense-grid vote evaluation exactly at
    every grid point (dyadic endpoints, so comparisons are exact)."""
    rng = np.random.default_rng(202)
    bad = 0
    for _ in range(cases):
        k = int(rng.integers(2, 7))
        raw = _dyadic_intervals(rng, k)
        w = _random_weights(rng, k)
        pset = weighted_majority_vote([Interval(a, b) for a, b in raw], w)
        for t in oracles.dyadic_grid(-4.5, 4.5, denom=16):
            want = oracles.vote_value_at(raw, w, t) > 0.5
            if pset.contains(t) != want:
                bad += 1
                break
    return bad == 0, f"{cases} cases, {bad} mismatches"


def check_sandwich(cases=1000):
    """intersection subset of vote subset of union, checked pointwise."""
    rng = np.random.default_rng(303)
    bad = 0
    for _ in range(cases):
        k = int(rng.integers(2, 6))
        raw = _dyadic_intervals(rng, k)
        if rng.random() < 0.2:
            raw[0] = (-np.inf, raw[0][1])
        if rng.random() < 0.2:
            raw[-1] = (raw[-1][0], np.inf)
        ivs = [Interval(a, b) for a, b in raw]
        w = _random_weights(rng, k)
        vote = weighted_majority_vote(ivs, w)
        inter = aggregate_intersection(ivs, w)
        union = aggregate_union(ivs, w)
        for t in oracles.dyadic_grid(-4.5, 4.5, denom=8):
            if inter.contains(t) and not vote.contains(t):
                bad += 1
                break
            if vote.contains(t) and not union.contains(t):
                bad += 1
                break
    return bad == 0, f"{cases} cases, {bad} violations"


def check_dominant(cases=200):
    """Above-half weight: vote returns that learner's interval verbatim and
    agrees with winner-takes-all."""
    rng = np.random.default_rng(404)
    bad = 0
    for _ in range(cases):
        k = int(rng.integers(2, 6))
        raw = _dyadic_intervals(rng, k)
        ivs = [Interval(a, b) for a, b in raw]
        top = int(rng.integers(k))
        w = np.full(k, np.nan)
        w[top] = 0.5 + 0.5 * rng.random() * 0.98 + 0.005
        rest = rng.random(k - 1) + 1e-3
        w[np.arange(k) != top] = rest / rest.sum() * (1.0 - w[top])
        vote = weighted_majority_vote(ivs, w)
        wta = aggregate_wta(ivs, w)
        ok = (
            vote.rule_used == "dominant"
            and len(vote.intervals) == 1
            and vote.intervals[0] == ivs[top]
            and wta.intervals[0] == ivs[top]
        )
        if not ok:
            bad += 1
    return bad == 0, f"{cases} cases, {bad} mismatches"


def check_nnls(kkt_cases=60, risk_cases=40):
    """KKT residuals of the active-set solve, and risk agreement with the
    exact simplex minimizer on well-specified stacking instances."""
    rng = np.random.default_rng(505)
    worst_kkt = 0.0
    for _ in range(kkt_cases):
        m = int(rng.integers(10, 80))
        k = int(rng.integers(1, 7))
        a = rng.standard_normal((m, k))
        if rng.random() < 0.3:
            a[:, 0] = a[:, -1] + 0.01 * rng.standard_normal(m)
        b = rng.standard_normal(m) * rng.uniform(0.5, 3.0)
        x = nnls(a, b)
        if np.any(x < 0):
            return False, "negative nnls coordinate"
        worst_kkt = max(worst_kkt, oracles.kkt_violation(a, b, x))
    if worst_kkt > 1e-8:
        return False, f"kkt violation {worst_kkt:.3g} > 1e-8"

    worst_gap = 0.0
    for _ in range(risk_cases):
        m = int(rng.integers(30, 120))
        k = int(rng.integers(1, 4))
        z = rng.standard_normal((m, k)) + rng.standard_normal((m, 1))
        w_true = _random_weights(rng, k)
        y = z @ w_true + 1e-3 * rng.standard_normal(m)
        w_hat = solve_simplex_weights(z, y)
        risk_hat = empirical_risk(z, y, w_hat)
        risk_best, _ = oracles.simplex_min_risk(z, y)
        worst_gap = max(worst_gap, risk_hat - risk_best)
    if worst_gap > 1e-6:
        return False, f"risk gap {worst_gap:.3g} > 1e-6"
    return True, (f"kkt worst {worst_kkt:.2g} over {kkt_cases} cases; "
                  f"risk gap worst {worst_gap:.2g} over {risk_cases} cases")


def check_lasso_soft_threshold():
    """On an exactly orthonormal (standardized) design the lasso solution is
    the per-coordinate soft threshold of the correlations."""
    # Sign-pattern design: columns have mean 0, population sd 1, and are
    # mutually orthogonal, so standardization is the identity.
    x = np.array([
        [1, 1, 1], [-1, 1, 1], [1, -1, 1], [-1, -1, 1],
        [1, 1, -1], [-1, 1, -1], [1, -1, -1], [-1, -1, -1],
    ], dtype=float)
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(25):
        y = rng.standard_normal(8) * 2.0 + rng.uniform(-1, 1)
        yc = y - y.mean()
        corr = x.T @ yc / 8.0
        lam_max = float(np.abs(corr).max())
        for lam in (0.0, 0.25 * lam_max, 0.6 * lam_max, 1.1 * lam_max):
            fitted = fit_lasso(
                Dataset(x, y), LearnerSpec(kind="lasso", lambdas=(lam,))
            )
            want = np.array([oracles.soft_threshold(c, lam) for c in corr])
            worst = max(worst, float(np.abs(fitted.coef_ - want).max()))
            worst = max(worst, abs(fitted.intercept_ - y.mean()))
    return worst <= 1e-6, f"worst coefficient error {worst:.3g}"


def run_all():
    """Every exactness check, for the timed acceptance criterion."""
    return {
        "quantile_sort_oracle": check_quantile_oracle(),
        "vote_dense_grid": check_vote_grid(),
        "sandwich": check_sandwich(),
        "dominant_shortcut": check_dominant(),
        "nnls_kkt_and_risk": check_nnls(),
        "lasso_soft_threshold": check_lasso_soft_threshold(),
    }
