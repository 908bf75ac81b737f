import math

import numpy as np
import pytest

from cslearn.errors import DataError, SingularDesignError
from cslearn.learners import (
    Dataset,
    LearnerSpec,
    OlsLearner,
    LocScaleLearner,
    fit_forest,
    fit_knn,
    fit_lasso,
    fit_learner,
    fit_locscale,
    fit_ols,
    nonconformity_score,
)
from cslearn.simgen import ScenarioConfig, generate

import oracles


def _random_data(rng, n, p, noise=0.5):
    x = rng.standard_normal((n, p))
    beta = rng.standard_normal(p)
    y = 1.0 + x @ beta + noise * rng.standard_normal(n)
    return Dataset(x, y)


class TestDataset:
    def test_shapes_and_subset(self):
        data = Dataset(np.arange(6.0).reshape(3, 2), np.array([1.0, 2, 3]))
        assert data.n == 3 and data.p == 2
        sub = data.subset([0, 2])
        assert sub.n == 2 and sub.y[1] == 3.0

    def test_rejects_bad_input(self):
        with pytest.raises(DataError):
            Dataset(np.ones((3, 2)), np.ones(4))
        with pytest.raises(DataError):
            Dataset(np.ones(3), np.ones(3))
        with pytest.raises(DataError):
            Dataset(np.array([[1.0, np.nan]]), np.array([1.0]))
        with pytest.raises(DataError):
            Dataset(np.ones((2, 2)), np.array([1.0, np.inf]))
        with pytest.raises(DataError):
            Dataset(np.ones((0, 2)), np.ones(0))


class TestSpecValidation:
    def test_bad_kind(self):
        with pytest.raises(DataError):
            LearnerSpec(kind="gbm").validate()

    def test_bad_hyperparameters(self):
        with pytest.raises(DataError):
            LearnerSpec(kind="knn", k=0).validate()
        with pytest.raises(DataError):
            LearnerSpec(kind="forest", n_trees=0).validate()
        with pytest.raises(DataError):
            LearnerSpec(kind="lasso", lambdas=(0.1, 0.2)).validate()
        with pytest.raises(DataError):
            LearnerSpec(kind="lasso", lambdas=()).validate()
        with pytest.raises(DataError):
            LearnerSpec(kind="lasso", num_lambdas=0).validate()
        with pytest.raises(DataError):
            LearnerSpec(kind="locscale", iterations=0).validate()


class TestOls:
    def test_noiseless_exact(self):
        x = np.linspace(0, 1, 10).reshape(-1, 1)
        y = 2.0 + 3.0 * x[:, 0]
        fitted = fit_ols(Dataset(x, y))
        assert np.allclose(fitted.coef_, [2.0, 3.0], atol=1e-10)

    def test_n_le_p_raises(self):
        rng = np.random.default_rng(0)
        with pytest.raises(SingularDesignError):
            fit_ols(Dataset(rng.standard_normal((3, 3)), np.ones(3)))

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(1)
        data = _random_data(rng, 50, 3)
        fitted = fit_ols(data)
        want = oracles.ols_normal_equations(data.x, data.y)
        assert np.allclose(fitted.coef_, want, atol=1e-8)

    def test_rank_deficient_paths(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((20, 2))
        x = np.hstack([x, x[:, :1]])  # duplicated column
        y = x[:, 0] + rng.standard_normal(20)
        data = Dataset(x, y)
        with pytest.raises(SingularDesignError):
            fit_ols(data, allow_pinv=False)
        fitted = fit_ols(data)
        assert fitted.rank_deficient
        assert np.isfinite(fitted.predict(data.x)).all()

    def test_predict_scalar_and_matrix(self):
        rng = np.random.default_rng(3)
        data = _random_data(rng, 30, 2)
        fitted = fit_ols(data)
        one = fitted.predict(data.x[0])
        assert isinstance(one, float)
        assert one == fitted.predict(data.x)[0]


class TestLasso:
    def test_zero_penalty_matches_ols(self):
        rng = np.random.default_rng(4)
        data = _random_data(rng, 80, 3)
        ols = fit_ols(data)
        lasso = fit_lasso(
            data, LearnerSpec(kind="lasso", lambdas=(0.0,))
        )
        got = np.append(lasso.intercept_, lasso.coef_)
        assert np.allclose(got, ols.coef_, atol=1e-6)

    def test_soft_threshold_oracle(self):
        ok, detail = __import__("property_checks").check_lasso_soft_threshold()
        assert ok, detail

    def test_full_shrinkage(self):
        rng = np.random.default_rng(5)
        data = _random_data(rng, 40, 3)
        xs = (data.x - data.x.mean(axis=0)) / data.x.std(axis=0)
        lam_big = float(
            np.abs(xs.T @ (data.y - data.y.mean())).max()
        ) / data.n + 1.0
        fitted = fit_lasso(
            data, LearnerSpec(kind="lasso", lambdas=(lam_big,))
        )
        assert np.all(fitted.coef_ == 0.0)
        assert fitted.intercept_ == pytest.approx(data.y.mean(), abs=1e-12)

    def test_cv_selects_from_grid(self):
        rng = np.random.default_rng(6)
        data = _random_data(rng, 60, 4)
        spec = LearnerSpec(kind="lasso", num_lambdas=8, cv_folds=5)
        fitted = fit_lasso(data, spec, np.random.default_rng(1))
        assert fitted.lambda_ >= 0
        assert np.isfinite(fitted.predict(data.x)).all()

    def test_needs_enough_rows_for_cv(self):
        rng = np.random.default_rng(7)
        data = _random_data(rng, 6, 2)
        with pytest.raises(DataError):
            fit_lasso(data, LearnerSpec(kind="lasso", cv_folds=10))


class TestKnn:
    def test_k_equals_n_is_global_mean(self):
        rng = np.random.default_rng(8)
        data = _random_data(rng, 15, 2)
        fitted = fit_knn(data, LearnerSpec(kind="knn", k=15))
        grid = rng.standard_normal((5, 2)) * 3
        assert np.allclose(fitted.predict(grid), data.y.mean(), atol=1e-12)

    def test_k1_training_row(self):
        rng = np.random.default_rng(9)
        data = _random_data(rng, 12, 3)
        fitted = fit_knn(data, LearnerSpec(kind="knn", k=1))
        for i in (0, 5, 11):
            assert fitted.predict(data.x[i]) == data.y[i]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((10, 1))
        y = rng.standard_normal(10)
        data = Dataset(x, y)
        fitted = fit_knn(data, LearnerSpec(kind="knn", k=3))
        for q in rng.standard_normal((20, 1)):
            want = oracles.knn_brute(x, y, q, 3)
            assert fitted.predict(q) == pytest.approx(want, abs=1e-12)

    def test_distance_ties_take_lowest_row(self):
        # Duplicate covariate rows with different responses.
        x = np.array([[0.0], [0.0], [0.0], [2.0]])
        y = np.array([5.0, 7.0, 9.0, 1.0])
        fitted = fit_knn(Dataset(x, y), LearnerSpec(kind="knn", k=2))
        assert fitted.predict(np.array([0.0])) == pytest.approx((5 + 7) / 2)

    def test_k_bounds(self):
        rng = np.random.default_rng(11)
        data = _random_data(rng, 5, 2)
        with pytest.raises(DataError):
            fit_knn(data, LearnerSpec(kind="knn", k=6))

    def test_predictions_within_response_range(self):
        rng = np.random.default_rng(12)
        data = _random_data(rng, 40, 2)
        fitted = fit_knn(data, LearnerSpec(kind="knn", k=7))
        preds = fitted.predict(rng.standard_normal((100, 2)) * 4)
        assert preds.min() >= data.y.min() - 1e-12
        assert preds.max() <= data.y.max() + 1e-12


class TestForest:
    def test_depth_zero_single_tree_is_bootstrap_mean(self):
        rng = np.random.default_rng(13)
        data = _random_data(rng, 20, 2)
        spec = LearnerSpec(kind="forest", n_trees=1, max_depth=0)
        fitted = fit_forest(data, spec, np.random.default_rng(3))
        want = data.y[fitted.boot_pool_[0]].mean()
        assert fitted.predict(data.x[4]) == pytest.approx(want, rel=1e-12)

    def test_constant_response(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((25, 3))
        data = Dataset(x, np.full(25, 2.5))
        fitted = fit_forest(data, LearnerSpec(kind="forest", n_trees=10))
        assert np.all(fitted.predict(x) == 2.5)

    def test_matches_exhaustive_split_reference_small(self):
        rng = np.random.default_rng(15)
        data = _random_data(rng, 12, 2)
        spec = LearnerSpec(kind="forest", n_trees=5, max_depth=2, min_leaf=2)
        fitted = fit_forest(data, spec, np.random.default_rng(7))
        queries = np.vstack([data.x, rng.standard_normal((10, 2))])
        want = oracles.forest_predict_reference(
            fitted, data.x, data.y, queries
        )
        got = fitted.predict(queries)
        assert np.array_equal(got, want)

    def test_matches_reference_default_depth(self):
        rng = np.random.default_rng(16)
        data = _random_data(rng, 30, 3)
        spec = LearnerSpec(kind="forest", n_trees=8, min_leaf=3)
        fitted = fit_forest(data, spec, np.random.default_rng(11))
        queries = rng.standard_normal((15, 3))
        want = oracles.forest_predict_reference(
            fitted, data.x, data.y, queries
        )
        assert np.array_equal(fitted.predict(queries), want)

    def test_deterministic_given_stream(self):
        rng = np.random.default_rng(17)
        data = _random_data(rng, 25, 2)
        spec = LearnerSpec(kind="forest", n_trees=4)
        a = fit_forest(data, spec, np.random.default_rng(5))
        b = fit_forest(data, spec, np.random.default_rng(5))
        q = rng.standard_normal((6, 2))
        assert np.array_equal(a.predict(q), b.predict(q))

    def test_predictions_within_response_range(self):
        rng = np.random.default_rng(18)
        data = _random_data(rng, 40, 3)
        fitted = fit_forest(
            data, LearnerSpec(kind="forest", n_trees=20),
            np.random.default_rng(9),
        )
        preds = fitted.predict(rng.standard_normal((60, 3)) * 3)
        assert preds.min() >= data.y.min() - 1e-12
        assert preds.max() <= data.y.max() + 1e-12


class TestLocScale:
    def test_homoscedastic_gamma_slopes_near_zero(self):
        data, _ = generate(ScenarioConfig(scenario="S1", n=2000, seed=42))
        fitted = fit_locscale(data, LearnerSpec(kind="locscale"))
        assert np.all(np.abs(fitted.gamma_[1:]) < 0.1)
        assert fitted.gamma_[0] == pytest.approx(math.log(0.75), abs=0.1)

    def test_recovers_s3_scale_coefficients(self):
        data, _ = generate(ScenarioConfig(scenario="S3", n=5000, seed=7))
        fitted = fit_locscale(data, LearnerSpec(kind="locscale"))
        truth = np.array([math.log(0.75), 0.25, 0.08, 0.18, 0.9])
        assert np.all(np.abs(fitted.gamma_ - truth) < 0.1)
        beta_truth = np.array([3.0, 1.5, -1.2, 1.8, 0.0])
        assert np.all(np.abs(fitted.beta_ - beta_truth) < 0.15)

    def test_sample_size_precondition(self):
        rng = np.random.default_rng(19)
        data = _random_data(rng, 8, 3)  # needs n > 2p + 2 = 8
        with pytest.raises(DataError):
            fit_locscale(data, LearnerSpec(kind="locscale"))

    def test_scale_positive(self):
        rng = np.random.default_rng(20)
        data = _random_data(rng, 60, 2)
        fitted = fit_locscale(data, LearnerSpec(kind="locscale"))
        assert np.all(fitted.scale(rng.standard_normal((50, 2)) * 5) > 0)


class TestScores:
    def test_absolute_arithmetic(self):
        learner = OlsLearner(np.array([1.5, 0.0]), False)
        assert nonconformity_score(
            learner, np.array([3.0]), 2.0
        ) == pytest.approx(0.5)
        assert nonconformity_score(learner, np.array([0.0]), 1.5) == 0.0

    def test_standardized_arithmetic(self):
        learner = LocScaleLearner(
            np.array([0.0, 0.0]), np.array([math.log(2.0), 0.0]), False
        )
        assert nonconformity_score(
            learner, np.array([1.0]), -3.0
        ) == pytest.approx(1.5)
        assert nonconformity_score(learner, np.array([1.0]), 0.0) == 0.0

    @pytest.mark.parametrize(
        "kind", ["ols", "lasso", "knn", "forest", "locscale"]
    )
    def test_score_monotone_in_distance_from_center(self, kind):
        # Monotone scores mean the split inclusion region is one interval.
        rng = np.random.default_rng(21)
        data = _random_data(rng, 40, 3)
        spec = LearnerSpec(kind=kind, cv_folds=5, n_trees=10)
        fitted = fit_learner(data, spec, np.random.default_rng(2))
        queries = rng.standard_normal((1000, 3))
        centers = fitted.predict(queries)
        offsets = np.array([0.0, 0.3, 0.8, 1.7, 4.2])
        for sign in (1.0, -1.0):
            scores = np.column_stack([
                nonconformity_score(fitted, queries, centers + sign * d)
                for d in offsets
            ])
            assert np.all(np.diff(scores, axis=1) >= -1e-12)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(22)
        data = _random_data(rng, 30, 2)
        fitted = fit_ols(data)
        ys = rng.standard_normal(5)
        xs = rng.standard_normal((5, 2))
        vec = nonconformity_score(fitted, xs, ys)
        for i in range(5):
            # Matrix and single-row BLAS paths may differ in the last ulp.
            one = nonconformity_score(fitted, xs[i], float(ys[i]))
            assert vec[i] == pytest.approx(one, rel=1e-12)
