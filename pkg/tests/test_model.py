import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from scoresurv import engine
from scoresurv.core import DataError, SurvivalDataset, TimeGrid, kaplan_meier, make_grid
from scoresurv.engine import FitConfig, Tape
from scoresurv.lab.simulate import DgpConfig, simulate_aft
from scoresurv.model import (
    CoxScoringModel,
    IncrementSurvivalModel,
    ParametricSurvivalModel,
    SeparationError,
    SurvivalPrediction,
    aft_negloglik,
    cox_partial_loglik,
    fit_aft_mle,
    fit_cox_mle,
    fit_scoring,
    km_predictor,
    make_builder,
    model_from_dict,
)

GRID = TimeGrid.uniform(10.0, 20)
FULL_BATCH = FitConfig(learning_rate=0.02, batch_size=5000, max_epochs=3000,
                       validation_fraction=0.0, patience=20, tol=1e-7)


@pytest.fixture(scope="module")
def aft_data():
    return simulate_aft(DgpConfig(family="lognormal", n=1500, seed=11))


class TestParametric:
    def test_intercept_only_median(self):
        m = ParametricSurvivalModel("lognormal", 2, grid=GRID)
        m.params.set("b_out", [0.0])
        m.params.set("log_sigma", [0.0])
        assert m.predict(np.array([0.3, -1.0])).sf(1.0) == pytest.approx(0.5)

    def test_grid_independence(self):
        m = ParametricSurvivalModel("weibull", 2, hidden=(4,), grid=GRID)
        m.init(np.random.default_rng(0), SurvivalDataset([1.0, 2.0], [1, 1], None, np.ones((2, 2))))
        a = m.predict(np.ones(2), TimeGrid.uniform(8.0, 4))
        b = m.predict(np.ones(2), TimeGrid.uniform(8.0, 16))
        assert abs(a.sf(4.0) - b.sf(4.0)) <= 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_survival_nonincreasing(self, seed):
        r = np.random.default_rng(seed)
        m = ParametricSurvivalModel("loglogistic", 3, hidden=(5,), sigma_mode="feature", grid=GRID)
        m.params.values = r.normal(size=m.params.size)
        S = m.survival_matrix(r.normal(size=(4, 3)), np.linspace(0.01, 20, 100))
        assert np.all(np.diff(S, axis=1) <= 0) and np.all((S >= 0) & (S <= 1))

    def test_wrong_feature_count(self):
        with pytest.raises(ValueError):
            ParametricSurvivalModel("lognormal", 2, grid=GRID).predict(np.ones(3))


class TestIncrement:
    def _model(self, gamma1="logistic"):
        return IncrementSurvivalModel(1, TimeGrid.uniform(4.0, 4), hidden=(), gamma1=gamma1)

    def test_large_negative_outputs_keep_survival_one(self):
        m = self._model()
        m.params.set("b_out", np.full(4, -40.0))
        np.testing.assert_array_equal(m.knot_matrix(np.zeros((1, 1)))[0], np.ones(5))

    def test_full_drop_stays_zero(self):
        m = self._model("clamp")
        m.params.set("b_out", [1.0, 0.3, 0.3, 0.3])
        np.testing.assert_array_equal(m.knot_matrix(np.zeros((1, 1)))[0], [1, 0, 0, 0, 0])

    def test_linear_midpoint_and_knots(self):
        m = self._model()
        m.params.set("b_out", [-1.0, 0.0, -2.0, 0.5])
        pred = m.predict(np.zeros(1))
        S = pred.values
        assert pred.sf(1.5) == pytest.approx((S[1] + S[2]) / 2)
        np.testing.assert_allclose(pred.at_knots(), S)
        assert pred.sf(100.0) == S[-1]

    def test_zero_feature_model_close_to_km(self):
        data = simulate_aft(DgpConfig(n=1500, seed=3))
        data0 = SurvivalDataset(data.time, data.status, None, np.zeros((data.n, 0)))
        grid = make_grid(data0, 20)
        f = fit_scoring("increment", data0, "risbs", grid=grid, hidden=(),
                        config=FitConfig(learning_rate=0.05, batch_size=5000, max_epochs=1500,
                                         validation_fraction=0.0, patience=30, tol=1e-8))
        S = f.model.knot_matrix(np.zeros((1, 0)))[0, 1:]
        km = kaplan_meier(data0)(grid.times)
        assert np.max(np.abs(S - km)) <= 0.05


class TestCoxScoring:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_curves_never_cross(self, seed):
        r = np.random.default_rng(seed)
        m = CoxScoringModel(2, GRID)
        m.params.values = r.normal(scale=0.5, size=m.params.size)
        S = m.knot_matrix(r.normal(size=(2, 2)))
        diff = S[0, 1:] - S[1, 1:]
        assert np.all(diff >= -1e-15) or np.all(diff <= 1e-15)


class TestMle:
    def test_uncensored_matches_least_squares(self):
        r = np.random.default_rng(0)
        X = r.normal(size=(300, 2))
        logt = 1.0 + X @ [0.5, -0.3] + 0.4 * r.normal(size=300)
        data = SurvivalDataset(np.exp(logt), np.ones(300, int), None, X)
        m = fit_aft_mle(data, "lognormal")
        ols = np.linalg.lstsq(np.column_stack((np.ones(300), X)), logt, rcond=None)[0]
        np.testing.assert_allclose(m.coefficients, ols, atol=1e-3)

    def test_recovers_truth(self, aft_data):
        m = fit_aft_mle(aft_data, "lognormal")
        np.testing.assert_allclose(m.coefficients, [2, 0.5, 0.2, 0], atol=0.05)
        assert m.sigma == pytest.approx(0.4, abs=0.03)

    def test_negloglik_gradient(self, aft_data):
        x0 = np.array([1.8, 0.4, 0.1, 0.1, math.log(0.5)])
        for fam in ("weibull", "lognormal", "loglogistic"):
            f = lambda x: aft_negloglik(x, fam, aft_data.X, aft_data.time, aft_data.status)[0]
            g = aft_negloglik(x0, fam, aft_data.X, aft_data.time, aft_data.status)[1]
            np.testing.assert_allclose(g, optimize.approx_fprime(x0, f, 1e-7), rtol=1e-4, atol=1e-6)

    def test_all_censored_error(self):
        data = SurvivalDataset([1.0, 2.0, 3.0, 4.0, 5.0], [0] * 5, None, np.zeros((5, 1)))
        with pytest.raises(DataError):
            fit_aft_mle(data)

    def test_rcll_gradient_vanishes_at_mle(self, aft_data):
        m = fit_aft_mle(aft_data, "lognormal")
        builder = make_builder(m, aft_data, "rcll", GRID, kaplan_meier(aft_data, "censoring"))
        tape = Tape()
        w = tape.watch(m.params)
        tape.output = builder(tape, w, np.arange(aft_data.n))
        assert np.linalg.norm(engine.grad(tape, m.params)) <= 1e-3


class TestCox:
    def test_binary_covariate_brute_force(self):
        # events at 1 (x=1), 2 (x=0), 3 (x=1), 4 (x=0), no censoring
        X = np.array([[1.0], [0.0], [1.0], [0.0]])
        data = SurvivalDataset([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1], None, X)
        m = fit_cox_mle(data)
        grid = np.linspace(-5, 5, 200_001)
        ll = [cox_partial_loglik(np.array([b]), X, data.time, data.status)[0] for b in grid[::100]]
        b0 = grid[::100][int(np.argmax(ll))]
        fine = np.linspace(b0 - 0.01, b0 + 0.01, 2001)
        ll = [cox_partial_loglik(np.array([b]), X, data.time, data.status)[0] for b in fine]
        assert m.beta[0] == pytest.approx(fine[int(np.argmax(ll))], abs=2e-5)

    def test_weibull_ph_coefficients(self):
        data = simulate_aft(DgpConfig(family="weibull", n=1500, seed=2))
        m = fit_cox_mle(data)
        np.testing.assert_allclose(m.beta, [-1.25, -0.5, 0.0], atol=0.12)

    def test_duplicated_column(self):
        r = np.random.default_rng(0)
        x = r.normal(size=(50, 1))
        data = SurvivalDataset(r.exponential(size=50) + 0.01, np.ones(50, int), None, np.hstack((x, x)))
        with pytest.raises(SeparationError):
            fit_cox_mle(data)

    def test_no_covariates(self):
        data = SurvivalDataset([1.0, 2.0, 3.0], [1, 0, 1], None, np.zeros((3, 0)))
        m = fit_cox_mle(data)
        vals = m.baseline.values
        assert m.beta.size == 0 and np.all(np.diff(vals) <= 0)


class TestKMPredictor:
    def test_feature_blind(self):
        data = SurvivalDataset([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1], None, np.arange(4.0).reshape(4, 1))
        km = km_predictor(data)
        a, b = km.predict_many(np.array([[0.0], [9.0]]))
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.values, [1.0, 0.75, 0.5, 0.25, 0.0])


class TestFitScoring:
    def test_rcll_close_to_truth(self, aft_data):
        f = fit_scoring("parametric", aft_data, "rcll", config=FULL_BATCH, spec="lognormal")
        np.testing.assert_allclose(f.model.coefficients, [2, 0.5, 0.2, 0], atol=0.1)
        assert f.model.sigma == pytest.approx(0.4, abs=0.05)

    def test_objective_decreases(self, aft_data):
        f = fit_scoring("increment", aft_data, "risbs", hidden=(8,),
                        config=FitConfig(max_epochs=5, seed=1))
        tr = f.result.trace
        assert min(r.val_objective for r in tr) < tr[0].val_objective

    def test_no_events(self):
        data = SurvivalDataset([1.0, 2.0], [0, 0], None, np.zeros((2, 1)))
        with pytest.raises(DataError):
            fit_scoring("parametric", data, "risbs")

    def test_unknown_family(self, aft_data):
        with pytest.raises(ValueError):
            fit_scoring("forest", aft_data, "risbs")


@pytest.mark.parametrize("family,opts", [
    ("parametric", {"hidden": (3,), "sigma_mode": "feature", "spec": "weibull"}),
    ("increment", {"hidden": (3,)}),
    ("cox_sr", {}),
])
def test_serialization_roundtrip(aft_data, family, opts):
    f = fit_scoring(family, aft_data.subset(np.arange(200)), "risbs",
                    config=FitConfig(max_epochs=2), **opts)
    back = model_from_dict(f.model.to_dict())
    X, t = aft_data.X[:5], np.linspace(0.5, 12, 7)
    np.testing.assert_array_equal(back.survival_matrix(X, t), f.model.survival_matrix(X, t))


def test_baseline_roundtrip(aft_data):
    for m in (fit_cox_mle(aft_data), km_predictor(aft_data)):
        back = model_from_dict(m.to_dict())
        X, t = aft_data.X[:5], np.linspace(0.5, 12, 7)
        np.testing.assert_array_equal(back.survival_matrix(X, t), m.survival_matrix(X, t))


def test_prediction_validation():
    with pytest.raises(ValueError):
        SurvivalPrediction(np.array([0.0, 1.0]), np.array([1.0, 0.5]), "cubic")
