"""Survival models trained on scoring-rule objectives, plus classical baselines.

Scoring-rule families (all share :func:`fit_scoring`):

* :class:`ParametricSurvivalModel` -- a linear map or MLP emits
  ``(mu, log sigma)`` of an AFT family; the survival curve is the family's
  own survival function, so predictions exist at every time.
* :class:`IncrementSurvivalModel` -- an MLP emits one value per grid
  interval, squashed to a survival decrement in ``[-1, 0]``; the survival
  curve is ``clamp(1 + cumsum(decrements), 0, 1)`` on the grid.
* :class:`CoxScoringModel` -- ``S(t|x) = S0(t) ** exp(x @ beta)`` with the
  baseline built from positive cumulative-hazard increments on the grid.

Baselines: :func:`fit_aft_mle`, :func:`fit_cox_mle` and :func:`km_predictor`.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from scoresurv import dist, engine
from scoresurv.core import (
    DEFAULT_G_FLOOR,
    DataError,
    StepFunction,
    SurvivalDataset,
    TimeGrid,
    kaplan_meier,
    make_grid,
)
from scoresurv.engine import FitConfig, FitResult, ParameterStore
from scoresurv.score import (
    ScoringRuleKind,
    grid_terms,
    rcll_terms,
    rule,
    rule_weights,
)

logger = logging.getLogger(__name__)

ACTIVATIONS = {"tanh": engine.tanh, "relu": engine.relu}


class ModelError(RuntimeError):
    pass


class SeparationError(ModelError):
    pass


# predictions ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurvivalPrediction:
    """Survival curve for one subject.

    ``times``/``values`` are the knots (starting at ``t = 0`` with value 1).
    Between knots the curve is a right-continuous step or a linear
    interpolation; beyond the last knot it stays at the last value. When
    ``curve`` is given (parametric models) it is the exact survival function
    and the knots only record its values on a grid.
    """

    times: np.ndarray
    values: np.ndarray
    interpolation: str = "step"
    curve: Callable | None = None
    density: Callable | None = None

    def __post_init__(self):
        if self.interpolation not in ("step", "linear"):
            raise ValueError("interpolation must be 'step' or 'linear'")

    def sf(self, t):
        if self.curve is not None:
            return self.curve(t)
        t = np.asarray(t, dtype=float)
        if self.interpolation == "linear":
            out = np.interp(t, self.times, self.values)
        else:
            idx = np.searchsorted(self.times, t, side="right") - 1
            out = self.values[np.clip(idx, 0, None)]
        return out if out.ndim else float(out)

    def cdf(self, t):
        return 1.0 - np.asarray(self.sf(t))

    def at_knots(self) -> np.ndarray:
        return np.asarray(self.sf(self.times), dtype=float)


def _interp_rows(times, S_knots, t, interpolation):
    """Evaluate per-row knot curves (n, m) at times ``t`` (k,)."""
    t = np.asarray(t, dtype=float)
    if interpolation == "linear":
        pos = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 1)
        nxt = np.clip(pos + 1, 0, len(times) - 1)
        span = times[nxt] - times[pos]
        frac = np.where(span > 0, (np.minimum(t, times[-1]) - times[pos]) / np.where(span > 0, span, 1), 0.0)
        lo, hi = S_knots[:, pos], S_knots[:, nxt]
        # clipping to the segment keeps rounding from breaking monotonicity
        return np.clip(lo + frac * (hi - lo), np.minimum(lo, hi), np.maximum(lo, hi))
    idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, None)
    return S_knots[:, idx]


# network trunk -------------------------------------------------------------


@dataclass(frozen=True)
class MlpTrunk:
    """Fully connected trunk ``R^p -> R^out``; no hidden layers = linear map."""

    p: int
    out: int
    hidden: tuple[int, ...] = ()
    activation: str = "tanh"
    prefix: str = ""

    def __post_init__(self):
        if any(w < 1 for w in self.hidden) or self.out < 1:
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")

    def shapes(self) -> dict:
        dims = (self.p, *self.hidden)
        pre = self.prefix
        shapes = {}
        for l, (a, b) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            shapes[f"{pre}W{l}"] = (a, b)
            shapes[f"{pre}b{l}"] = (b,)
        shapes[f"{pre}W_out"] = (dims[-1], self.out)
        shapes[f"{pre}b_out"] = (self.out,)
        return shapes

    def weight_names(self) -> list[str]:
        pre = self.prefix
        return [f"{pre}W{l}" for l in range(1, len(self.hidden) + 1)] + [f"{pre}W_out"]

    def forward(self, store: ParameterStore, w, X):
        act = ACTIVATIONS[self.activation]
        pre = self.prefix
        h = X
        for l in range(1, len(self.hidden) + 1):
            h = act(h @ store.view(w, f"{pre}W{l}") + store.view(w, f"{pre}b{l}"))
        return h @ store.view(w, f"{pre}W_out") + store.view(w, f"{pre}b_out")

    def to_dict(self) -> dict:
        return {"p": self.p, "out": self.out, "hidden": list(self.hidden),
                "activation": self.activation, "prefix": self.prefix}


def _glorot_init(trunk: MlpTrunk, store: ParameterStore, rng, out_scale: float = 1.0):
    store.glorot(rng, trunk.weight_names())
    name = f"{trunk.prefix}W_out"
    store.set(name, store.get(name) * out_scale)


# base ------------------------------------------------------------------------


class ScoringModel:
    """Common machinery of models trained through :func:`fit_scoring`."""

    family: str = ""
    extra_shapes: dict = {}

    def __init__(self, trunk: MlpTrunk, grid: TimeGrid | None):
        self.trunk = trunk
        self.grid = grid
        shapes = {**trunk.shapes(), **self.extra_shapes}
        self.params = ParameterStore(shapes, l2=("W_out",))

    @property
    def p(self) -> int:
        return self.trunk.p

    def init(self, rng: np.random.Generator, data: SurvivalDataset) -> None:
        raise NotImplementedError

    def grid_parts(self, w, X, times, need_logs: bool) -> dict:
        raise NotImplementedError

    def rcll_parts(self, w, X, t):
        raise NotImplementedError

    def survival_matrix(self, X, times) -> np.ndarray:
        raise NotImplementedError

    def _check_x(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} features, got {X.shape[1]}")
        return X

    def predict(self, x, grid: TimeGrid | None = None) -> SurvivalPrediction:
        return self.predict_many(np.asarray(x, dtype=float).reshape(1, -1), grid)[0]

    def predict_many(self, X, grid: TimeGrid | None = None) -> list[SurvivalPrediction]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "trunk": self.trunk.to_dict(),
            "grid": self.grid.to_dict() if self.grid is not None else None,
            "params": self.params.to_dict(),
            "options": self.options(),
        }

    def options(self) -> dict:
        return {}


class ParametricSurvivalModel(ScoringModel):
    """AFT head on a trunk: ``theta(x) = (mu(x), log sigma(x))``.

    ``sigma_mode="constant"`` gives a single trainable ``log sigma`` shared by
    all subjects; ``"feature"`` makes it a second trunk output.
    """

    family = "parametric"

    def __init__(self, spec, p: int, hidden=(), activation="tanh", sigma_mode="constant",
                 grid: TimeGrid | None = None):
        self.spec = dist.spec(spec)
        if sigma_mode not in ("constant", "feature"):
            raise ValueError("sigma_mode must be 'constant' or 'feature'")
        self.sigma_mode = sigma_mode
        self.extra_shapes = {"log_sigma": (1,)} if sigma_mode == "constant" else {}
        out = 1 if sigma_mode == "constant" else 2
        super().__init__(MlpTrunk(p, out, tuple(hidden), activation), grid)

    def options(self):
        return {"spec": self.spec.name, "sigma_mode": self.sigma_mode}

    def init(self, rng, data):
        _glorot_init(self.trunk, self.params, rng, out_scale=0.1)
        ev = data.status == 1
        logt = np.log(data.time[ev] if ev.any() else data.time)
        mu0, s0 = float(np.mean(logt)), math.log(max(float(np.std(logt)), 1e-2))
        b = self.params.get("b_out").copy()
        b[0] = mu0
        if self.sigma_mode == "constant":
            self.params.set("log_sigma", [s0])
        else:
            b[1] = s0
        self.params.set("b_out", b)

    def theta(self, w, X):
        """``(mu, log sigma)`` as two length-n arrays (or tape variables)."""
        out = self.trunk.forward(self.params, w, X)
        mu = out[:, 0]
        if self.sigma_mode == "constant":
            s = self.params.view(w, "log_sigma")
        else:
            s = out[:, 1]
        return mu, s

    def theta_values(self, X) -> np.ndarray:
        X = self._check_x(X)
        mu, s = self.theta(self.params.values, X)
        return np.stack(np.broadcast_arrays(mu, s), axis=-1)

    def _z(self, w, X, t_row=None, times=None):
        mu, s = self.theta(w, X)
        inv_sigma = engine.exp(-s)
        if times is not None:
            logt = np.log(np.asarray(times, dtype=float))[None, :]
            return (logt - engine.reshape(mu, (-1, 1))) * engine.reshape(inv_sigma, (-1, 1)), s
        return (np.log(t_row) - mu) * inv_sigma, s

    def grid_parts(self, w, X, times, need_logs):
        z, _ = self._z(w, X, times=times)
        F = dist.cdf_z(self.spec, z)
        parts = {"F": F, "S": 1.0 - F}
        if need_logs:
            parts["log_F"] = dist.log_cdf_z(self.spec, z)
            parts["log_S"] = dist.log_sf_z(self.spec, z)
        return parts

    def rcll_parts(self, w, X, t):
        z, s = self._z(w, X, t_row=t)
        log_f = dist.log_pdf_z(self.spec, z) - s - np.log(t)
        return log_f, dist.log_sf_z(self.spec, z)

    def survival_matrix(self, X, times):
        theta = self.theta_values(X)
        return np.asarray(dist.sf(self.spec, theta[:, None, :], np.asarray(times, float)[None, :]))

    def predict_many(self, X, grid=None):
        theta = self.theta_values(X)
        grid = grid or self.grid
        preds = []
        for th in theta:
            th = th.copy()
            curve = lambda t, th=th: dist.sf(self.spec, th, np.maximum(t, 1e-300))
            dens = lambda t, th=th: dist.pdf(self.spec, th, np.maximum(t, 1e-300))
            knots = grid.cut_points if grid is not None else np.array([0.0])
            vals = np.concatenate(([1.0], np.atleast_1d(curve(knots[1:])))) if knots.size > 1 else np.ones(1)
            preds.append(SurvivalPrediction(knots, vals, "step", curve, dens))
        return preds

    @property
    def coefficients(self) -> np.ndarray:
        """Intercept and slopes of ``mu`` (linear trunk only)."""
        if self.trunk.hidden:
            raise ModelError("coefficients are defined for a linear trunk only")
        return np.concatenate((self.params.get("b_out")[:1], self.params.get("W_out")[:, 0]))

    @property
    def sigma(self) -> float:
        if self.sigma_mode != "constant":
            raise ModelError("sigma is feature dependent")
        return float(np.exp(self.params.get("log_sigma")[0]))


def _gamma1(name):
    if name == "logistic":
        return engine.logistic, lambda a: special.logit(np.clip(a, 1e-4, 1 - 1e-4))
    if name == "clamp":
        return (lambda v: engine.clamp(v, 0.0, 1.0)), (lambda a: np.clip(a, 0.0, 1.0))
    raise ValueError("gamma1 must be 'logistic' or 'clamp'")


class IncrementSurvivalModel(ScoringModel):
    """Distribution-free model on a fixed grid: one decrement per interval."""

    family = "increment"

    def __init__(self, p: int, grid: TimeGrid, hidden=(32, 32), activation="tanh",
                 gamma1="logistic", interpolation="linear"):
        if grid is None:
            raise ValueError("increment model needs a grid")
        self.gamma1 = gamma1
        self._g1, self._g1_inv = _gamma1(gamma1)
        self.interpolation = interpolation
        super().__init__(MlpTrunk(p, grid.J, tuple(hidden), activation), grid)

    def options(self):
        return {"gamma1": self.gamma1, "interpolation": self.interpolation}

    def init(self, rng, data):
        _glorot_init(self.trunk, self.params, rng, out_scale=0.1)
        km = kaplan_meier(data)
        s = np.concatenate(([1.0], km(self.grid.times)))
        self.params.set("b_out", self._g1_inv(-np.diff(s)))

    def decrements(self, w, X):
        return -self._g1(self.trunk.forward(self.params, w, X))

    def grid_survival(self, w, X):
        """``S(tau_j | x)`` for j = 1..J."""
        return engine.clamp(1.0 + engine.cumsum(self.decrements(w, X), axis=1), 0.0, 1.0)

    def grid_parts(self, w, X, times, need_logs):
        S = self.grid_survival(w, X)
        if not np.array_equal(np.asarray(times), self.grid.times):
            raise ModelError("increment model is trained on its own grid")
        return {"S": S, "F": 1.0 - S}

    def rcll_parts(self, w, X, t):
        S = self.grid_survival(w, X)
        n = np.asarray(t).shape[0]
        S_full = engine.concat([np.ones((n, 1)), S], axis=1)
        j = np.asarray(self.grid.interval_index(t))
        J, width = self.grid.J, self.grid.width
        inside = j <= J
        jc = np.clip(j, 1, J)
        s_lo = engine.take_rows(S_full, jc - 1)
        s_hi = engine.take_rows(S_full, jc)
        frac = np.clip((np.asarray(t) - self.grid.cut_points[jc - 1]) / width, 0.0, 1.0)
        frac = np.where(inside, frac, 1.0)
        dens = (s_lo - s_hi) * (inside / width)
        S_t = s_lo * (1.0 - frac) + s_hi * frac
        return (engine.log(engine.clamp(dens, 1e-12, None)),
                engine.log(engine.clamp(S_t, 1e-12, None)))

    def knot_matrix(self, X):
        X = self._check_x(X)
        S = np.asarray(self.grid_survival(self.params.values, X))
        return np.concatenate((np.ones((X.shape[0], 1)), S), axis=1)

    def survival_matrix(self, X, times):
        return _interp_rows(self.grid.cut_points, self.knot_matrix(X), times, self.interpolation)

    def predict_many(self, X, grid=None):
        K = self.knot_matrix(X)
        return [SurvivalPrediction(self.grid.cut_points, row, self.interpolation) for row in K]


class CoxScoringModel(ScoringModel):
    """Proportional hazards trained on a scoring rule.

    ``S(tau_j | x) = exp(-H0(tau_j) * exp(x @ beta))`` where ``H0`` is the
    cumulative sum of positive per-interval increments ``exp(a_l)``.
    """

    family = "cox_sr"

    def __init__(self, p: int, grid: TimeGrid, interpolation="linear"):
        if grid is None:
            raise ValueError("cox_sr model needs a grid")
        self.interpolation = interpolation
        self.extra_shapes = {"log_dH": (grid.J,)}
        super().__init__(MlpTrunk(p, 1, (), "tanh"), grid)
        self.params = ParameterStore({"beta": (p,), "log_dH": (grid.J,)}, l2=("beta",))

    def options(self):
        return {"interpolation": self.interpolation}

    def init(self, rng, data):
        km = kaplan_meier(data)
        H = -np.log(np.clip(km(self.grid.times), 1e-6, None))
        dH = np.maximum(np.diff(np.concatenate(([0.0], H))), 1e-4)
        self.params.set("log_dH", np.log(dH))
        self.params.set("beta", rng.normal(0.0, 0.01, self.p))

    def _eta(self, w, X):
        return X @ self.params.view(w, "beta")

    def cumhaz(self, w):
        return engine.cumsum(engine.exp(self.params.view(w, "log_dH")), axis=0)

    def grid_parts(self, w, X, times, need_logs):
        if not np.array_equal(np.asarray(times), self.grid.times):
            raise ModelError("cox_sr model is trained on its own grid")
        risk = engine.exp(engine.reshape(self._eta(w, X), (-1, 1)))
        log_S = -(engine.reshape(self.cumhaz(w), (1, -1)) * risk)
        S = engine.exp(log_S)
        F = 1.0 - S
        parts = {"S": S, "F": F}
        if need_logs:
            parts["log_S"] = log_S
            parts["log_F"] = engine.log(engine.clamp(F, 1e-12, None))
        return parts

    def rcll_parts(self, w, X, t):
        t = np.asarray(t, dtype=float)
        risk = engine.exp(self._eta(w, X))
        dH = engine.exp(self.params.view(w, "log_dH"))
        H = engine.concat([np.zeros(1), engine.cumsum(dH, axis=0)], axis=0)
        J, width = self.grid.J, self.grid.width
        j = np.asarray(self.grid.interval_index(t))
        inside = j <= J
        jc = np.clip(j, 1, J)
        frac = np.where(inside, np.clip((t - self.grid.cut_points[jc - 1]) / width, 0, 1), 1.0)
        H_t = H[jc - 1] * (1.0 - frac) + H[jc] * frac
        log_S = -(H_t * risk)
        # piecewise-constant hazard: f = h(t) S(t) with h = dH_j / width * risk
        log_h = engine.log(engine.clamp(dH[jc - 1] * (inside / width), 1e-12, None)) + self._eta(w, X)
        return log_h + log_S, log_S

    @property
    def beta(self) -> np.ndarray:
        return self.params.get("beta").copy()

    def knot_matrix(self, X):
        X = self._check_x(X)
        H = np.concatenate(([0.0], np.asarray(self.cumhaz(self.params.values))))
        return np.exp(-np.outer(np.exp(X @ self.beta), H))

    def survival_matrix(self, X, times):
        return _interp_rows(self.grid.cut_points, self.knot_matrix(X), times, self.interpolation)

    def predict_many(self, X, grid=None):
        K = self.knot_matrix(X)
        return [SurvivalPrediction(self.grid.cut_points, row, self.interpolation) for row in K]


# training --------------------------------------------------------------------


def make_builder(model: ScoringModel, data: SurvivalDataset, kind, grid: TimeGrid,
                 G: StepFunction, floor: float = DEFAULT_G_FLOOR, orientation: str = "paper"):
    """Objective closure ``(tape, w, idx) -> mean score over rows idx``."""
    kind = rule(kind)
    X, time, status = data.X, data.time, data.status
    if kind is ScoringRuleKind.RCLL:
        def builder(tape, w, idx):
            log_f, log_S = model.rcll_parts(w, X[idx], time[idx])
            return engine.vsum(rcll_terms(status[idx], log_f, log_S)) * (1.0 / len(idx))
        return builder

    W = rule_weights(kind, time, status, grid.times, G, floor)
    need_logs = kind is ScoringRuleKind.RISLL

    def builder(tape, w, idx):
        parts = model.grid_parts(w, X[idx], grid.times, need_logs)
        terms = grid_terms(kind, W.take(idx), orientation=orientation, **parts)
        return engine.vsum(terms) * (1.0 / terms.shape[0] / terms.shape[1])

    return builder


def build_model(family: str, data: SurvivalDataset, grid: TimeGrid, spec="lognormal",
                hidden=(), activation="tanh", sigma_mode="constant", gamma1="logistic",
                interpolation="linear") -> ScoringModel:
    if family == "parametric":
        return ParametricSurvivalModel(spec, data.p, hidden, activation, sigma_mode, grid)
    if family == "increment":
        return IncrementSurvivalModel(data.p, grid, hidden, activation, gamma1, interpolation)
    if family == "cox_sr":
        return CoxScoringModel(data.p, grid, interpolation)
    raise ValueError(f"unknown model family {family!r}")


@dataclass
class FittedModel:
    model: ScoringModel
    result: FitResult
    rule: ScoringRuleKind

    def predict_many(self, X, grid=None):
        return self.model.predict_many(X, grid)


def fit_scoring(family: str, data: SurvivalDataset, kind, grid: TimeGrid | None = None,
                config: FitConfig | None = None, G: StepFunction | None = None,
                floor: float = DEFAULT_G_FLOOR, orientation: str = "paper",
                J: int = 30, cutoff_quantile: float = 0.9, **model_options) -> FittedModel:
    """Fit a scoring-rule model by minimizing the grid-averaged objective.

    ``G`` defaults to the censoring Kaplan-Meier of ``data``; it and the
    grid are fixed before training.
    """
    kind = rule(kind)
    config = config or FitConfig()
    if data.n_events == 0:
        raise DataError("no events in training data")
    if grid is None:
        grid = make_grid(data, J, cutoff_quantile)
    if G is None:
        G = kaplan_meier(data, "censoring")
    model = build_model(family, data, grid, **model_options)
    builder = make_builder(model, data, kind, grid, G, floor, orientation)
    result = engine.fit(builder, data.n, config, model.params,
                        init=lambda rng: model.init(rng, data), stratify=data.status)
    model.params = result.params
    return FittedModel(model, result, kind)


# maximum likelihood baselines --------------------------------------------------


def aft_negloglik(params: np.ndarray, sp, X, time, status):
    """Mean negative censored log-likelihood and its gradient.

    ``params = (b0, beta_1..beta_p, log sigma)``.
    """
    sp = dist.spec(sp)
    mu = params[0] + X @ params[1:-1]
    theta = np.stack((mu, np.full_like(mu, params[-1])), axis=-1)
    d = status.astype(float)
    ll = d * dist.log_pdf(sp, theta, time) + (1 - d) * np.asarray(
        sp.law.log_sf((np.log(time) - mu) / np.exp(params[-1])))
    g_theta = (d[:, None] * dist.grad_theta(sp, theta, time, "log_pdf")
               + (1 - d)[:, None] * _grad_log_sf_unclamped(sp, theta, time))
    Z = np.column_stack((np.ones(len(time)), X))
    grad = np.concatenate((Z.T @ g_theta[:, 0], [g_theta[:, 1].sum()]))
    n = len(time)
    return -float(ll.sum()) / n, -grad / n


def _grad_log_sf_unclamped(sp, theta, t):
    law = sp.law
    mu, s = theta[..., 0], theta[..., 1]
    z = (np.log(t) - mu) / np.exp(s)
    dz = np.stack((-np.exp(-s), -z), axis=-1)
    return law.dlog_sf(z)[..., None] * dz


def fit_aft_mle(data: SurvivalDataset, spec="lognormal", n_restarts: int = 3) -> ParametricSurvivalModel:
    """Censored maximum likelihood for a linear AFT model with constant sigma."""
    sp = dist.spec(spec)
    if data.n_events == 0:
        raise DataError("AFT MLE needs at least one event")
    if data.n <= data.p + 2:
        raise DataError("AFT MLE needs n > p + 2")
    ev = data.status == 1
    Z = np.column_stack((np.ones(ev.sum()), data.X[ev]))
    coef, *_ = np.linalg.lstsq(Z, np.log(data.time[ev]), rcond=None)
    resid = np.log(data.time[ev]) - Z @ coef
    x0 = np.concatenate((coef, [math.log(max(float(np.std(resid)), 1e-2))]))
    rng = np.random.default_rng(0)
    best = None
    for attempt in range(n_restarts):
        start = x0 if attempt == 0 else x0 + rng.normal(0, 0.1, x0.size)
        res = optimize.minimize(aft_negloglik, start, args=(sp, data.X, data.time, data.status),
                                jac=True, method="BFGS", options={"gtol": 1e-9, "maxiter": 2000})
        if np.all(np.isfinite(res.x)) and (best is None or res.fun < best.fun):
            best = res
        if best is not None and np.linalg.norm(best.jac) < 1e-6:
            break
    if best is None or not np.isfinite(best.fun):
        raise ModelError("AFT likelihood optimization failed")
    model = ParametricSurvivalModel(sp, data.p, (), sigma_mode="constant")
    model.params.set("b_out", best.x[:1])
    model.params.set("W_out", best.x[1:-1].reshape(data.p, 1))
    model.params.set("log_sigma", best.x[-1:])
    return model


@dataclass
class CoxModel:
    """Cox proportional hazards fit: ``S(t|x) = S0(t) ** exp(x @ beta)``."""

    beta: np.ndarray
    baseline: StepFunction
    interpolation: str = "step"
    family: str = "cox_mle"

    @property
    def p(self):
        return self.beta.shape[0]

    def survival_matrix(self, X, times):
        X = np.asarray(X, dtype=float).reshape(-1, self.p)
        S0 = np.asarray(self.baseline(np.asarray(times, dtype=float)))
        return np.power(S0[None, :], np.exp(X @ self.beta)[:, None])

    def predict_many(self, X, grid=None):
        X = np.asarray(X, dtype=float).reshape(-1, self.p)
        knots = np.concatenate(([0.0], self.baseline.knots))
        S0 = np.concatenate(([1.0], self.baseline.values))
        return [SurvivalPrediction(knots, np.power(S0, math.exp(float(x @ self.beta))), "step")
                for x in X]

    def predict(self, x, grid=None):
        return self.predict_many(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def to_dict(self):
        return {"family": self.family, "beta": self.beta.tolist(),
                "baseline": {"knots": self.baseline.knots.tolist(),
                             "values": self.baseline.values.tolist()}}


def cox_partial_loglik(beta, X, time, status):
    """Breslow partial log-likelihood, score vector and information matrix."""
    order = np.argsort(time, kind="stable")
    X, time, status = X[order], time[order], status[order]
    eta = X @ beta
    eta_max = eta.max() if eta.size else 0.0
    r = np.exp(eta - eta_max)
    # reverse cumulative sums give risk-set totals at each sorted position
    s0 = np.cumsum(r[::-1])[::-1]
    s1 = np.cumsum((r[:, None] * X)[::-1], axis=0)[::-1]
    s2 = np.cumsum((r[:, None, None] * X[:, :, None] * X[:, None, :])[::-1], axis=0)[::-1]
    first = np.searchsorted(time, time, side="left")
    ll, score, info = 0.0, np.zeros(X.shape[1]), np.zeros((X.shape[1],) * 2)
    ev = np.flatnonzero(status == 1)
    for i in ev:
        k = first[i]
        ll += eta[i] - eta_max - math.log(s0[k])
        xbar = s1[k] / s0[k]
        score += X[i] - xbar
        info += s2[k] / s0[k] - np.outer(xbar, xbar)
    return ll, score, info


def breslow_baseline(beta, X, time, status) -> StepFunction:
    eta = X @ beta
    r = np.exp(eta)
    ut = np.unique(time[status == 1])
    dH = np.array([np.sum((time == u) & (status == 1)) / r[time >= u].sum() for u in ut])
    return StepFunction(ut, np.exp(-np.cumsum(dH)), 1.0)


def fit_cox_mle(data: SurvivalDataset, max_iter: int = 100, tol: float = 1e-9,
                max_norm: float = 50.0) -> CoxModel:
    """Newton-Raphson on the Breslow partial likelihood."""
    if data.n_events == 0:
        raise DataError("Cox MLE needs at least one event")
    X, time, status = data.X, data.time, data.status
    beta = np.zeros(data.p)
    if data.p:
        ll, score, info = cox_partial_loglik(beta, X, time, status)
        for _ in range(max_iter):
            if np.linalg.matrix_rank(info) < data.p:
                raise SeparationError("singular information matrix (collinear or constant features)")
            step = np.linalg.solve(info, score)
            t = 1.0
            while True:
                cand = beta + t * step
                ll_new, score_new, info_new = cox_partial_loglik(cand, X, time, status)
                if ll_new >= ll - 1e-12 or t < 1e-8:
                    break
                t *= 0.5
            beta, ll, score, info = cand, ll_new, score_new, info_new
            if np.linalg.norm(beta) > max_norm:
                raise SeparationError(f"|beta| exceeded {max_norm}: likely separation")
            if np.max(np.abs(t * step)) < tol:
                break
        else:
            warnings.warn("Cox Newton-Raphson did not converge", RuntimeWarning)
    return CoxModel(beta, breslow_baseline(beta, X, time, status))


@dataclass
class KMPredictor:
    """Feature-blind predictor returning the Kaplan-Meier curve."""

    curve: StepFunction
    p: int = 0
    family: str = "km"

    def survival_matrix(self, X, times):
        X = np.asarray(X, dtype=float)
        n = X.shape[0] if X.ndim == 2 else 1
        return np.tile(np.asarray(self.curve(np.asarray(times, dtype=float))), (n, 1))

    def predict(self, x=None, grid=None) -> SurvivalPrediction:
        knots = np.concatenate(([0.0], self.curve.knots))
        return SurvivalPrediction(knots, np.concatenate(([1.0], self.curve.values)), "step")

    def predict_many(self, X, grid=None):
        X = np.asarray(X, dtype=float)
        n = X.shape[0] if X.ndim == 2 else 1
        pred = self.predict()
        return [pred] * n

    def to_dict(self):
        return {"family": self.family, "knots": self.curve.knots.tolist(),
                "values": self.curve.values.tolist()}


def km_predictor(data: SurvivalDataset) -> KMPredictor:
    return KMPredictor(kaplan_meier(data, "event"), data.p)


# serialization -------------------------------------------------------------------


def model_from_dict(d: dict):
    """Rebuild any model written by a ``to_dict`` method."""
    family = d["family"]
    if family == "km":
        return KMPredictor(StepFunction(np.asarray(d["knots"]), np.asarray(d["values"]), 1.0))
    if family == "cox_mle":
        b = d["baseline"]
        return CoxModel(np.asarray(d["beta"], dtype=float),
                        StepFunction(np.asarray(b["knots"]), np.asarray(b["values"]), 1.0))
    if family == "competing":
        from scoresurv.competing import cr_model_from_dict
        return cr_model_from_dict(d)
    grid = TimeGrid.from_dict(d["grid"]) if d.get("grid") else None
    trunk, opts = d["trunk"], d.get("options", {})
    if family == "parametric":
        model = ParametricSurvivalModel(opts["spec"], trunk["p"], tuple(trunk["hidden"]),
                                        trunk["activation"], opts["sigma_mode"], grid)
    elif family == "increment":
        model = IncrementSurvivalModel(trunk["p"], grid, tuple(trunk["hidden"]), trunk["activation"],
                                       opts["gamma1"], opts["interpolation"])
    elif family == "cox_sr":
        model = CoxScoringModel(trunk["p"], grid, opts["interpolation"])
    else:
        raise ValueError(f"unknown model family {family!r}")
    model.params = ParameterStore.from_dict(d["params"])
    return model
