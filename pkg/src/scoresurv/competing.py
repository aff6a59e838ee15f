"""Competing-risks models trained on cause-specific scoring rules.

A :class:`CompetingRisksModel` produces K cumulative incidence curves per
subject, either parametrically (``CIF_k = F(t | theta_k(x))`` with one AFT
head per cause) or from nonnegative per-interval increments
(``CIF_k(tau_j) = clamp(sum_{l<=j} gamma1(g_lk(x)), 0, 1)``).

With ``normalization="rescale"`` the curves are divided by their pointwise
total wherever it exceeds one and then made monotone again by a reverse
running minimum, ``CIF_k(tau_j) <- min_{l>=j} CIF_k(tau_l)``. Taking the
minimum can only lower values, so the total stays at or below one while
every curve becomes nondecreasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scoresurv import dist, engine
from scoresurv.core import (
    DEFAULT_G_FLOOR,
    DataError,
    StepFunction,
    SurvivalDataset,
    SurvivalRecord,
    TimeGrid,
    kaplan_meier,
    make_grid,
)
from scoresurv.engine import FitConfig, FitResult, ParameterStore
from scoresurv.model import MlpTrunk, ModelError, _gamma1, _glorot_init, _interp_rows
from scoresurv.score import IncidenceAccessor, ScoreError, ScoringRuleKind, grid_terms, rule, rule_weights

# dividing by (1 + 2**-50) * total keeps rounding from pushing a sum past 1
_RESCALE_PAD = 1.0 + 2.0 ** -50


def cause_indicator(rec: SurvivalRecord, k: int) -> int:
    return int(rec.status == 1 and rec.cause == k)


def normalize_cifs(cifs: list, mode: str = "rescale") -> list:
    """Apply the sum-to-at-most-one correction to K (n, m) CIF matrices."""
    if mode == "none":
        return list(cifs)
    if mode != "rescale":
        raise ValueError("normalization must be 'rescale' or 'none'")
    total = cifs[0]
    for c in cifs[1:]:
        total = total + c
    v = engine._val(total)
    pad = np.where(v > 1.0, _RESCALE_PAD, 1.0)
    inv = engine.power(engine.maximum(total, 1.0) * pad, -1.0)
    return [engine.reverse_cummin(c * inv, axis=1) for c in cifs]


class CompetingRisksModel:
    def __init__(self, K: int, p: int, variant: str = "parametric", grid: TimeGrid | None = None,
                 spec="lognormal", hidden=(), activation="tanh", heads: str = "joint",
                 sigma_mode: str = "constant", gamma1: str = "logistic",
                 normalization: str = "rescale"):
        if K < 1:
            raise ValueError("K must be >= 1")
        if variant not in ("parametric", "increment"):
            raise ValueError("variant must be 'parametric' or 'increment'")
        if heads not in ("joint", "separate"):
            raise ValueError("heads must be 'joint' or 'separate'")
        if variant == "increment" and grid is None:
            raise ValueError("increment variant needs a grid")
        self.K, self.variant, self.grid = K, variant, grid
        self.spec = dist.spec(spec)
        self.heads, self.sigma_mode = heads, sigma_mode
        self.gamma1 = gamma1
        self._g1, self._g1_inv = _gamma1(gamma1)
        self.normalization = normalization
        self.hidden, self.activation = tuple(hidden), activation
        if variant == "parametric":
            per_cause = 1 if sigma_mode == "constant" else 2
        else:
            per_cause = grid.J
        if heads == "joint":
            self.trunks = [MlpTrunk(p, per_cause * K, self.hidden, activation)]
        else:
            self.trunks = [MlpTrunk(p, per_cause, self.hidden, activation, prefix=f"c{k}_")
                           for k in range(1, K + 1)]
        self.per_cause = per_cause
        shapes = {}
        for tr in self.trunks:
            shapes.update(tr.shapes())
        if variant == "parametric" and sigma_mode == "constant":
            shapes["log_sigma"] = (K,)
        self.params = ParameterStore(shapes, l2=tuple(f"{t.prefix}W_out" for t in self.trunks))
        self.p = p

    def init(self, rng: np.random.Generator, data: SurvivalDataset) -> None:
        for tr in self.trunks:
            _glorot_init(tr, self.params, rng, out_scale=0.1)
        for k in range(1, self.K + 1):
            tr, off = self._head(k)
            name = f"{tr.prefix}b_out"
            b = self.params.get(name).copy()
            if self.variant == "parametric":
                ev = data.cause_status(k) == 1
                logt = np.log(data.time[ev] if ev.any() else data.time)
                b[off] = float(np.mean(logt))
                s0 = np.log(max(float(np.std(logt)), 1e-2))
                if self.sigma_mode == "constant":
                    ls = self.params.get("log_sigma").copy()
                    ls[k - 1] = s0
                    self.params.set("log_sigma", ls)
                else:
                    b[off + 1] = s0
            else:
                aj = _aj_single(data, k)
                inc = np.diff(np.concatenate(([0.0], aj(self.grid.times))))
                b[off:off + self.grid.J] = self._g1_inv(np.maximum(inc, 1e-4))
            self.params.set(name, b)

    def _head(self, k):
        if self.heads == "joint":
            return self.trunks[0], (k - 1) * self.per_cause
        return self.trunks[k - 1], 0

    def raw_cifs(self, w, X, times=None) -> list:
        """Unnormalized CIF matrices, one (n, m) per cause."""
        outs = [tr.forward(self.params, w, X) for tr in self.trunks]
        cifs = []
        for k in range(1, self.K + 1):
            tr, off = self._head(k)
            out = outs[self.trunks.index(tr)]
            if self.variant == "parametric":
                mu = out[:, off]
                if self.sigma_mode == "constant":
                    s = self.params.view(w, "log_sigma")[k - 1]
                    inv = engine.exp(-s)
                else:
                    inv = engine.reshape(engine.exp(-out[:, off + 1]), (-1, 1))
                logt = np.log(np.asarray(times, dtype=float))[None, :]
                z = (logt - engine.reshape(mu, (-1, 1))) * inv
                cifs.append(dist.cdf_z(self.spec, z))
            else:
                inc = self._g1(out[:, off:off + self.grid.J])
                cifs.append(engine.clamp(engine.cumsum(inc, axis=1), 0.0, 1.0))
        return cifs

    def cifs(self, w, X, times=None) -> list:
        if self.variant == "increment":
            times = self.grid.times if times is None else times
            if not np.array_equal(np.asarray(times), self.grid.times):
                raise ModelError("increment CIFs are defined on the model grid")
        return normalize_cifs(self.raw_cifs(w, X, times), self.normalization)

    def cif_matrix(self, X, times) -> np.ndarray:
        """Normalized CIFs at ``times`` as an array (n, K, m)."""
        X = np.asarray(X, dtype=float).reshape(-1, self.p)
        times = np.asarray(times, dtype=float)
        if self.variant == "parametric":
            mats = self.cifs(self.params.values, X, times)
            return np.stack([np.asarray(m) for m in mats], axis=1)
        mats = self.cifs(self.params.values, X)
        knots = np.stack([np.asarray(m) for m in mats], axis=1)
        knots = np.concatenate((np.zeros(knots.shape[:2] + (1,)), knots), axis=2)
        cut = self.grid.cut_points
        out = np.empty(knots.shape[:2] + (times.size,))
        for k in range(self.K):
            out[:, k, :] = _interp_rows(cut, knots[:, k, :], times, "linear")
        return out

    def predict_cif(self, x, grid: TimeGrid | None = None) -> list["CifCurve"]:
        grid = grid or self.grid
        if grid is None:
            raise ValueError("a grid is needed for parametric CIF predictions")
        m = self.cif_matrix(np.asarray(x, dtype=float).reshape(1, -1), grid.times)[0]
        return [CifCurve(grid.cut_points, np.concatenate(([0.0], m[k]))) for k in range(self.K)]

    def accessors(self, X, times) -> list[list[IncidenceAccessor]]:
        """Per-record, per-cause accessors exact at ``times``."""
        times = np.asarray(times, dtype=float)
        M = self.cif_matrix(X, times)
        knots = np.concatenate(([0.0], times))
        return [[IncidenceAccessor(CifCurve(knots, np.concatenate(([0.0], M[i, k]))))
                 for k in range(self.K)] for i in range(M.shape[0])]

    def to_dict(self) -> dict:
        return {
            "family": "competing", "K": self.K, "p": self.p, "variant": self.variant,
            "grid": self.grid.to_dict() if self.grid is not None else None,
            "spec": self.spec.name, "heads": self.heads, "sigma_mode": self.sigma_mode,
            "hidden": list(self.hidden), "activation": self.activation,
            "gamma1": self.gamma1, "normalization": self.normalization,
            "params": self.params.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class CifCurve:
    """Piecewise-linear CIF through knots starting at ``(0, 0)``."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        out = np.interp(np.asarray(t, dtype=float), self.times, self.values)
        return out if out.ndim else float(out)


def _aj_single(data: SurvivalDataset, k: int) -> StepFunction:
    from scoresurv.core import aalen_johansen
    return aalen_johansen(data)[k - 1]


def make_cr_builder(model: CompetingRisksModel, data: SurvivalDataset, kind, grid: TimeGrid,
                    G: StepFunction, floor: float = DEFAULT_G_FLOOR, orientation: str = "paper"):
    kind = rule(kind)
    if kind is ScoringRuleKind.RCLL:
        raise ScoreError("RCLL needs a density accessor, which CIF models do not provide")
    X = data.X
    weights = [rule_weights(kind, data.time, data.cause_status(k), grid.times, G, floor)
               for k in range(1, data.K + 1)]

    def builder(tape, w, idx):
        cifs = model.cifs(w, X[idx], grid.times)
        total = 0.0
        for W, F in zip(weights, cifs):
            terms = grid_terms(kind, W.take(idx), 1.0 - F, F, orientation=orientation)
            total = total + engine.vsum(terms) * (1.0 / terms.shape[0] / terms.shape[1])
        return total

    return builder


@dataclass
class FittedCR:
    model: CompetingRisksModel
    result: FitResult
    rule: ScoringRuleKind


def fit_cr(variant: str, data: SurvivalDataset, kind, grid: TimeGrid | None = None,
           config: FitConfig | None = None, G: StepFunction | None = None,
           floor: float = DEFAULT_G_FLOOR, orientation: str = "paper", J: int = 30,
           cutoff_quantile: float = 0.9, **model_options) -> FittedCR:
    """Minimize the summed cause-specific objective over a joint weight vector."""
    config = config or FitConfig()
    for k in range(1, data.K + 1):
        if not np.any(data.cause_status(k) == 1):
            raise DataError(f"cause {k} has no observed events")
    if grid is None:
        grid = make_grid(data, J, cutoff_quantile)
    if G is None:
        G = kaplan_meier(data, "censoring")
    model = CompetingRisksModel(data.K, data.p, variant, grid, **model_options)
    builder = make_cr_builder(model, data, kind, grid, G, floor, orientation)
    result = engine.fit(builder, data.n, config, model.params,
                        init=lambda rng: model.init(rng, data), stratify=data.status)
    model.params = result.params
    return FittedCR(model, result, rule(kind))


def cr_model_from_dict(d: dict) -> CompetingRisksModel:
    grid = TimeGrid.from_dict(d["grid"]) if d.get("grid") else None
    model = CompetingRisksModel(
        d["K"], d["p"], d["variant"], grid, spec=d["spec"], hidden=tuple(d["hidden"]),
        activation=d["activation"], heads=d["heads"], sigma_mode=d["sigma_mode"],
        gamma1=d["gamma1"], normalization=d["normalization"],
    )
    model.params = ParameterStore.from_dict(d["params"])
    return model
