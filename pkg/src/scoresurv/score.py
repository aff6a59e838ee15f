"""Censoring-adapted scoring rules and the grid-averaged training objective.

Two layers live here. :func:`pointwise` evaluates a single integrand for one
record at one time and is written for clarity. The matrix helpers
(:func:`rule_weights`, :func:`grid_terms`, :func:`rcll_terms`) compute the
same quantities for all records and grid points at once, and work equally on
numpy arrays and on tape variables, so training and evaluation share them.

Conventions
-----------
* ``G`` is the censoring survival estimate, always read at the left limit
  and floored (see :func:`scoresurv.core.censoring_weight`).
* A grid point ``tau`` equal to ``t_i`` belongs to the "after" branch.
* RISLL defaults to the orientation printed in the method's table
  (``log F`` before ``t_i``, ``log S`` after); ``orientation="conventional"``
  swaps the two, which is the usual survival log-loss.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from scoresurv import engine
from scoresurv.core import (
    DEFAULT_G_FLOOR,
    StepFunction,
    SurvivalDataset,
    SurvivalRecord,
    TimeGrid,
    censoring_weight,
    kaplan_meier,
    make_grid,
)

LOG_EPS = 1e-12
J_EVAL = 100


class ScoreError(ValueError):
    pass


class ScoringRuleKind(str, enum.Enum):
    ISBS = "isbs"
    SCRPS = "scrps"
    RISBS = "risbs"
    RISLL = "risll"
    RCLL = "rcll"

    @property
    def needs_density(self) -> bool:
        return self is ScoringRuleKind.RCLL

    @property
    def is_log(self) -> bool:
        return self in (ScoringRuleKind.RISLL, ScoringRuleKind.RCLL)


def rule(kind) -> ScoringRuleKind:
    return kind if isinstance(kind, ScoringRuleKind) else ScoringRuleKind(str(kind).lower())


ORIENTATIONS = ("paper", "conventional")


class PredictionAccessor(Protocol):
    def sf(self, t): ...

    def cdf(self, t): ...

    density: Callable | None


@dataclass(frozen=True)
class CurveAccessor:
    """Accessor built from a survival callable (and optionally a density)."""

    survival: Callable
    density: Callable | None = None

    def sf(self, t):
        return self.survival(t)

    def cdf(self, t):
        return 1.0 - np.asarray(self.survival(t))


@dataclass(frozen=True)
class IncidenceAccessor:
    """Cause-specific view: ``F`` is the CIF, ``S = 1 - CIF``."""

    cif: Callable
    density: Callable | None = None

    def sf(self, t):
        return 1.0 - np.asarray(self.cif(t))

    def cdf(self, t):
        return self.cif(t)


def _safe_log(x):
    return math.log(max(x, LOG_EPS))


def pointwise(kind, rec: SurvivalRecord, tau: float, pred, G: StepFunction,
              floor: float = DEFAULT_G_FLOOR, orientation: str = "paper") -> float:
    """Integrand of ``kind`` for one record at time ``tau``."""
    kind = rule(kind)
    t, d = rec.time, rec.status
    if kind is ScoringRuleKind.RCLL:
        if getattr(pred, "density", None) is None:
            raise ScoreError("RCLL needs a density accessor")
        return -_safe_log(d * float(pred.density(t)) + (1 - d) * float(pred.sf(t)))
    F = float(pred.cdf(tau))
    S = float(pred.sf(tau))
    before = tau < t
    g_i = censoring_weight(G, t, floor)
    if kind is ScoringRuleKind.ISBS:
        return F * F / censoring_weight(G, tau, floor) if before else d * S * S / g_i
    if kind is ScoringRuleKind.SCRPS:
        return F * F if before else d * S * S
    if kind is ScoringRuleKind.RISBS:
        return d / g_i * (F * F if before else S * S)
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    early, late = (F, S) if orientation == "paper" else (S, F)
    return -d / g_i * (_safe_log(early) if before else _safe_log(late))


# matrix form -------------------------------------------------------------


@dataclass(frozen=True)
class RuleWeights:
    """Constant weights so that a grid rule reads ``A * h(F) + B * h(S)``."""

    A: np.ndarray
    B: np.ndarray

    def take(self, idx) -> "RuleWeights":
        return RuleWeights(self.A[idx], self.B[idx])


def rule_weights(kind, time, status, times, G: StepFunction,
                 floor: float = DEFAULT_G_FLOOR) -> RuleWeights:
    """Weight matrices (n, J) for the grid rules (everything except RCLL).

    For the Brier-type rules ``A`` multiplies ``F(tau)^2`` and ``B``
    multiplies ``S(tau)^2``; for RISLL they multiply the log terms.
    """
    kind = rule(kind)
    if kind is ScoringRuleKind.RCLL:
        raise ScoreError("RCLL is not a grid rule")
    time = np.asarray(time, dtype=float)[:, None]
    d = np.asarray(status, dtype=float)[:, None]
    times = np.asarray(times, dtype=float)[None, :]
    before = (times < time).astype(float)
    after = 1.0 - before
    g_i = censoring_weight(G, time, floor)
    if kind is ScoringRuleKind.ISBS:
        return RuleWeights(before / censoring_weight(G, times, floor), after * d / g_i)
    if kind is ScoringRuleKind.SCRPS:
        return RuleWeights(before, after * d)
    w = d / g_i
    return RuleWeights(before * w, after * w)


def grid_terms(kind, W: RuleWeights, S, F=None, log_F=None, log_S=None,
               orientation: str = "paper"):
    """Per (record, grid point) score terms from survival matrix ``S``.

    ``S``/``F``/``log_*`` may be arrays or tape variables; logs are computed
    (and floored at ``log(1e-12)``) from ``S`` and ``F`` when not supplied.
    """
    kind = rule(kind)
    if F is None:
        F = 1.0 - S
    if kind is not ScoringRuleKind.RISLL:
        return W.A * F * F + W.B * S * S
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    if log_F is None:
        log_F = engine.log(engine.clamp(F, LOG_EPS, None))
    if log_S is None:
        log_S = engine.log(engine.clamp(S, LOG_EPS, None))
    if orientation == "paper":
        return -(W.A * log_F + W.B * log_S)
    return -(W.A * log_S + W.B * log_F)


def rcll_terms(status, log_f, log_S):
    """``-log(d f(t) + (1 - d) S(t))`` from log-density and log-survival at t."""
    d = np.asarray(status, dtype=float)
    return -(d * log_f + (1.0 - d) * log_S)


def _matrices(preds: Sequence, times):
    S = np.array([np.asarray(p.sf(times), dtype=float) for p in preds]).reshape(len(preds), -1)
    F = np.array([np.asarray(p.cdf(times), dtype=float) for p in preds]).reshape(len(preds), -1)
    return S, F


def objective(kind, data: SurvivalDataset, grid: TimeGrid, preds: Sequence,
              G: StepFunction, floor: float = DEFAULT_G_FLOOR,
              orientation: str = "paper", status=None) -> float:
    """Average score over records and grid points (RCLL: over records only).

    ``status`` overrides ``data.status`` (used for cause-specific scoring).
    """
    kind = rule(kind)
    if len(preds) != data.n:
        raise ScoreError(f"{len(preds)} predictions for {data.n} records")
    status = data.status if status is None else np.asarray(status)
    if kind is ScoringRuleKind.RCLL:
        terms = []
        for p, t, d in zip(preds, data.time, status):
            if getattr(p, "density", None) is None:
                raise ScoreError("RCLL needs a density accessor")
            inner = d * float(p.density(t)) + (1 - d) * float(p.sf(t))
            terms.append(-math.log(max(inner, LOG_EPS)))
        return float(np.mean(terms))
    S, F = _matrices(preds, grid.times)
    W = rule_weights(kind, data.time, status, grid.times, G, floor)
    return float(np.mean(grid_terms(kind, W, S, F, orientation=orientation)))


def cr_objective(kind, data: SurvivalDataset, grid: TimeGrid, cif_preds: Sequence[Sequence],
                 G: StepFunction, floor: float = DEFAULT_G_FLOOR,
                 orientation: str = "paper") -> float:
    """Sum over causes of the objective with cause-specific status.

    ``cif_preds[i][k-1]`` is the accessor for record ``i`` and cause ``k``,
    exposing ``cdf = CIF_k`` and ``sf = 1 - CIF_k``.
    """
    if len(cif_preds) != data.n:
        raise ScoreError(f"{len(cif_preds)} predictions for {data.n} records")
    total = 0.0
    for k in range(1, data.K + 1):
        preds_k = [row[k - 1] for row in cif_preds]
        total += objective(kind, data, grid, preds_k, G, floor, orientation,
                           status=data.cause_status(k))
    return total


def evaluation_grid(data_test: SurvivalDataset, q: float, J_eval: int = J_EVAL,
                    status=None) -> TimeGrid:
    grid = make_grid(data_test, J_eval, q)
    status = data_test.status if status is None else np.asarray(status)
    if not np.any((status == 1) & (data_test.time <= grid.tau_star)):
        raise ScoreError(f"no events at or before tau*={grid.tau_star:g} (q={q})")
    return grid


def evaluate_at_quantile(kind, data_test: SurvivalDataset, preds: Sequence, q: float,
                         G_test: StepFunction | None = None, J_eval: int = J_EVAL,
                         floor: float = DEFAULT_G_FLOOR, orientation: str = "paper",
                         cause: int | None = None) -> float:
    """Score on an evaluation grid ending at the ``q``-quantile of test times.

    ``G_test`` defaults to the censoring Kaplan-Meier of the test data. With
    ``cause`` set, ``preds`` are CIF accessors for that cause and the
    cause-specific status is used.
    """
    status = data_test.status if cause is None else data_test.cause_status(cause)
    grid = evaluation_grid(data_test, q, J_eval, status)
    if G_test is None:
        G_test = kaplan_meier(data_test, "censoring")
    return objective(kind, data_test, grid, preds, G_test, floor, orientation, status=status)
