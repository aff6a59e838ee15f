"""Survival data containers, time grids and nonparametric estimators.

Contains the dataset type consumed by every other module, CSV ingestion,
equidistant time grids, the product-limit (Kaplan-Meier) estimator for both
the event and the censoring distribution, the Aalen-Johansen estimator for
cumulative incidence under competing risks, and a reproducible train/test
split.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

DEFAULT_G_FLOOR = 1e-3


class DataError(ValueError):
    """Raised for malformed or invalid survival data."""


@dataclass(frozen=True)
class SurvivalRecord:
    time: float
    status: int
    cause: int
    features: tuple[float, ...]


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored (optionally competing-risks) survival data.

    Stored column-wise: ``time`` (n,), ``status`` (n,) in {0, 1},
    ``cause`` (n,) in {1..K} (ignored where status is 0) and ``X`` (n, p).
    All arrays are read-only.
    """

    time: np.ndarray
    status: np.ndarray
    cause: np.ndarray
    X: np.ndarray
    K: int = 1
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        time = _frozen(self.time, float).reshape(-1)
        n = time.shape[0]
        status = _frozen(self.status, int).reshape(-1)
        cause = np.ones(n, dtype=int) if self.cause is None else self.cause
        cause = _frozen(cause, int).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if n else X.reshape(0, 0)
        X = _frozen(X, float)
        if status.shape[0] != n or cause.shape[0] != n or X.shape[0] != n:
            raise DataError("time, status, cause and X must have the same number of rows")
        if n and not np.all(np.isfinite(time)):
            raise DataError("non-finite time")
        if n and np.any(time <= 0):
            raise DataError(f"time must be > 0 (row {int(np.argmax(time <= 0))})")
        bad = ~np.isin(status, (0, 1))
        if np.any(bad):
            raise DataError(f"status must be 0 or 1 (row {int(np.argmax(bad))})")
        K = int(self.K)
        if K < 1:
            raise DataError("K must be >= 1")
        ev = status == 1
        if np.any(ev & ((cause < 1) | (cause > K))):
            row = int(np.argmax(ev & ((cause < 1) | (cause > K))))
            raise DataError(f"cause outside 1..{K} at row {row}")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length does not match X")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "cause", cause)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def records(self) -> list[SurvivalRecord]:
        return list(iter(self))

    def __iter__(self) -> Iterator[SurvivalRecord]:
        for i in range(self.n):
            yield SurvivalRecord(
                float(self.time[i]), int(self.status[i]), int(self.cause[i]), tuple(self.X[i])
            )

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(
            self.time[idx], self.status[idx], self.cause[idx], self.X[idx],
            K=self.K, feature_names=self.feature_names,
        )

    def cause_status(self, k: int) -> np.ndarray:
        """Cause-specific status ``d_i * 1(e_i == k)``."""
        return (self.status * (self.cause == k)).astype(int)

    def with_status(self, status) -> "SurvivalDataset":
        return SurvivalDataset(
            self.time, status, self.cause, self.X, K=self.K, feature_names=self.feature_names
        )

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord], K: int | None = None) -> "SurvivalDataset":
        records = list(records)
        p = len(records[0].features) if records else 0
        if any(len(r.features) != p for r in records):
            raise DataError("records have differing feature lengths")
        if K is None:
            K = max([r.cause for r in records if r.status == 1], default=1)
        X = np.array([r.features for r in records], dtype=float).reshape(len(records), p)
        return cls(
            [r.time for r in records], [r.status for r in records],
            [r.cause for r in records], X, K=K,
        )


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Equidistant cut points ``0 = tau_0 < tau_1 < ... < tau_J = tau_star``."""

    cut_points: np.ndarray

    def __post_init__(self):
        c = _frozen(self.cut_points, float).reshape(-1)
        if c.shape[0] < 2 or c[0] != 0.0:
            raise ValueError("grid needs tau_0 = 0 and at least one interval")
        d = np.diff(c)
        if np.any(d <= 0):
            raise ValueError("cut points must be strictly increasing")
        if np.max(np.abs(d - d[0])) > 1e-12 * max(1.0, c[-1]):
            raise ValueError("cut points must be equidistant")
        object.__setattr__(self, "cut_points", c)

    @classmethod
    def uniform(cls, tau_star: float, J: int) -> "TimeGrid":
        if J < 1:
            raise ValueError("J must be >= 1")
        if not tau_star > 0:
            raise ValueError("tau_star must be > 0")
        return cls(np.linspace(0.0, tau_star, J + 1))

    @property
    def J(self) -> int:
        return self.cut_points.shape[0] - 1

    @property
    def tau_star(self) -> float:
        return float(self.cut_points[-1])

    @property
    def times(self) -> np.ndarray:
        """The J evaluation points tau_1..tau_J."""
        return self.cut_points[1:]

    @property
    def width(self) -> float:
        return self.tau_star / self.J

    def interval_index(self, t) -> np.ndarray:
        """Index j (1-based) with ``t in (tau_{j-1}, tau_j]``; J+1 beyond tau_star."""
        t = np.asarray(t, dtype=float)
        return np.searchsorted(self.cut_points, t, side="left")

    def to_dict(self) -> dict:
        return {"tau_star": self.tau_star, "J": self.J}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TimeGrid":
        return cls.uniform(float(d["tau_star"]), int(d["J"]))


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function of time.

    ``f(t)`` is the value at the largest knot ``<= t``, or ``pre_value`` before
    the first knot.
    """

    knots: np.ndarray
    values: np.ndarray
    pre_value: float = 1.0

    def __post_init__(self):
        k = _frozen(self.knots, float).reshape(-1)
        v = _frozen(self.values, float).reshape(-1)
        if k.shape != v.shape:
            raise ValueError("knots and values must have equal length")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "pre_value", float(self.pre_value))

    def _lookup(self, t, side):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side=side)
        table = np.concatenate(([self.pre_value], self.values))
        out = table[idx]
        return out if out.ndim else float(out)

    def __call__(self, t):
        return self._lookup(t, "right")

    def left_limit(self, t):
        """Value just before ``t``: ``lim_{s -> t-} f(s)``."""
        return self._lookup(t, "left")

    def complement(self) -> "StepFunction":
        return StepFunction(self.knots, 1.0 - self.values, 1.0 - self.pre_value)


def _check_csv_number(raw: str, row: int, col: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: column {col!r} is not numeric: {raw!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}: column {col!r} is not finite: {raw!r}")
    return v


def load_csv(path, schema: Mapping | None = None) -> SurvivalDataset:
    """Read a survival dataset from a CSV file with a header row.

    ``schema`` maps the roles ``time``, ``status`` and optionally ``cause``
    to column names, and ``features`` to a list of columns. Without
    ``features`` every remaining column is used. Row indices in error
    messages are 0-based data rows (header excluded).
    """
    schema = dict(schema or {})
    tcol = schema.get("time", "time")
    scol = schema.get("status", "status")
    ccol = schema.get("cause", "cause")
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for req in (tcol, scol):
            if req not in header:
                raise DataError(f"missing required column {req!r}")
        has_cause = ccol in header
        fcols = schema.get("features")
        if fcols is None:
            fcols = [c for c in header if c not in (tcol, scol, ccol)]
        missing = [c for c in fcols if c not in header]
        if missing:
            raise DataError(f"missing feature columns {missing}")
        times, stats, causes, rows = [], [], [], []
        for i, rec in enumerate(reader):
            t = _check_csv_number(rec[tcol], i, tcol)
            s = _check_csv_number(rec[scol], i, scol)
            if t <= 0:
                raise DataError(f"row {i}: time must be > 0, got {t}")
            if s not in (0.0, 1.0):
                raise DataError(f"row {i}: status must be 0 or 1, got {rec[scol]!r}")
            c = 1.0
            if has_cause:
                c = _check_csv_number(rec[ccol], i, ccol)
                if s == 1 and (c < 1 or c != int(c)):
                    raise DataError(f"row {i}: cause must be a positive integer, got {rec[ccol]!r}")
            times.append(t)
            stats.append(int(s))
            causes.append(int(c) if s == 1 else max(int(c), 1))
            rows.append([_check_csv_number(rec[c_], i, c_) for c_ in fcols])
    n = len(times)
    if n == 0:
        raise DataError("CSV contains no data rows")
    K = 1
    if has_cause:
        ev = [c for c, s in zip(causes, stats) if s == 1]
        K = max(ev, default=1)
        causes = [c if s == 1 else 1 for c, s in zip(causes, stats)]
    X = np.array(rows, dtype=float).reshape(n, len(fcols))
    return SurvivalDataset(times, stats, causes, X, K=K, feature_names=tuple(fcols))


def save_csv(data: SurvivalDataset, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = ["time", "status"] + (["cause"] if data.K > 1 else []) + list(data.feature_names)
        w.writerow(cols)
        for i in range(data.n):
            row = [repr(float(data.time[i])), int(data.status[i])]
            if data.K > 1:
                row.append(int(data.cause[i]))
            row.extend(repr(float(v)) for v in data.X[i])
            w.writerow(row)


def _risk_table(time, target, other=None):
    """Distinct target times with event counts and risk-set sizes.

    When ``other`` is given, subjects flagged there at a tied time are treated
    as leaving just *before* the target (events precede censorings).
    """
    ut = np.unique(time[target == 1])
    d = np.array([np.sum((time == u) & (target == 1)) for u in ut], dtype=float)
    at_risk = np.array([np.sum(time >= u) for u in ut], dtype=float)
    if other is not None:
        at_risk -= np.array([np.sum((time == u) & (other == 1)) for u in ut], dtype=float)
    return ut, d, at_risk


def kaplan_meier(data: SurvivalDataset, target: str = "event") -> StepFunction:
    """Product-limit estimate of the event (or censoring) survival function.

    With ``target="censoring"`` the status indicator is flipped; at tied
    times events are taken to precede censorings, so subjects with an event
    at ``t`` are not at risk of being censored at ``t``.
    """
    if data.n == 0:
        raise DataError("kaplan_meier needs a nonempty dataset")
    if target == "event":
        ut, d, r = _risk_table(data.time, data.status)
    elif target == "censoring":
        ut, d, r = _risk_table(data.time, 1 - data.status, other=data.status)
    else:
        raise ValueError(f"target must be 'event' or 'censoring', got {target!r}")
    return StepFunction(ut, np.cumprod(1.0 - d / r), 1.0)


def censoring_weight(G: StepFunction, t, floor: float = DEFAULT_G_FLOOR):
    """``max(G(t-), floor)``: probability of being uncensored just before ``t``."""
    if not floor > 0:
        raise ValueError("floor must be > 0")
    out = np.maximum(G.left_limit(t), floor)
    return out if np.ndim(out) else float(out)


def nearest_rank_quantile(x, q: float) -> float:
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        raise ValueError("quantile of empty sample")
    if not 0 < q <= 1:
        raise ValueError("quantile must lie in (0, 1]")
    k = max(int(math.ceil(q * x.size - 1e-9)), 1)
    return float(x[k - 1])


def make_grid(data: SurvivalDataset, J: int, cutoff_quantile: float = 0.9) -> TimeGrid:
    """Equidistant grid on ``(0, tau_star]`` with tau_star the nearest-rank
    ``cutoff_quantile`` of the observed times."""
    if J < 1:
        raise ValueError("J must be >= 1")
    if not 0 < cutoff_quantile <= 1:
        raise ValueError("cutoff_quantile must lie in (0, 1]")
    if data.n == 0:
        raise DataError("make_grid needs a nonempty dataset")
    return TimeGrid.uniform(nearest_rank_quantile(data.time, cutoff_quantile), J)


def aalen_johansen(data: SurvivalDataset) -> list[StepFunction]:
    """Cause-specific cumulative incidence estimates, one per cause 1..K."""
    if data.n == 0:
        raise DataError("aalen_johansen needs a nonempty dataset")
    ut, d_all, at_risk = _risk_table(data.time, data.status)
    if ut.size == 0:
        return [StepFunction([], [], 0.0) for _ in range(data.K)]
    hazard = d_all / at_risk
    s_prev = np.concatenate(([1.0], np.cumprod(1.0 - hazard)[:-1]))
    out = []
    for k in range(1, data.K + 1):
        dk = np.array(
            [np.sum((data.time == u) & (data.status == 1) & (data.cause == k)) for u in ut],
            dtype=float,
        )
        out.append(StepFunction(ut, np.cumsum(s_prev * dk / at_risk), 0.0))
    return out


def split(
    data: SurvivalDataset, train_fraction: float = 0.8, seed: int = 0, max_tries: int = 100
) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Random train/test partition whose test part holds at least one event."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = data.n
    n_train = int(round(train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise DataError(f"cannot split {n} rows with train_fraction={train_fraction}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        perm = rng.permutation(n)
        test_idx = np.sort(perm[n_train:])
        if data.status[test_idx].sum() >= 1:
            return data.subset(np.sort(perm[:n_train])), data.subset(test_idx)
    raise DataError(f"no split with an event in the test set after {max_tries} tries")
