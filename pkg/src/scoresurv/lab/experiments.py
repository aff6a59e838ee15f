"""Experiment drivers: coefficient recovery, benchmark, rule ablation, tuning.

Every driver takes a config dataclass (buildable from a JSON mapping via
``from_dict``) and returns a report holding long-format raw entries. Reports
write a CSV of the raw entries and a rendered text table; both are
deterministic functions of the config. Wall-clock timings are kept in the
separate metadata JSON.

Per-job seeds come from :func:`derive_seed`, so results do not depend on the
number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from scoresurv.competing import fit_cr
from scoresurv.core import (
    DataError,
    SurvivalDataset,
    aalen_johansen,
    load_csv,
    split,
)
from scoresurv.engine import FitConfig
from scoresurv.lab.simulate import (
    DEFAULT_BETA,
    DEFAULT_SIGMA,
    DgpConfig,
    simulate,
    simulate_aft,
)
from scoresurv.model import (
    fit_aft_mle,
    fit_cox_mle,
    fit_scoring,
    km_predictor,
)
from scoresurv.score import (
    IncidenceAccessor,
    ScoreError,
    evaluate_at_quantile,
    evaluation_grid,
    rule,
)

logger = logging.getLogger(__name__)

METHODS = ("km", "cox_mle", "aft_sr", "np_sr", "cox_sr", "aft_mle")
QUANTILES = (0.25, 0.5, 0.75)
RECOVERY_ARMS = ("AFT_MLE", "COX_MLE", "AFT_SR", "COX_SR")

# scoring-rule methods: model family and default options
SR_METHODS = {
    "aft_sr": ("parametric", {"hidden": (32, 32), "sigma_mode": "feature", "spec": "lognormal"}),
    "np_sr": ("increment", {"hidden": (32, 32)}),
    "cox_sr": ("cox_sr", {}),
}


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic 32-bit seed for a job identified by integer ``keys``."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


def _fit_config(value) -> FitConfig:
    if isinstance(value, FitConfig):
        return value
    return FitConfig(**(value or {}))


def _from_mapping(cls, d: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def _parallel_map(fn: Callable, jobs: Sequence, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


# datasets ----------------------------------------------------------------------


def load_dataset(name: str, n: int = 1500, seed: int = 0, family: str = "lognormal") -> SurvivalDataset:
    """``synthetic``/``complex``, ``aft_simple``, ``competing`` or a CSV path."""
    if name in ("synthetic", "complex"):
        return simulate(DgpConfig(kind="complex", n=n, seed=seed))
    if name == "aft_simple":
        return simulate(DgpConfig(kind="aft_simple", family=family, n=n, seed=seed))
    if name == "competing":
        return simulate(DgpConfig(kind="competing", n=n, seed=seed))
    if name.endswith(".csv"):
        return load_csv(name)
    raise ValueError(f"unknown dataset {name!r}")


# fitting and scoring ---------------------------------------------------------------


def fit_method(method: str, train: SurvivalDataset, train_rule="risbs",
               config: FitConfig | None = None, J: int = 30,
               orientation: str = "conventional", **options):
    """Fit one benchmark method; returns an object with ``predict_many``."""
    if method == "km":
        return km_predictor(train)
    if method == "cox_mle":
        return fit_cox_mle(train)
    if method == "aft_mle":
        return fit_aft_mle(train, options.get("spec", "lognormal"))
    if method not in SR_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    family, defaults = SR_METHODS[method]
    opts = {**defaults, **options}
    if family == "cox_sr":
        opts = {k: v for k, v in opts.items() if k == "interpolation"}
    fitted = fit_scoring(family, train, train_rule, config=config, J=J,
                         orientation=orientation, **opts)
    return fitted.model


def score_model(model, test: SurvivalDataset, kind, q: float,
                orientation: str = "conventional") -> float:
    grid = evaluation_grid(test, q)
    preds = model.predict_many(test.X, grid)
    return evaluate_at_quantile(kind, test, preds, q, orientation=orientation)


def _mean_sd(x) -> tuple[float, float]:
    x = np.asarray([v for v in x if np.isfinite(v)], dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0


# reports ---------------------------------------------------------------------------


@dataclass
class Report:
    """Long-format raw entries plus run metadata."""

    columns: tuple
    entries: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.columns), lineterminator="\n")
        w.writeheader()
        for e in self.entries:
            w.writerow({k: _fmt(e.get(k)) for k in self.columns})
        return buf.getvalue()

    def render(self) -> str:
        raise NotImplementedError

    def write(self, out_dir, stem: str) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.csv", out / f"{stem}.txt", out / f"{stem}_meta.json"]
        paths[0].write_text(self.to_csv(), encoding="utf-8")
        paths[1].write_text(self.render(), encoding="utf-8")
        paths[2].write_text(json.dumps(self.metadata, indent=2, default=str), encoding="utf-8")
        return paths


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]) + "\n"


def _cell(vals, scale=100.0) -> str:
    m, s = _mean_sd(vals)
    return "NA" if math.isnan(m) else f"{scale * m:.2f} ({scale * s:.2f})"


# random search -------------------------------------------------------------------


@dataclass
class SearchSpace:
    learning_rate: tuple = (1e-3, 3e-2)
    width: tuple = (16, 32, 64)
    l2: tuple = (0.0, 1e-3)
    J: tuple = (10, 20, 30, 50)

    def degenerate(self) -> bool:
        return (self.learning_rate[0] == self.learning_rate[-1] and len(set(self.width)) == 1
                and self.l2[0] == self.l2[-1] and len(set(self.J)) == 1)

    def sample(self, rng: np.random.Generator) -> dict:
        lo, hi = math.log(self.learning_rate[0]), math.log(self.learning_rate[-1])
        return {
            "learning_rate": float(math.exp(rng.uniform(lo, hi))) if hi > lo else float(self.learning_rate[0]),
            "width": int(rng.choice(self.width)),
            "l2": float(rng.uniform(self.l2[0], self.l2[-1])) if self.l2[-1] > self.l2[0] else float(self.l2[0]),
            "J": int(rng.choice(self.J)),
        }


@dataclass
class SearchResult:
    config: FitConfig
    model_options: dict
    J: int
    score: float
    trials: list[dict]


def random_search(data: SurvivalDataset, space: SearchSpace | None = None, budget: int = 5,
                  seed: int = 0, method: str = "aft_sr", train_rule="risbs",
                  base_config: FitConfig | None = None, q: float = 0.5,
                  orientation: str = "conventional", **model_options) -> SearchResult:
    """Pick the configuration with the lowest validation RISBS at ``q``.

    A single inner 80/20 split of ``data`` serves as the validation set.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = space or SearchSpace()
    base = base_config or FitConfig()
    inner_train, inner_val = split(data, 0.8, derive_seed(seed, 0))
    rng = np.random.default_rng(derive_seed(seed, 1))
    n_trials = 1 if space.degenerate() else budget
    trials, best = [], None
    for i in range(n_trials):
        s = space.sample(rng)
        cfg = base.updated(learning_rate=s["learning_rate"], l2=s["l2"], seed=derive_seed(seed, 2, i))
        opts = dict(model_options)
        if method in ("aft_sr", "np_sr"):
            opts["hidden"] = (s["width"], s["width"])
        try:
            model = fit_method(method, inner_train, train_rule, cfg, J=s["J"],
                               orientation=orientation, **opts)
            score = score_model(model, inner_val, "risbs", q)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            logger.warning("search trial %d failed: %s", i, exc)
            score = math.nan
        trials.append({**s, "score": score})
        if math.isfinite(score) and (best is None or score < best[0]):
            best = (score, cfg, opts, s["J"])
    if best is None:
        raise RuntimeError("every random-search trial failed")
    return SearchResult(best[1], best[2], best[3], best[0], trials)


# benchmark -------------------------------------------------------------------------


@dataclass
class BenchmarkConfig:
    datasets: tuple = ("synthetic",)
    methods: tuple = ("km", "aft_sr")
    repetitions: int = 5
    quantiles: tuple = QUANTILES
    n: int = 1500
    seed: int = 0
    eval_rule: str = "risbs"
    train_rule: str = "risbs"
    J: int = 30
    fit: FitConfig | dict | None = None
    tune: bool = False
    budget: int = 5
    n_jobs: int = 1
    orientation: str = "conventional"
    model_options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fit = _fit_config(self.fit)
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.repetitions < 0:
            raise ValueError("repetitions must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        return _from_mapping(cls, d)


class BenchmarkReport(Report):
    COLUMNS = ("dataset", "method", "quantile", "rep", "score", "error")

    def __init__(self, entries=None, metadata=None):
        super().__init__(self.COLUMNS, entries or [], metadata or {})

    def aggregates(self) -> dict:
        """``{(dataset, method, quantile): (mean, sd)}`` of the raw scores."""
        groups: dict = {}
        for e in self.entries:
            groups.setdefault((e["dataset"], e["method"], e["quantile"]), []).append(e["score"])
        return {k: _mean_sd(v) for k, v in groups.items()}

    def render(self) -> str:
        qs = sorted({e["quantile"] for e in self.entries})
        keys = list(dict.fromkeys((e["dataset"], e["method"]) for e in self.entries))
        groups: dict = {}
        for e in self.entries:
            groups.setdefault((e["dataset"], e["method"], e["quantile"]), []).append(e["score"])
        header = ["dataset", "method"] + [f"Q{round(100 * q)}" for q in qs]
        rows = [[d, m] + [_cell(groups.get((d, m, q), [])) for q in qs] for d, m in keys]
        note = "scores x100, mean (sd) over repetitions; tuning uses one inner validation split\n"
        return note + _table(header, rows)


def _benchmark_job(job) -> tuple[list[dict], float]:
    cfg, ds_index, dataset, rep = job
    start = time.perf_counter()
    data = load_dataset(dataset, cfg.n, derive_seed(cfg.seed, ds_index))
    entries = []
    try:
        train, test = split(data, 0.8, derive_seed(cfg.seed, ds_index, rep, 1))
    except DataError as exc:
        return [dict(dataset=dataset, method=m, quantile=q, rep=rep, score=math.nan, error=str(exc))
                for m in cfg.methods for q in cfg.quantiles], 0.0
    for mi, method in enumerate(cfg.methods):
        fit_cfg = cfg.fit.updated(seed=derive_seed(cfg.seed, ds_index, rep, 2, mi))
        opts, J = dict(cfg.model_options.get(method, {})), cfg.J
        try:
            if cfg.tune and method in SR_METHODS:
                res = random_search(train, budget=cfg.budget, seed=fit_cfg.seed, method=method,
                                    train_rule=cfg.train_rule, base_config=fit_cfg,
                                    orientation=cfg.orientation, **opts)
                fit_cfg, opts, J = res.config, res.model_options, res.J
            model = fit_method(method, train, cfg.train_rule, fit_cfg, J=J,
                               orientation=cfg.orientation, **opts)
            error = ""
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            model, error = None, f"fit failed: {exc}"
        for q in cfg.quantiles:
            score, err = math.nan, error
            if model is not None:
                try:
                    score = score_model(model, test, cfg.eval_rule, q, cfg.orientation)
                except (ArithmeticError, ValueError, RuntimeError) as exc:
                    err = f"evaluation failed: {exc}"
            entries.append(dict(dataset=dataset, method=method, quantile=q, rep=rep,
                                score=score, error=err))
    return entries, time.perf_counter() - start


def run_benchmark(cfg: BenchmarkConfig) -> BenchmarkReport:
    jobs = [(cfg, i, ds, rep) for i, ds in enumerate(cfg.datasets) for rep in range(cfg.repetitions)]
    results = _parallel_map(_benchmark_job, jobs, cfg.n_jobs)
    entries = [e for res, _ in results for e in res]
    meta = {"kind": "benchmark", "config": dataclasses.asdict(cfg),
            "job_seeds": [derive_seed(cfg.seed, i, rep, 1) for _, i, _, rep in jobs],
            "wall_time_s": [t for _, t in results],
            "note": "inner nested CV replaced by one 80/20 validation split"}
    return BenchmarkReport(entries, meta)


# coefficient recovery --------------------------------------------------------------


RECOVERY_FIT = {"learning_rate": 0.02, "batch_size": 2000, "max_epochs": 3000,
                "validation_fraction": 0.0, "patience": 20, "tol": 1e-7}


@dataclass
class RecoveryConfig:
    family: str = "lognormal"
    B: int = 10
    n: int = 1500
    arms: tuple = RECOVERY_ARMS
    sr_rule: str = "risbs"
    beta: tuple = DEFAULT_BETA
    sigma: float = DEFAULT_SIGMA
    J: int = 30
    seed: int = 0
    include_scores: bool = False
    fit: FitConfig | dict | None = None
    np_fit: FitConfig | dict | None = None
    n_jobs: int = 1
    orientation: str = "conventional"

    def __post_init__(self):
        self.fit = _fit_config(self.fit if self.fit is not None else RECOVERY_FIT)
        self.np_fit = _fit_config(self.np_fit)
        unknown = set(self.arms) - set(RECOVERY_ARMS)
        if unknown:
            raise ValueError(f"unknown arms {sorted(unknown)}")
        if self.B < 0:
            raise ValueError("B must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveryConfig":
        return _from_mapping(cls, d)


class RecoveryReport(Report):
    COLUMNS = ("rep", "family", "arm", "quantity", "estimate", "truth", "diff", "error")

    def __init__(self, entries=None, metadata=None):
        super().__init__(self.COLUMNS, entries or [], metadata or {})

    def differences(self, arm: str, quantity: str) -> np.ndarray:
        return np.array([e["diff"] for e in self.entries
                         if e["arm"] == arm and e["quantity"] == quantity], dtype=float)

    def render(self) -> str:
        keys = list(dict.fromkeys((e["family"], e["arm"], e["quantity"]) for e in self.entries
                                  if not e["error"]))
        rows = []
        for fam, arm, qty in keys:
            d = [e["diff"] for e in self.entries
                 if (e["family"], e["arm"], e["quantity"]) == (fam, arm, qty) and not e["error"]]
            m, s = _mean_sd(d)
            rows.append([fam, arm, qty, f"{m:.4f}", f"{s:.4f}", str(len(d))])
        header = ["family", "arm", "quantity", "mean_diff", "sd_diff", "reps"]
        return "estimate minus truth (scores: raw value)\n" + _table(header, rows)


def _cox_truth(beta, sigma, family) -> np.ndarray:
    # exact for Weibull, where the AFT model is also a PH model
    return -np.asarray(beta[1:], dtype=float) / sigma


def _recovery_job(job) -> tuple[list[dict], float]:
    cfg, rep = job
    start = time.perf_counter()
    data = simulate_aft(DgpConfig(kind="aft_simple", family=cfg.family, n=cfg.n, beta=cfg.beta,
                                  sigma=cfg.sigma, seed=derive_seed(cfg.seed, rep, 0)))
    train, test = split(data, 0.8, derive_seed(cfg.seed, rep, 1))
    rows, models = [], {}
    base = dict(rep=rep, family=cfg.family, error="")
    fit_cfg = cfg.fit.updated(seed=derive_seed(cfg.seed, rep, 2))
    truth_aft = list(cfg.beta) + [cfg.sigma]
    for arm in cfg.arms:
        try:
            if arm == "AFT_MLE":
                m = fit_aft_mle(train, cfg.family)
            elif arm == "AFT_SR":
                m = fit_scoring("parametric", train, cfg.sr_rule, config=fit_cfg, J=cfg.J,
                                orientation=cfg.orientation, spec=cfg.family).model
            elif arm == "COX_MLE":
                m = fit_cox_mle(train)
            else:
                m = fit_scoring("cox_sr", train, cfg.sr_rule, config=fit_cfg, J=cfg.J,
                                orientation=cfg.orientation).model
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            rows.append(dict(base, arm=arm, quantity="fit", estimate=math.nan, truth=math.nan,
                             diff=math.nan, error=str(exc)))
            continue
        models[arm] = m
        if arm.startswith("AFT"):
            est = list(m.coefficients) + [m.sigma]
            names = [f"beta{j}" for j in range(len(cfg.beta))] + ["sigma"]
            truth = truth_aft
        else:
            est = list(m.beta)
            names = [f"beta{j}" for j in range(1, len(cfg.beta))]
            truth = list(_cox_truth(cfg.beta, cfg.sigma, cfg.family))
        for name, e, t in zip(names, est, truth):
            rows.append(dict(base, arm=arm, quantity=name, estimate=float(e), truth=float(t),
                             diff=float(e - t)))
    if cfg.include_scores:
        for variant in ("risbs", "risll"):
            np_cfg = cfg.np_fit.updated(seed=derive_seed(cfg.seed, rep, 3))
            try:
                models[f"NP_SR_{variant.upper()}"] = fit_method(
                    "np_sr", train, variant, np_cfg, J=cfg.J, orientation=cfg.orientation)
            except (ArithmeticError, ValueError, RuntimeError) as exc:
                rows.append(dict(base, arm=f"NP_SR_{variant.upper()}", quantity="fit",
                                 estimate=math.nan, truth=math.nan, diff=math.nan, error=str(exc)))
        for arm, m in models.items():
            for kind in ("risbs", "risll", "isbs"):
                try:
                    s = score_model(m, test, kind, 0.5, cfg.orientation)
                    rows.append(dict(base, arm=arm, quantity=f"test_{kind}", estimate=s,
                                     truth=math.nan, diff=math.nan))
                except (ArithmeticError, ValueError, RuntimeError) as exc:
                    rows.append(dict(base, arm=arm, quantity=f"test_{kind}", estimate=math.nan,
                                     truth=math.nan, diff=math.nan, error=str(exc)))
    return rows, time.perf_counter() - start


def run_recovery(cfg: RecoveryConfig) -> RecoveryReport:
    results = _parallel_map(_recovery_job, [(cfg, rep) for rep in range(cfg.B)], cfg.n_jobs)
    entries = [e for res, _ in results for e in res]
    meta = {"kind": "recovery", "config": dataclasses.asdict(cfg),
            "wall_time_s": [t for _, t in results],
            "note": "Cox truth is -beta/sigma, exact only for the weibull family"}
    return RecoveryReport(entries, meta)


# ablation ------------------------------------------------------------------------------


@dataclass
class AblationConfig:
    train_rules: tuple = ("risbs", "risll", "rcll", "isbs")
    eval_rules: tuple = ("risbs", "risll", "rcll", "isbs")
    dataset: str = "synthetic"
    method: str = "aft_sr"
    repetitions: int = 5
    quantile: float = 0.5
    n: int = 1500
    J: int = 30
    seed: int = 0
    fit: FitConfig | dict | None = None
    n_jobs: int = 1
    orientation: str = "conventional"
    model_options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fit = _fit_config(self.fit)
        for r in (*self.train_rules, *self.eval_rules):
            if rule(r).value == "scrps":
                raise ValueError("ablation rules are drawn from risbs, risll, rcll, isbs")
        if self.method not in SR_METHODS:
            raise ValueError("ablation trains a scoring-rule method")

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        return _from_mapping(cls, d)


class AblationReport(Report):
    COLUMNS = ("rep", "train_rule", "eval_rule", "quantile", "score", "error")

    def __init__(self, entries=None, metadata=None):
        super().__init__(self.COLUMNS, entries or [], metadata or {})

    def matrix(self) -> tuple[list, list, np.ndarray]:
        """Mean score with training rules as rows and evaluation rules as columns."""
        tr = list(dict.fromkeys(e["train_rule"] for e in self.entries))
        ev = list(dict.fromkeys(e["eval_rule"] for e in self.entries))
        M = np.full((len(tr), len(ev)), math.nan)
        for i, a in enumerate(tr):
            for j, b in enumerate(ev):
                M[i, j] = _mean_sd([e["score"] for e in self.entries
                                    if e["train_rule"] == a and e["eval_rule"] == b])[0]
        return tr, ev, M

    def render(self) -> str:
        tr, ev, M = self.matrix()
        header = ["train \\ eval"] + [e.upper() for e in ev]
        rows = [[a.upper()] + ["NA" if math.isnan(v) else f"{100 * v:.2f}" for v in M[i]]
                for i, a in enumerate(tr)]
        note = "mean score x100; RCLL is the raw mean negative log-likelihood\n"
        return note + _table(header, rows)


def _ablation_job(job) -> list[dict]:
    cfg, rep = job
    data = load_dataset(cfg.dataset, cfg.n, derive_seed(cfg.seed, 0))
    train, test = split(data, 0.8, derive_seed(cfg.seed, rep, 1))
    out = []
    for ti, tr_rule in enumerate(cfg.train_rules):
        fit_cfg = cfg.fit.updated(seed=derive_seed(cfg.seed, rep, 2))
        try:
            model = fit_method(cfg.method, train, tr_rule, fit_cfg, J=cfg.J,
                               orientation=cfg.orientation, **cfg.model_options)
            error = ""
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            model, error = None, f"fit failed: {exc}"
        for ev_rule in cfg.eval_rules:
            score, err = math.nan, error
            if model is not None:
                try:
                    score = score_model(model, test, ev_rule, cfg.quantile, cfg.orientation)
                except (ArithmeticError, ValueError, RuntimeError) as exc:
                    err = f"evaluation failed: {exc}"
            out.append(dict(rep=rep, train_rule=rule(tr_rule).value, eval_rule=rule(ev_rule).value,
                            quantile=cfg.quantile, score=score, error=err))
    return out


def run_ablation(cfg: AblationConfig) -> AblationReport:
    results = _parallel_map(_ablation_job, [(cfg, rep) for rep in range(cfg.repetitions)], cfg.n_jobs)
    meta = {"kind": "ablation", "config": dataclasses.asdict(cfg)}
    return AblationReport([e for res in results for e in res], meta)


# competing risks ---------------------------------------------------------------------------


@dataclass
class CompetingConfig:
    variant: str = "parametric"
    rule: str = "isbs"
    repetitions: int = 5
    n: int = 1500
    quantile: float = 0.5
    J: int = 30
    seed: int = 0
    fit: FitConfig | dict | None = None
    n_jobs: int = 1
    model_options: dict = field(default_factory=lambda: {"hidden": (32, 32)})

    def __post_init__(self):
        self.fit = _fit_config(self.fit)

    @classmethod
    def from_dict(cls, d: dict) -> "CompetingConfig":
        return _from_mapping(cls, d)


class CompetingReport(Report):
    COLUMNS = ("rep", "method", "cause", "quantile", "score", "error")

    def __init__(self, entries=None, metadata=None):
        super().__init__(self.COLUMNS, entries or [], metadata or {})

    def mean(self, method: str, cause: int) -> float:
        return _mean_sd([e["score"] for e in self.entries
                         if e["method"] == method and e["cause"] == cause])[0]

    def render(self) -> str:
        keys = list(dict.fromkeys((e["method"], e["cause"]) for e in self.entries))
        rows = [[m, str(k), _cell([e["score"] for e in self.entries
                                   if (e["method"], e["cause"]) == (m, k)])] for m, k in keys]
        return "cause-specific score x100, mean (sd)\n" + _table(["method", "cause", "score"], rows)


def _competing_job(job) -> list[dict]:
    cfg, rep = job
    data = load_dataset("competing", cfg.n, derive_seed(cfg.seed, rep, 0))
    train, test = split(data, 0.8, derive_seed(cfg.seed, rep, 1))
    out = []
    aj = aalen_johansen(train)
    try:
        model = fit_cr(cfg.variant, train, cfg.rule, config=cfg.fit.updated(seed=derive_seed(cfg.seed, rep, 2)),
                       J=cfg.J, **cfg.model_options).model
        error = ""
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        model, error = None, f"fit failed: {exc}"
    for k in range(1, data.K + 1):
        status = test.cause_status(k)
        try:
            grid = evaluation_grid(test, cfg.quantile, status=status)
        except ScoreError as exc:
            for m in ("aj", f"cr_{cfg.variant}"):
                out.append(dict(rep=rep, method=m, cause=k, quantile=cfg.quantile, score=math.nan,
                                error=str(exc)))
            continue
        base = [IncidenceAccessor(aj[k - 1])] * test.n
        out.append(dict(rep=rep, method="aj", cause=k, quantile=cfg.quantile, error="",
                        score=evaluate_at_quantile(cfg.rule, test, base, cfg.quantile, cause=k)))
        score = math.nan
        if model is not None:
            acc = [row[k - 1] for row in model.accessors(test.X, grid.times)]
            score = evaluate_at_quantile(cfg.rule, test, acc, cfg.quantile, cause=k)
        out.append(dict(rep=rep, method=f"cr_{cfg.variant}", cause=k, quantile=cfg.quantile,
                        score=score, error=error))
    return out


def run_competing(cfg: CompetingConfig) -> CompetingReport:
    results = _parallel_map(_competing_job, [(cfg, rep) for rep in range(cfg.repetitions)], cfg.n_jobs)
    meta = {"kind": "competing", "config": dataclasses.asdict(cfg)}
    return CompetingReport([e for res in results for e in res], meta)
