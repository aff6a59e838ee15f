"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines.
"""

import time

import numpy as np

from scoresurv.competing import CompetingRisksModel
from scoresurv.core import (
    StepFunction,
    SurvivalDataset,
    TimeGrid,
    aalen_johansen,
    kaplan_meier,
)
from scoresurv.engine import FitConfig
from scoresurv.lab import experiments as ex
from scoresurv.lab.gradcheck import run_gradcheck
from scoresurv.lab.simulate import DgpConfig, simulate_aft
from scoresurv.model import CoxScoringModel, IncrementSurvivalModel, ParametricSurvivalModel
from scoresurv.model import fit_aft_mle, fit_scoring
from scoresurv.score import CurveAccessor, IncidenceAccessor, cr_objective, objective, rule_weights
from test_core import hand_aj, hand_km


def report(number, name, ok, detail):
    print(f"\ncriterion {number} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


def test_1_gradient_correctness():
    start = time.perf_counter()
    cases = run_gradcheck(50, seed=0, h=1e-5)
    elapsed = time.perf_counter() - start
    worst = max(c.max_rel_error for c in cases)
    combos = {(c.family, c.rule) for c in cases}
    ok = len(cases) == 50 and worst <= 1e-4 and elapsed <= 120
    assert report(1, "gradients", ok,
                  f"{len(cases)} configs, {len(combos)} family/rule pairs, "
                  f"max rel error {worst:.2e}, {elapsed:.1f}s")


def test_2_estimator_oracles():
    r = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(10):
        n = int(r.integers(1, 7))
        time_ = r.choice([1.0, 2.0, 3.0, 4.5, 7.0], n)
        status = r.integers(0, 2, n)
        cause = r.integers(1, 3, n)
        data = SurvivalDataset(time_, status, cause, np.zeros((n, 1)), K=2)
        knots, vals = hand_km(time_, status)
        mismatches += int(not np.array_equal(kaplan_meier(data)(knots), vals))
        for cif, ref in zip(aalen_johansen(data), hand_aj(time_, status, cause, 2)):
            mismatches += int(not np.array_equal(cif(knots), ref))
    assert report(2, "KM/AJ oracles", mismatches == 0, f"10 datasets, {mismatches} mismatches")


FULL_BATCH = FitConfig(learning_rate=0.02, batch_size=5000, max_epochs=3000,
                       validation_fraction=0.0, patience=20, tol=1e-7)


def test_3_mle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        data = simulate_aft(DgpConfig(family="lognormal", n=1500, seed=seed))
        sr = fit_scoring("parametric", data, "rcll", config=FULL_BATCH, spec="lognormal").model
        mle = fit_aft_mle(data, "lognormal")
        worst = max(worst, float(np.max(np.abs(sr.coefficients - mle.coefficients))))
    elapsed = time.perf_counter() - start
    ok = worst <= 2e-2 and elapsed <= 300
    assert report(3, "RCLL vs MLE", ok, f"max coefficient gap {worst:.2e}, {elapsed:.1f}s")


def test_4_parameter_recovery():
    start = time.perf_counter()
    lines, ok = [], True
    for fam in ("lognormal", "loglogistic", "weibull"):
        rep = ex.run_recovery(ex.RecoveryConfig(family=fam, B=10, arms=("AFT_SR",)))
        assert not [e for e in rep.entries if e["error"]]
        beta = [float(np.mean(np.abs(rep.differences("AFT_SR", f"beta{j}")))) for j in range(4)]
        sig = float(np.mean(np.abs(rep.differences("AFT_SR", "sigma"))))
        ok &= max(beta) <= 0.1 and sig <= 0.05
        lines.append(f"{fam}: max mean|dbeta| {max(beta):.3f}, mean|dsigma| {sig:.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed <= 1200
    assert report(4, "recovery", ok, "; ".join(lines) + f"; {elapsed:.0f}s")


def test_5_benchmark_magnitudes():
    start = time.perf_counter()
    rep = ex.run_benchmark(ex.BenchmarkConfig(methods=("km", "aft_sr"), repetitions=5,
                                              quantiles=(0.5,)))
    agg = rep.aggregates()
    km = agg[("synthetic", "km", 0.5)][0] * 100
    aft = agg[("synthetic", "aft_sr", 0.5)][0] * 100
    elapsed = time.perf_counter() - start
    ok = 12.4 <= km <= 15.4 and 5.4 <= aft <= 7.4 and aft <= 0.6 * km and elapsed <= 900
    assert report(5, "benchmark", ok, f"KM {km:.2f}, AFT_RISBS {aft:.2f}, {elapsed:.0f}s")


def test_6_competing_ordering():
    start = time.perf_counter()
    rep = ex.run_competing(ex.CompetingConfig(repetitions=5))
    aj, cr = rep.mean("aj", 1) * 100, rep.mean("cr_parametric", 1) * 100
    elapsed = time.perf_counter() - start
    ok = cr <= 0.7 * aj and elapsed <= 900
    assert report(6, "competing risks", ok, f"CR {cr:.2f} vs AJ {aj:.2f}, {elapsed:.0f}s")


GRID = TimeGrid.uniform(10.0, 12)
T_DENSE = np.concatenate(([1e-9], np.linspace(1e-3, 25.0, 300)))


def _fuzz_single(model, seed, scale):
    r = np.random.default_rng(seed)
    model.params.values = r.normal(scale=scale, size=model.params.size)
    x = r.normal(scale=2.0, size=(1, model.p))
    return model.survival_matrix(x, T_DENSE)[0], x


def test_7_constraint_suite():
    bad = {}
    families = {
        "parametric": [ParametricSurvivalModel(s, 3, hidden=(4,), sigma_mode="feature", grid=GRID)
                       for s in ("weibull", "lognormal", "loglogistic")],
        "increment": [IncrementSurvivalModel(3, GRID, hidden=(4,), gamma1=g)
                      for g in ("logistic", "clamp")],
        "cox_sr": [CoxScoringModel(3, GRID)],
    }
    for fam, models in families.items():
        count = 0
        for seed in range(1000):
            m = models[seed % len(models)]
            S, x = _fuzz_single(m, seed, 2.0)
            fine = np.all((S >= 0) & (S <= 1)) and np.all(np.diff(S) <= 0)
            if fam == "increment":
                a = np.asarray(m.decrements(m.params.values, x))
                fine &= bool(np.all((a >= -1) & (a <= 0)))
            count += int(not fine)
        bad[fam] = count
    for variant in ("parametric", "increment"):
        m = CompetingRisksModel(2, 3, variant, GRID, hidden=(4,))
        count = 0
        for seed in range(1000):
            r = np.random.default_rng(seed)
            m.params.values = r.normal(scale=2.0, size=m.params.size)
            M = m.cif_matrix(r.normal(scale=2.0, size=(1, 3)), T_DENSE)[0]
            fine = np.all(M >= 0) and np.all(M.sum(axis=0) <= 1) and np.all(np.diff(M, axis=1) >= 0)
            count += int(not fine)
        bad[f"cr_{variant}"] = count
    ok = sum(bad.values()) == 0
    assert report(7, "constraints", ok, ", ".join(f"{k} {v}/1000 violations" for k, v in bad.items()))


def _random_scoring_case(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(3, 20))
    data = SurvivalDataset(r.lognormal(1.0, 0.5, n), (r.uniform(size=n) > 0.4).astype(int),
                           None, np.zeros((n, 1)))
    accs = []
    for mu in r.normal(1.0, 0.4, n):
        knots = np.sort(r.uniform(0.1, 8.0, 6))
        vals = np.sort(r.uniform(size=6))[::-1]
        accs.append(CurveAccessor(StepFunction(knots, vals, 1.0)))
    grid = TimeGrid.uniform(float(np.quantile(data.time, 0.9)), int(r.integers(2, 40)))
    return data, accs, grid, kaplan_meier(data, "censoring")


def test_8_scoring_identities():
    one = StepFunction([], [], 1.0)
    failures = 0
    for seed in range(200):
        data, accs, grid, G = _random_scoring_case(seed)
        failures += int(objective("scrps", data, grid, accs, one)
                        != objective("isbs", data, grid, accs, one))
        cens = data.status == 0
        for kind in ("risbs", "risll"):
            W = rule_weights(kind, data.time, data.status, grid.times, G)
            failures += int(not (np.all(W.A[cens] == 0) and np.all(W.B[cens] == 0)))
        cifs = [[IncidenceAccessor(lambda t, a=a: a.cdf(t))] for a in accs]
        for kind in ("isbs", "scrps", "risbs", "risll"):
            failures += int(cr_objective(kind, data, grid, cifs, G)
                            != objective(kind, data, grid, accs, G))
    assert report(8, "scoring identities", failures == 0, f"200 random cases, {failures} failures")


def test_9_ablation_stability():
    start = time.perf_counter()
    rep = ex.run_ablation(ex.AblationConfig(train_rules=("risbs", "risll", "rcll"),
                                            eval_rules=("risbs",), repetitions=5))
    train, _, M = rep.matrix()
    col = M[:, 0]
    rel = float((col.max() - col.min()) / col.min())
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{t} {v * 100:.2f}" for t, v in zip(train, col))
    assert report(9, "ablation", rel <= 0.15, f"{detail}; max relative difference {rel:.1%}, {elapsed:.0f}s")
