"""Randomized reverse-mode vs finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scoresurv.core import SurvivalDataset, kaplan_meier, make_grid
from scoresurv.engine import finite_diff_check
from scoresurv.model import build_model, make_builder

FAMILIES = ("parametric", "increment", "cox_sr")
RULES = ("isbs", "scrps", "risbs", "risll", "rcll")


@dataclass
class GradCheckCase:
    seed: int
    family: str
    rule: str
    options: dict
    max_rel_error: float
    clamp_active: bool
    n_params: int


def random_case(seed: int, h: float = 1e-5) -> GradCheckCase:
    """Draw a small dataset, model and rule from ``seed`` and check its gradient."""
    rng = np.random.default_rng(seed)
    family = FAMILIES[rng.integers(len(FAMILIES))]
    rule = RULES[rng.integers(len(RULES))]
    n, p = int(rng.integers(6, 16)), int(rng.integers(1, 4))
    X = rng.standard_normal((n, p))
    time = rng.lognormal(1.0, 0.6, n)
    status = (rng.uniform(size=n) < 0.7).astype(int)
    status[0] = 1
    data = SurvivalDataset(time, status, np.ones(n, dtype=int), X)
    grid = make_grid(data, int(rng.integers(3, 9)), 0.9)
    options: dict = {}
    if family == "parametric":
        options = {"spec": ("weibull", "lognormal", "loglogistic")[rng.integers(3)],
                   "hidden": ((), (4,), (3, 3))[rng.integers(3)],
                   "sigma_mode": ("constant", "feature")[rng.integers(2)]}
    elif family == "increment":
        options = {"hidden": ((), (4,))[rng.integers(2)],
                   "gamma1": "logistic"}
    model = build_model(family, data, grid, **options)
    model.init(rng, data)
    model.params.values = model.params.values + rng.normal(0.0, 0.1, model.params.size)
    G = kaplan_meier(data, "censoring")
    orientation = ("paper", "conventional")[rng.integers(2)]
    builder = make_builder(model, data, rule, grid, G, orientation=orientation)
    idx = np.arange(n)
    res = finite_diff_check(lambda tape, w: builder(tape, w, idx), model.params, h)
    return GradCheckCase(seed, family, rule, {**options, "orientation": orientation},
                         res.max_rel_error, res.clamp_active, model.params.size)


def run_gradcheck(n_configs: int = 50, seed: int = 0, h: float = 1e-5,
                  max_draws: int = 1000) -> list[GradCheckCase]:
    """``n_configs`` cases without an active clamp (others are skipped)."""
    cases, draw = [], 0
    ss = np.random.SeedSequence(seed)
    while len(cases) < n_configs and draw < max_draws:
        case = random_case(int(ss.spawn(1)[0].generate_state(1)[0]), h)
        draw += 1
        if not case.clamp_active:
            cases.append(case)
    return cases
