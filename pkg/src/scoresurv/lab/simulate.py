"""Synthetic data generators.

``aft_simple``
    ``log T = b0 + b1 x1 + b2 x2 + b3 x3 + sigma * eps`` with standard-normal
    features and ``eps`` from the error law of the chosen family.
``complex``
    Log-normal times with location
    ``2 + 0.5 x1 + sin(2 x2) + 0.3 x1 x3 + 0.4 x4^2`` and ``sigma = 0.4``.
``competing``
    Cause 1 latent time from ``complex``; cause 2 latent time log-normal with
    location ``2.2 + 0.4 x1`` and ``sigma = 0.4``. The earlier one is observed.

Censoring times are uniform on ``(0, c_max)``; ``c_max`` is set by bisection
on a 1e5-draw pilot so that the censoring probability matches the target
(28% by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from scoresurv import dist
from scoresurv.core import SurvivalDataset

PILOT_SIZE = 100_000
DEFAULT_BETA = (2.0, 0.5, 0.2, 0.0)
DEFAULT_SIGMA = 0.4
CENSORING_RATE = 0.28
CR_CAUSE2_BETA = (2.2, 0.4, 0.0, 0.0, 0.0)


@dataclass
class DgpConfig:
    kind: str = "aft_simple"
    family: str = "lognormal"
    n: int = 1500
    beta: tuple = DEFAULT_BETA
    sigma: float = DEFAULT_SIGMA
    censoring_rate: float = CENSORING_RATE
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.kind not in ("aft_simple", "complex", "competing"):
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if self.kind == "aft_simple":
            dist.spec(self.family)
            if len(self.beta) != 4:
                raise ValueError("beta must hold an intercept and 3 coefficients")
        if not 0 <= self.censoring_rate < 1:
            raise ValueError("censoring_rate must lie in [0, 1)")


def censoring_probability(y: np.ndarray, c_max: float) -> float:
    """``P(C < Y)`` for ``C ~ U(0, c_max)``, averaged over the draws ``y``."""
    return float(np.mean(np.minimum(y, c_max)) / c_max)


def calibrate_censoring(y_pilot: np.ndarray, target: float, iters: int = 20) -> float:
    """Upper bound ``c_max`` of uniform censoring hitting ``target`` rate.

    Bisection in log(c_max); the censoring probability decreases in c_max.
    """
    lo = math.log(np.min(y_pilot)) - 10.0
    hi = math.log(np.max(y_pilot)) + 10.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if censoring_probability(y_pilot, math.exp(mid)) > target:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def _aft_latent(X, beta, sigma, family, rng):
    eta = beta[0] + X @ np.asarray(beta[1:], dtype=float)
    eps = dist.spec(family).law.sample(rng, X.shape[0])
    return np.exp(eta + sigma * eps)


def complex_location(X) -> np.ndarray:
    x1, x2, x3, x4 = X.T
    return 2.0 + 0.5 * x1 + np.sin(2.0 * x2) + 0.3 * x1 * x3 + 0.4 * x4 ** 2


def _complex_latent(X, rng):
    return np.exp(complex_location(X) + DEFAULT_SIGMA * rng.standard_normal(X.shape[0]))


def _cr_latent(X, rng):
    y1 = _complex_latent(X, rng)
    b = np.asarray(CR_CAUSE2_BETA)
    y2 = np.exp(b[0] + X @ b[1:] + DEFAULT_SIGMA * rng.standard_normal(X.shape[0]))
    cause = np.where(y1 <= y2, 1, 2)
    return np.minimum(y1, y2), cause


def _latent(cfg: DgpConfig, n: int, rng):
    p = 3 if cfg.kind == "aft_simple" else 4
    X = rng.standard_normal((n, p))
    if cfg.kind == "aft_simple":
        return X, _aft_latent(X, cfg.beta, cfg.sigma, cfg.family, rng), np.ones(n, dtype=int)
    if cfg.kind == "complex":
        return X, _complex_latent(X, rng), np.ones(n, dtype=int)
    y, cause = _cr_latent(X, rng)
    return X, y, cause


def simulate(cfg: DgpConfig) -> SurvivalDataset:
    rng_pilot, rng_data, rng_cens = (np.random.default_rng([cfg.seed, s]) for s in range(3))
    X, y, cause = _latent(cfg, cfg.n, rng_data)
    if cfg.censoring_rate > 0:
        _, y_pilot, _ = _latent(cfg, PILOT_SIZE, rng_pilot)
        c = rng_cens.uniform(0.0, calibrate_censoring(y_pilot, cfg.censoring_rate), cfg.n)
    else:
        c = np.full(cfg.n, np.inf)
    status = (y <= c).astype(int)
    t = np.minimum(y, c)
    K = 2 if cfg.kind == "competing" else 1
    return SurvivalDataset(t, status, np.where(status == 1, cause, 1), X, K=K)


def simulate_aft(cfg: DgpConfig) -> SurvivalDataset:
    if cfg.kind != "aft_simple":
        cfg = DgpConfig(**{**cfg.__dict__, "kind": "aft_simple"})
    return simulate(cfg)


def simulate_complex(n: int, seed: int = 0, censoring_rate: float = CENSORING_RATE) -> SurvivalDataset:
    return simulate(DgpConfig(kind="complex", n=n, seed=seed, censoring_rate=censoring_rate))


def simulate_cr(n: int, seed: int = 0, censoring_rate: float = CENSORING_RATE) -> SurvivalDataset:
    return simulate(DgpConfig(kind="competing", n=n, seed=seed, censoring_rate=censoring_rate))
