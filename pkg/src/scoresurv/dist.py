"""Parametric event-time families in accelerated-failure-time form.

Every family is written as ``log T = mu + sigma * eps`` with a standard error
law for ``eps``:

==============  ===========================================
family          error law of ``eps``
==============  ===========================================
``weibull``     minimum extreme value, ``F(z) = 1 - exp(-e^z)``
``lognormal``   standard normal
``loglogistic`` standard logistic
==============  ===========================================

Parameters are carried unconstrained as ``(mu, log sigma)``. All public
functions are vectorized over ``t`` and over the leading axes of ``theta``
(``theta[..., 0]`` is ``mu``, ``theta[..., 1]`` is ``log sigma``).

The ``*_z`` helpers at the bottom evaluate the error law on a standardized
residual that may be an :class:`~scoresurv.engine.Var`; models use them to
put a distributional output layer on the tape.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from scoresurv import engine

LOG_FLOOR = math.log(1e-12)
Z_CLIP = 40.0
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class Family(str, enum.Enum):
    WEIBULL = "weibull"
    LOGNORMAL = "lognormal"
    LOGLOGISTIC = "loglogistic"


@dataclass(frozen=True)
class DistributionSpec:
    family: Family
    m: int = 2

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.m != 2:
            raise ValueError("only two-parameter families are supported")

    @property
    def name(self) -> str:
        return self.family.value

    @property
    def law(self) -> "ErrorLaw":
        return LAWS[self.family]


def spec(family) -> DistributionSpec:
    return family if isinstance(family, DistributionSpec) else DistributionSpec(Family(family))


@dataclass(frozen=True)
class ParamVector:
    """Unconstrained ``(mu, log sigma)``; ``sigma`` is always positive."""

    values: tuple[float, float]

    @classmethod
    def from_constrained(cls, mu: float, sigma: float) -> "ParamVector":
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        return cls((float(mu), math.log(sigma)))

    @property
    def mu(self) -> float:
        return self.values[0]

    @property
    def sigma(self) -> float:
        return math.exp(self.values[1])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype or float)


# error laws ---------------------------------------------------------------
# Each law provides log F, log S, log f of the standardized residual z and
# their z-derivatives.


class ErrorLaw:
    clip: float | None = None

    def prep(self, z):
        return np.clip(z, -self.clip, self.clip) if self.clip else z

    def in_range(self, z):
        if self.clip is None:
            return np.ones_like(z)
        return (np.abs(z) <= self.clip).astype(float)

    def sample(self, rng, size):
        raise NotImplementedError


class _Normal(ErrorLaw):
    def log_cdf(self, z):
        return special.log_ndtr(z)

    def log_sf(self, z):
        return special.log_ndtr(-z)

    def log_pdf(self, z):
        return -0.5 * z * z - _LOG_SQRT_2PI

    def dlog_cdf(self, z):
        return np.exp(self.log_pdf(z) - self.log_cdf(z))

    def dlog_sf(self, z):
        return -np.exp(self.log_pdf(z) - self.log_sf(z))

    def dlog_pdf(self, z):
        return -z

    def sample(self, rng, size):
        return rng.standard_normal(size)


class _Logistic(ErrorLaw):
    def log_cdf(self, z):
        return -np.logaddexp(0.0, -z)

    def log_sf(self, z):
        return -np.logaddexp(0.0, z)

    def log_pdf(self, z):
        return self.log_cdf(z) + self.log_sf(z)

    def dlog_cdf(self, z):
        return special.expit(-z)

    def dlog_sf(self, z):
        return -special.expit(z)

    def dlog_pdf(self, z):
        return 1.0 - 2.0 * special.expit(z)

    def sample(self, rng, size):
        return rng.logistic(size=size)


class _MinExtreme(ErrorLaw):
    clip = Z_CLIP

    def log_cdf(self, z):
        z = self.prep(z)
        return np.log(-np.expm1(-np.exp(z)))

    def log_sf(self, z):
        return -np.exp(self.prep(z))

    def log_pdf(self, z):
        z = self.prep(z)
        return z - np.exp(z)

    def dlog_cdf(self, z):
        zc = self.prep(z)
        return np.exp(zc - np.exp(zc) - self.log_cdf(zc)) * self.in_range(z)

    def dlog_sf(self, z):
        return -np.exp(self.prep(z)) * self.in_range(z)

    def dlog_pdf(self, z):
        return (1.0 - np.exp(self.prep(z))) * self.in_range(z)

    def sample(self, rng, size):
        # log of a unit exponential is minimum-extreme-value distributed
        return np.log(rng.standard_exponential(size))


LAWS = {
    Family.WEIBULL: _MinExtreme(),
    Family.LOGNORMAL: _Normal(),
    Family.LOGLOGISTIC: _Logistic(),
}


# distribution functions ---------------------------------------------------


def _split(theta, t):
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be > 0")
    mu, s = theta[..., 0], theta[..., 1]
    z = (np.log(t) - mu) / np.exp(s)
    return mu, s, t, z


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def log_cdf(sp, theta, t):
    law = spec(sp).law
    _, _, _, z = _split(theta, t)
    return _out(np.maximum(law.log_cdf(z), LOG_FLOOR))


def log_sf(sp, theta, t):
    law = spec(sp).law
    _, _, _, z = _split(theta, t)
    return _out(np.maximum(law.log_sf(z), LOG_FLOOR))


def log_pdf(sp, theta, t):
    law = spec(sp).law
    _, s, t, z = _split(theta, t)
    return _out(law.log_pdf(z) - s - np.log(t))


def cdf(sp, theta, t):
    law = spec(sp).law
    _, _, _, z = _split(theta, t)
    return _out(np.exp(law.log_cdf(z)))


def sf(sp, theta, t):
    return _out(1.0 - np.asarray(cdf(sp, theta, t)))


def pdf(sp, theta, t):
    return _out(np.exp(np.asarray(log_pdf(sp, theta, t))))


def grad_theta(sp, theta, t, which: str = "cdf"):
    """Gradient of ``which`` with respect to unconstrained ``(mu, log sigma)``.

    Returns an array with a trailing axis of length 2.
    """
    law = spec(sp).law
    _, s, t, z = _split(theta, t)
    sigma = np.exp(s)
    dz = np.stack(np.broadcast_arrays(-1.0 / sigma, -z), axis=-1)
    if which == "cdf":
        dq = np.exp(law.log_pdf(law.prep(z))) * law.in_range(z)
    elif which == "sf":
        dq = -np.exp(law.log_pdf(law.prep(z))) * law.in_range(z)
    elif which == "log_cdf":
        dq = law.dlog_cdf(z) * (law.log_cdf(z) > LOG_FLOOR)
    elif which == "log_sf":
        dq = law.dlog_sf(z) * (law.log_sf(z) > LOG_FLOOR)
    elif which == "log_pdf":
        g = law.dlog_pdf(z)[..., None] * dz
        g[..., 1] -= 1.0
        return g
    elif which == "pdf":
        g = grad_theta(sp, theta, t, "log_pdf")
        return g * np.asarray(pdf(sp, theta, t))[..., None]
    else:
        raise ValueError(f"unknown quantity {which!r}")
    return np.asarray(dq)[..., None] * dz


def sample(sp, theta, size, rng: np.random.Generator):
    theta = np.asarray(theta, dtype=float)
    eps = spec(sp).law.sample(rng, size)
    return np.exp(theta[..., 0] + np.exp(theta[..., 1]) * eps)


def median(sp, theta):
    theta = np.asarray(theta, dtype=float)
    z50 = math.log(math.log(2.0)) if spec(sp).family is Family.WEIBULL else 0.0
    return _out(np.exp(theta[..., 0] + np.exp(theta[..., 1]) * z50))


# tape-aware versions on the standardized residual -------------------------


def log_cdf_z(sp, z):
    law = spec(sp).law
    return engine.clamp(engine.apply(z, law.log_cdf, law.dlog_cdf, "log_cdf"), LOG_FLOOR, None)


def log_sf_z(sp, z):
    law = spec(sp).law
    return engine.clamp(engine.apply(z, law.log_sf, law.dlog_sf, "log_sf"), LOG_FLOOR, None)


def log_pdf_z(sp, z):
    law = spec(sp).law
    return engine.apply(z, law.log_pdf, law.dlog_pdf, "log_pdf")


def cdf_z(sp, z):
    law = spec(sp).law
    return engine.apply(
        z, lambda v: np.exp(law.log_cdf(v)),
        lambda v: np.exp(law.log_pdf(law.prep(v))) * law.in_range(v), "cdf",
    )
