"""Survival and censoring laws: closed forms, inverse-CDF sampling, JSON specs.

Every survival law exposes vectorized cdf / sf / pdf / hazard / cumhaz and a
``sample`` method.  Sampling is inverse-CDF (lognormal goes through a
transformed normal draw), so a law consumes a predictable amount of the
generator stream.  ``law_from_dict`` / ``law_to_dict`` define the JSON
vocabulary used by scenario and population files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import CasanovaError

_TINY = np.finfo(float).tiny  # keeps sampled times strictly positive


class LawError(CasanovaError, ValueError):
    """Invalid law parameters or specification."""


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise LawError(f"exponential rate must be positive, got {self.rate}")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, -np.expm1(-self.rate * np.maximum(t, 0.0)), 0.0)

    def sf(self, t):
        return 1.0 - self.cdf(t)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, self.rate * np.exp(-self.rate * np.maximum(t, 0.0)), 0.0)

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.rate)

    def cumhaz(self, t):
        return self.rate * np.maximum(np.asarray(t, dtype=float), 0.0)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        return -np.log1p(-q) / self.rate

    def sample(self, rng, size):
        return np.maximum(self.ppf(rng.random(size)), _TINY)

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Weibull:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise LawError("weibull shape and scale must be positive")

    def cumhaz(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return (t / self.scale) ** self.shape

    def cdf(self, t):
        return -np.expm1(-self.cumhaz(t))

    def sf(self, t):
        return np.exp(-self.cumhaz(t))

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            h = (self.shape / self.scale) * (t / self.scale) ** (self.shape - 1.0)
        return np.where(t > 0, h, 0.0 if self.shape > 1 else np.inf)

    def pdf(self, t):
        return self.hazard(t) * self.sf(t)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        return self.scale * (-np.log1p(-q)) ** (1.0 / self.shape)

    def sample(self, rng, size):
        return np.maximum(self.ppf(rng.random(size)), _TINY)

    def to_dict(self):
        return {"kind": "weibull", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class LogNormal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise LawError("lognormal sigma must be positive")

    def _z(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t > 0, (np.log(np.maximum(t, _TINY)) - self.mu) / self.sigma, -np.inf)

    def cdf(self, t):
        return ndtr(self._z(t))

    def sf(self, t):
        return ndtr(-self._z(t))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        z = self._z(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.exp(-0.5 * z * z) / (t * self.sigma * np.sqrt(2.0 * np.pi))
        return np.where(t > 0, dens, 0.0)

    def hazard(self, t):
        sf = self.sf(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = self.pdf(t) / sf
        return np.where(sf > 0, h, np.inf)

    def cumhaz(self, t):
        sf = np.maximum(self.sf(t), _TINY)
        return -np.log(sf)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        return np.exp(self.mu + self.sigma * ndtri(q))

    def sample(self, rng, size):
        z = rng.standard_normal(size)
        return np.maximum(np.exp(self.mu + self.sigma * z), _TINY)

    def to_dict(self):
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class PiecewiseHazard:
    """Piecewise-constant hazard: rates[i] on [breaks[i-1], breaks[i]).

    ``rates`` has one more entry than ``breaks``; the final rate applies on
    the unbounded tail and must be positive so the law stays proper.
    """

    breaks: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != len(breaks) + 1:
            raise LawError("need exactly one more rate than breaks")
        if any(b <= 0 for b in breaks) or any(
            b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])
        ):
            raise LawError("breaks must be positive and strictly increasing")
        if any(r < 0 for r in rates) or rates[-1] <= 0:
            raise LawError("rates must be nonnegative with a positive tail rate")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "rates", rates)

    def _edges(self):
        return np.concatenate(([0.0], self.breaks))

    def cumhaz(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        edges = self._edges()
        rates = np.asarray(self.rates)
        cum_at_edges = np.concatenate(([0.0], np.cumsum(rates[:-1] * np.diff(edges))))
        idx = np.searchsorted(edges, t, side="right") - 1
        return cum_at_edges[idx] + rates[idx] * (t - edges[idx])

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self._edges(), np.maximum(t, 0.0), side="right") - 1
        return np.asarray(self.rates)[idx]

    def sf(self, t):
        return np.exp(-self.cumhaz(t))

    def cdf(self, t):
        return -np.expm1(-self.cumhaz(t))

    def pdf(self, t):
        return self.hazard(t) * self.sf(t)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        target = -np.log1p(-q)
        edges = self._edges()
        rates = np.asarray(self.rates)
        cum = np.concatenate(([0.0], np.cumsum(rates[:-1] * np.diff(edges))))
        idx = np.minimum(np.searchsorted(cum, target, side="right") - 1, len(rates) - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = (target - cum[idx]) / rates[idx]
        # a zero-rate segment cannot be the inversion segment unless the
        # target sits exactly on its left edge
        return edges[idx] + np.where(target > cum[idx], extra, 0.0)

    def sample(self, rng, size):
        return np.maximum(self.ppf(rng.random(size)), _TINY)

    def to_dict(self):
        return {"kind": "piecewise_hazard", "breaks": list(self.breaks), "rates": list(self.rates)}


@dataclass(frozen=True)
class TabulatedHazard:
    """Law given by its cumulative hazard on a grid, linear in between.

    Used for locally perturbed laws whose cumulative hazard is only known
    numerically.  Beyond the last grid point the hazard continues at the
    final slope; tables are built to reach negligible survival mass, so the
    extrapolated tail carries essentially no probability.
    """

    times: np.ndarray
    cumhaz_values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        h = np.asarray(self.cumhaz_values, dtype=float)
        if t.ndim != 1 or t.shape != h.shape or t.size < 2:
            raise LawError("tabulated law needs matching 1-d grids of length >= 2")
        if t[0] != 0.0 or h[0] != 0.0 or np.any(np.diff(t) <= 0) or np.any(np.diff(h) < 0):
            raise LawError("tabulated cumulative hazard must start at (0, 0) and be monotone")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "cumhaz_values", h)

    def _tail_slope(self):
        dt = self.times[-1] - self.times[-2]
        dh = self.cumhaz_values[-1] - self.cumhaz_values[-2]
        slope = dh / dt if dt > 0 else 0.0
        return max(slope, 1e-12)

    def cumhaz(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        inside = np.interp(t, self.times, self.cumhaz_values)
        tail = self.cumhaz_values[-1] + self._tail_slope() * (t - self.times[-1])
        return np.where(t <= self.times[-1], inside, tail)

    def hazard(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        slopes = np.diff(self.cumhaz_values) / np.diff(self.times)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, slopes.size - 1)
        return np.where(t <= self.times[-1], slopes[idx], self._tail_slope())

    def pdf(self, t):
        return self.hazard(t) * self.sf(t)

    def sf(self, t):
        return np.exp(-self.cumhaz(t))

    def cdf(self, t):
        return -np.expm1(-self.cumhaz(t))

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        target = -np.log1p(-q)
        inside = np.interp(target, self.cumhaz_values, self.times)
        tail = self.times[-1] + (target - self.cumhaz_values[-1]) / self._tail_slope()
        return np.where(target <= self.cumhaz_values[-1], inside, tail)

    def sample(self, rng, size):
        return np.maximum(self.ppf(rng.random(size)), _TINY)

    def to_dict(self):
        return {
            "kind": "tabulated_hazard",
            "times": [float(x) for x in self.times],
            "cumhaz": [float(x) for x in self.cumhaz_values],
        }


@dataclass(frozen=True)
class UniformCensoring:
    """Censoring uniform on [0, upper]."""

    upper: float

    def __post_init__(self):
        if not (self.upper > 0 and np.isfinite(self.upper)):
            raise LawError("censoring upper bound must be positive and finite")

    def cdf(self, t):
        return np.clip(np.asarray(t, dtype=float) / self.upper, 0.0, 1.0)

    def sf(self, t):
        return 1.0 - self.cdf(t)

    @property
    def support_end(self):
        return self.upper

    def sample(self, rng, size):
        return np.maximum(rng.random(size) * self.upper, _TINY)

    def to_dict(self):
        return {"kind": "uniform", "upper": self.upper}


@dataclass(frozen=True)
class NoCensoring:
    def cdf(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def sf(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    @property
    def support_end(self):
        return np.inf

    def sample(self, rng, size):
        return np.full(size, np.inf)

    def to_dict(self):
        return {"kind": "none"}


_SURVIVAL_KINDS = {
    "exponential": lambda d: Exponential(rate=float(d["rate"])),
    "weibull": lambda d: Weibull(shape=float(d["shape"]), scale=float(d["scale"])),
    "lognormal": lambda d: LogNormal(mu=float(d["mu"]), sigma=float(d["sigma"])),
    "piecewise_hazard": lambda d: PiecewiseHazard(
        breaks=tuple(d["breaks"]), rates=tuple(d["rates"])
    ),
    "tabulated_hazard": lambda d: TabulatedHazard(
        times=np.asarray(d["times"], dtype=float),
        cumhaz_values=np.asarray(d["cumhaz"], dtype=float),
    ),
}

_CENSORING_KINDS = {
    "uniform": lambda d: UniformCensoring(upper=float(d["upper"])),
    "none": lambda d: NoCensoring(),
}


def law_from_dict(spec: dict):
    """Instantiate a survival law from its JSON dictionary form."""
    try:
        kind = spec["kind"]
    except (TypeError, KeyError) as exc:
        raise LawError(f"law spec needs a 'kind' entry: {spec!r}") from exc
    if kind not in _SURVIVAL_KINDS:
        raise LawError(f"unknown survival law kind {kind!r}")
    try:
        return _SURVIVAL_KINDS[kind](spec)
    except KeyError as exc:
        raise LawError(f"law spec {spec!r} is missing {exc}") from exc


def censoring_from_dict(spec: dict):
    """Instantiate a censoring law; None or {'kind': 'none'} mean no censoring."""
    if spec is None:
        return NoCensoring()
    kind = spec.get("kind")
    if kind not in _CENSORING_KINDS:
        raise LawError(f"unknown censoring law kind {kind!r}")
    try:
        return _CENSORING_KINDS[kind](spec)
    except KeyError as exc:
        raise LawError(f"censoring spec {spec!r} is missing {exc}") from exc


def law_to_dict(law) -> dict:
    return law.to_dict()
