"""Reference laws and test statistics used by the acceptance experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError

# Lanczos approximation, g = 7, nine coefficients
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def log_gamma(x: float) -> float:
    """``ln Gamma(x)`` for ``x > 0``."""
    if not x > 0:
        raise DomainError(f"log_gamma needs x > 0, got {x}")
    if x < 0.5:
        # reflection keeps the series in its accurate range
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS[0]
    for i in range(1, 9):
        acc += _LANCZOS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(acc)


def _gamma_series(a, x):
    # lower regularized P(a, x) by its power series
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - log_gamma(a))


def _gamma_cf(a, x):
    # upper regularized Q(a, x) by the modified Lentz continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - log_gamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma ``Q(a, x)``."""
    if not a > 0 or x < 0:
        raise DomainError("gamma_q needs a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def inverse_gamma_cdf(x: float, r: float, s2: float = 1.0) -> float:
    """``P(1 / (2 s2 G) <= x)`` with ``G ~ Gamma((1+r)/2, 1)``."""
    if not (r > -1 and s2 > 0):
        raise DomainError("need r > -1 and s2 > 0")
    if math.isinf(x):
        return 1.0
    if not x > 0:
        raise DomainError(f"inverse_gamma_cdf needs x > 0, got {x}")
    return gamma_q((1.0 + r) / 2.0, 1.0 / (2.0 * s2 * x))


def inverse_gamma_moment(r: float, s2: float, q: float) -> float:
    """``E[(2 s2 G)^{-q}] = (2 s2)^{-q} Gamma(k - q) / Gamma(k)``, ``k = (1+r)/2``."""
    k = (1.0 + r) / 2.0
    if not 0 <= q < k:
        raise DomainError(f"moment of order {q} needs 0 <= q < {k}")
    return math.exp(-q * math.log(2.0 * s2) + log_gamma(k - q) - log_gamma(k))


@dataclass(frozen=True)
class EmpiricalDistribution:
    values: np.ndarray

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=float).ravel())
        if v.size < 1:
            raise DomainError("empirical distribution needs at least one value")
        object.__setattr__(self, "values", v)

    @property
    def size(self):
        return self.values.size

    def cdf(self, x):
        return np.searchsorted(self.values, x, side="right") / self.size


def _as_empirical(s):
    return s if isinstance(s, EmpiricalDistribution) else EmpiricalDistribution(s)


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """``P(K > lam)`` for the Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    if lam < 0.2:
        return 1.0
    total = 0.0
    for k in range(1, max(terms, 10) + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < 1e-18:
            break
    return min(max(2.0 * total, 0.0), 1.0)


def ks_critical(n_eff: float, alpha: float = 0.01) -> float:
    """Asymptotic critical distance ``lam_alpha / sqrt(n_eff)``."""
    lam = brentq(lambda l: kolmogorov_sf(l) - alpha, 0.2, 10.0, xtol=1e-14)
    return lam / math.sqrt(n_eff)


def ks_one_sample(sample, cdf: Callable[[float], float]):
    """``(D, p)``: sup distance between the ECDF and ``cdf`` and its asymptotic p-value."""
    e = _as_empirical(sample)
    n = e.size
    f = np.array([cdf(v) for v in e.values])
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - f)), float(np.max(f - (i - 1) / n)))
    d = min(max(d, 0.0), 1.0)
    return d, kolmogorov_sf(math.sqrt(n) * d)


def ks_two_sample(a, b):
    """``(D, p)`` of the two-sample test with effective size ``nm/(n+m)``."""
    a, b = _as_empirical(a), _as_empirical(b)
    pooled = np.concatenate([a.values, b.values])
    d = float(np.max(np.abs(a.cdf(pooled) - b.cdf(pooled))))
    n_eff = a.size * b.size / (a.size + b.size)
    return d, kolmogorov_sf(math.sqrt(n_eff) * d)


def mean_ci(sample, level: float = 0.95):
    """``(mean, half_width)`` of the normal-approximation interval."""
    x = np.asarray(sample, dtype=float)
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    if x.size and np.ptp(x) == 0:
        return float(x[0]), 0.0  # avoid rounding noise in the spread of a constant sample
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return float(np.mean(x)), z * sd / math.sqrt(x.size)
