"""Numerical diagnostics for a kernel family under a declared scaling ``a_n``.

An n-indexed quantity is summarised by its value at the largest grid point
together with a stability band: the largest deviation from that value over the
top half of the grid.  Nothing is extrapolated.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embedding import ScalingSequence
from .errors import DomainError, NotFound, Unstable
from .kernels import TransitionKernel

TEST_INTERVALS = (
    (-math.inf, -2.0),
    (-2.0, -1.0),
    (-1.0, -0.6),
    (-0.6, -0.3),
    (-0.3, -0.1),
    (0.1, 0.3),
    (0.3, 0.6),
    (0.6, 1.0),
    (1.0, 2.0),
    (2.0, math.inf),
)
SMALL_JUMP = 0.1  # |x| below this counts towards the Gaussian part
UNSTABLE_FRACTION = 0.1
ABS_TOL = 1e-3
SLOPE_THRESHOLD = 0.1


def geometric_grid(n_min: int, n_max: int, points: int = 25) -> np.ndarray:
    g = np.unique(np.round(np.geomspace(n_min, n_max, points)).astype(np.int64))
    return g


@dataclass
class Diagnostic:
    n_grid: np.ndarray
    values: np.ndarray

    @property
    def limit(self) -> float:
        return float(self.values[-1])

    @property
    def band(self) -> float:
        top = self.values[len(self.values) // 2 :]
        return float(np.max(np.abs(top - self.values[-1])))

    def stable(self, frac=UNSTABLE_FRACTION, atol=ABS_TOL, scale=0.0) -> bool:
        # band within frac of max(|limit|, scale), or below atol
        ref = max(abs(self.limit), scale)
        return bool(np.all(np.isfinite(self.values))) and self.band <= max(frac * ref, atol)

    def to_dict(self):
        return {
            "n": self.n_grid.tolist(),
            "values": [float(v) for v in self.values],
            "limit": self.limit,
            "band": self.band,
        }


def _log_steps(kernel, n):
    ks, ps = kernel.transition_row(int(n))
    return np.log1p((ks - n) / float(n)), ps


def _per_n(kernel, scaling, n_grid, fn):
    vals = []
    for n in n_grid:
        x, p = _log_steps(kernel, n)
        vals.append(float(scaling(n)) * fn(x, p))
    return Diagnostic(np.asarray(n_grid), np.asarray(vals))


def _interval_key(iv):
    return f"({iv[0]:g},{iv[1]:g})"


@dataclass
class TripletEstimate:
    b: Diagnostic
    second_moment: Diagnostic
    sigma2: Diagnostic
    mean: Diagnostic  # a_n * int x dPi*_n over all x, i.e. E[xi_1]
    mass_small: Diagnostic  # Pi*_n([-1, 1]) (unscaled)
    tails: dict

    @property
    def b_hat(self):
        return self.b.limit

    @property
    def sigma2_hat(self):
        return self.sigma2.limit

    def tail_table(self):
        return {k: v.limit for k, v in self.tails.items()}

    def drift_class(self, tol=1e-10):
        band = self.mean.band
        m = self.mean.limit
        if m > max(tol, band):
            return "drifts_up"
        if m < -max(tol, band):
            return "drifts_down"
        return "oscillates"


def estimate_limit_triplet(
    kernel: TransitionKernel,
    scaling: ScalingSequence,
    n_grid,
    frac: float = UNSTABLE_FRACTION,
    atol: float = ABS_TOL,
    strict: bool = True,
) -> TripletEstimate:
    """Estimates of ``b``, ``sigma^2`` and the tail masses of ``Pi``."""
    n_grid = np.asarray(n_grid, dtype=np.int64)
    if len(n_grid) < 4 or np.any(np.diff(n_grid) <= 0):
        raise DomainError("n_grid must be increasing with at least 4 points")
    inner = lambda x: np.abs(x) <= 1.0  # noqa: E731
    b = _per_n(kernel, scaling, n_grid, lambda x, p: float(np.sum(p * x * inner(x))))
    m2 = _per_n(kernel, scaling, n_grid, lambda x, p: float(np.sum(p * x * x * inner(x))))
    s2 = _per_n(kernel, scaling, n_grid, lambda x, p: float(np.sum(p * x * x * (np.abs(x) < SMALL_JUMP))))
    mean = _per_n(kernel, scaling, n_grid, lambda x, p: float(np.sum(p * x)))
    mass = Diagnostic(n_grid, np.array([float(np.sum(p * inner(x))) for x, p in (_log_steps(kernel, n) for n in n_grid)]))
    tails = {}
    for lo, hi in TEST_INTERVALS:
        tails[_interval_key((lo, hi))] = _per_n(
            kernel, scaling, n_grid, lambda x, p, lo=lo, hi=hi: float(np.sum(p * ((x > lo) & (x < hi))))
        )
    est = TripletEstimate(b, m2, s2, mean, mass, tails)
    if strict:
        for name, diag in (("b", b), ("sigma2", s2)):
            if not diag.stable(frac, atol):
                raise Unstable(f"{name}: band {diag.band:.3g} around {diag.limit:.6g}")
    return est


def exponential_moment_values(kernel, scaling, beta, n_grid):
    return _per_n(kernel, scaling, n_grid, lambda x, p: float(np.sum(p * np.exp(beta * x) * (x > 1.0))))


def check_exponential_moment(kernel, scaling, beta, n_grid, frac: float = UNSTABLE_FRACTION, atol: float = 1e-9):
    """``(sup_n a_n int_1^inf e^{beta x} dPi*_n, bounded)`` over the grid.

    Bounded means finite everywhere and the top-of-grid value not exceeding
    the maximum over the lower half of the grid (by more than ``frac``).
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    diag = exponential_moment_values(kernel, scaling, beta, n_grid)
    v = diag.values
    if not np.all(np.isfinite(v)):
        return math.inf, False
    lower = float(np.max(v[: max(len(v) // 2, 1)]))
    return float(np.max(v)), bool(v[-1] <= (1.0 + frac) * lower + atol)


@dataclass
class FosterResult:
    threshold: int
    limit: float
    band: float
    n_grid: np.ndarray
    values: np.ndarray


def foster_values(kernel, scaling, beta0, n_grid):
    return _per_n(kernel, scaling, n_grid, lambda x, p: float(np.sum(p * np.expm1(beta0 * x))))


def foster_threshold(kernel, scaling, beta0, n_max, dense_up_to: int = 2000, points: int = 40) -> FosterResult:
    """Smallest ``M`` with ``a_n int (e^{beta0 x} - 1) dPi*_n < 0`` for every evaluated ``n`` in ``(M, n_max]``.

    Every ``n <= dense_up_to`` is evaluated, larger ``n`` on a geometric grid.
    The returned limit (value at ``n_max``) estimates ``Psi(beta0)``.
    """
    if not beta0 > 0:
        raise DomainError("beta0 must be positive")
    dense = np.arange(1, min(dense_up_to, n_max) + 1)
    sparse = geometric_grid(max(dense_up_to, 1), n_max, points) if n_max > dense_up_to else np.zeros(0, np.int64)
    grid = np.unique(np.concatenate([dense, sparse]))
    diag = foster_values(kernel, scaling, beta0, grid)
    bad = np.nonzero(diag.values >= 0.0)[0]
    if len(bad) and bad[-1] == len(grid) - 1:
        raise NotFound(f"drift condition fails at n_max = {n_max}")
    threshold = int(grid[bad[-1]]) if len(bad) else 0
    top = geometric_grid(max(1, n_max // 1000), n_max, 25)
    band_diag = foster_values(kernel, scaling, beta0, top)
    return FosterResult(threshold, band_diag.limit, band_diag.band, grid, diag.values)


@dataclass
class NullRecurrence:
    N: np.ndarray
    partial_sums: np.ndarray
    slope: float
    diverging: bool


def null_recurrence_diagnostic(kernel, scaling, m: int, N_max: int = 10**4, points: int = 30) -> NullRecurrence:
    """Partial sums ``sum_{k <= N} a_k p_{m,k}`` and a log-log slope over the last decade."""
    if m < 1:
        raise DomainError("m must be >= 1")
    ks, ps = kernel.row_upto(m, N_max)
    terms = scaling(ks) * ps
    csum = np.cumsum(terms)
    N = geometric_grid(1, N_max, points)
    idx = np.searchsorted(ks, N, side="right") - 1
    sums = np.where(idx >= 0, csum[np.maximum(idx, 0)], 0.0)
    lo = max(N_max // 10, 1)
    i_lo = int(np.searchsorted(ks, lo, side="right")) - 1
    s_lo = csum[i_lo] if i_lo >= 0 else 0.0
    s_hi = csum[-1] if len(csum) else 0.0
    if s_lo <= 0 or s_hi <= 0 or N_max <= lo:
        slope = 0.0 if s_hi == s_lo else math.inf
    else:
        slope = math.log(s_hi / s_lo) / math.log(N_max / lo)
    return NullRecurrence(N, sums, slope, bool(slope > SLOPE_THRESHOLD))


@dataclass
class AssumptionReport:
    kernel: dict
    scaling: dict
    n_grid: list
    diagnostics: dict
    flags: dict
    regime: str
    evidence: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kernel": self.kernel,
                "scaling": self.scaling,
                "n_grid": self.n_grid,
                "diagnostics": self.diagnostics,
                "flags": self.flags,
                "regime": self.regime,
                "evidence": self.evidence,
                "notes": self.notes,
            },
            indent=2,
            default=float,
        )

    def table(self) -> str:
        lines = [f"{'diagnostic':<28}{'limit':>16}{'band':>14}"]
        for name, d in self.diagnostics.items():
            lines.append(f"{name:<28}{d['limit']:>16.6g}{d['band']:>14.3g}")
        lines.append("")
        for k, v in self.flags.items():
            lines.append(f"{k}: {'pass' if v else 'FAIL'}")
        lines.append(f"regime: {self.regime}")
        return "\n".join(lines)


@dataclass
class RegimeConfig:
    n_grid: Optional[list] = None
    betas: tuple = (0.5, 1.0, 2.0)
    beta0_factors: tuple = (1.05, 1.1, 1.25, 1.5, 2.0)
    foster_n_max: int = 10**5


def _default_grid(scaling):
    return geometric_grid(10, 10**5, 21)


def classify_regime(kernel, scaling, config: Optional[RegimeConfig] = None):
    """``(regime, evidence)`` with regime in transient / recurrent / positive_recurrent."""
    report = assumption_report(kernel, scaling, config)
    return report.regime, report.evidence


def assumption_report(kernel, scaling, config: Optional[RegimeConfig] = None) -> AssumptionReport:
    config = config or RegimeConfig()
    grid = np.asarray(config.n_grid if config.n_grid is not None else _default_grid(scaling), dtype=np.int64)
    est = estimate_limit_triplet(kernel, scaling, grid)
    diags = {"b": est.b, "second_moment": est.second_moment, "sigma2": est.sigma2, "mean": est.mean}
    for k, v in est.tails.items():
        diags[f"tail{k}"] = v
    # tail bands are judged against the total tested jump mass
    total = sum(abs(v.limit) for v in est.tails.values())
    a1 = all(v.stable(scale=total) for v in est.tails.values())
    a2 = est.b.stable() and est.sigma2.stable()

    evidence = {"drift": est.drift_class(), "mean": est.mean.limit, "b_hat": est.b_hat, "sigma2_hat": est.sigma2_hat}
    a3_betas = []
    for beta in config.betas:
        sup, ok = check_exponential_moment(kernel, scaling, beta, grid)
        if ok:
            a3_betas.append(beta)
    a3 = bool(a3_betas)
    evidence["a3_betas"] = a3_betas

    a4_beta0 = None
    for f in config.beta0_factors:
        beta0 = f * scaling.gamma
        _, ok = check_exponential_moment(kernel, scaling, beta0, grid)
        if not ok:
            continue
        try:
            res = foster_threshold(kernel, scaling, beta0, config.foster_n_max)
        except NotFound:
            continue
        if res.limit + res.band < 0:
            a4_beta0 = beta0
            evidence["foster"] = {"beta0": beta0, "threshold": res.threshold, "limit": res.limit, "band": res.band}
            break
    a4 = a4_beta0 is not None
    # finite rows give E[X_n(1)^beta0] < inf for every n
    a5 = a4
    flags = {"A1": bool(a1), "A2": bool(a2), "A3": a3, "A4": a4, "A5": bool(a5)}

    if evidence["drift"] != "drifts_down":
        regime = "transient"
    elif a4:
        regime = "positive_recurrent"
    else:
        regime = "recurrent"
    try:
        kcfg = kernel.to_config()
    except (NotImplementedError, ValueError):
        kcfg = {"family": kernel.family}
    return AssumptionReport(
        kernel=kcfg,
        scaling=scaling.to_config(),
        n_grid=grid.tolist(),
        diagnostics={k: v.to_dict() for k, v in diags.items()},
        flags=flags,
        regime=regime,
        evidence=evidence,
        notes=["(A1) checked on a finite family of intervals: consistent with, not a proof of, vague convergence"],
    )
