"""Levy triplets, their exponents, path simulation and the Lamperti transform.

The truncation function of the Levy-Khintchine formula is ``x 1_{|x| <= 1}``
throughout, so ``b`` is the compensated drift.  Paths are simulated on a
uniform grid: Gaussian increments carry the drift, the diffusion and (by
variance matching) the jumps smaller than ``epsilon``; larger jumps are added
as a compound Poisson process at the end of the cell they fall in.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import (
    DomainError,
    ExponentDiverges,
    HorizonTooShort,
    Indeterminate,
    TailUnbounded,
)

ZERO_TOL = 1e-10


@dataclass(frozen=True)
class Density:
    """A jump density ``f`` on ``(lo, hi)``.

    ``exp_domain`` is the interval of ``lam`` for which
    ``int_{|x|>1} e^{lam x} f(x) dx`` is finite; ``None`` means "any".
    """

    lo: float
    hi: float
    f: Callable[[float], float]
    exp_domain: Optional[tuple] = None


def _times(g, f, x):
    fx = f(x)
    return 0.0 if fx == 0.0 else g(x) * fx


def _quad(g, lo, hi):
    val, _ = integrate.quad(g, lo, hi, limit=400, epsabs=1e-13, epsrel=1e-11)
    return val


@dataclass(frozen=True)
class JumpMeasure:
    atoms: tuple = ()
    densities: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(x), float(w)) for x, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "densities", tuple(self.densities))
        for x, w in atoms:
            if x == 0.0 or not math.isfinite(x):
                raise DomainError(f"atom location {x} not allowed")
            if abs(abs(x) - 1.0) < 1e-15:
                raise DomainError("atoms at +/-1 are excluded by convention")
            if w <= 0.0:
                raise DomainError("atom masses must be positive")
        small_g = lambda x: min(1.0, x * x)  # noqa: E731
        if self.diverges(small_g) or not math.isfinite(self.integrate(small_g)):
            raise DomainError("jump measure violates int (1 ^ x^2) dPi < inf")

    @property
    def is_zero(self):
        return not self.atoms and not self.densities

    @property
    def is_atomic(self):
        return not self.densities

    def integrate(self, g, lo=-math.inf, hi=math.inf, *, breaks=(-1.0, 0.0, 1.0)):
        """``int_{(lo, hi)} g dPi``; atoms exactly, densities by adaptive quadrature."""
        total = math.fsum(w * g(x) for x, w in self.atoms if lo < x < hi)
        for dens in self.densities:
            a, b = max(lo, dens.lo), min(hi, dens.hi)
            if a >= b:
                continue
            cuts = [a] + [c for c in breaks if a < c < b] + [b]
            for u, v in zip(cuts[:-1], cuts[1:]):
                total += _quad(lambda x, f=dens.f: _times(g, f, x), u, v)
        return total

    def diverges(self, g, lo=-math.inf, hi=math.inf):
        """True when ``int_{(lo, hi)} g dPi`` diverges at 0 or at infinity.

        Quadrature returns finite numbers for divergent integrals, so the
        density parts are probed on geometric shells: a convergent integral
        has shell contributions that eventually shrink.
        """
        for dens in self.densities:
            a, b = max(lo, dens.lo), min(hi, dens.hi)
            if a >= b:
                continue
            h = lambda x, f=dens.f: abs(_times(g, f, x))  # noqa: E731
            ends = []
            if math.isinf(b):
                ends.append(lambda k: (max(a, 10.0**k), 10.0 ** (k + 1)))
            if math.isinf(a):
                ends.append(lambda k: (-(10.0 ** (k + 1)), min(b, -(10.0**k))))
            if a <= 0.0 < b:
                ends.append(lambda k: (10.0 ** -(k + 1), min(b, 10.0**-k)))
            if a < 0.0 <= b:
                ends.append(lambda k: (max(a, -(10.0**-k)), -(10.0 ** -(k + 1))))
            for shell in ends:
                s = [_quad(h, *shell(k)) if shell(k)[0] < shell(k)[1] else 0.0 for k in range(2, 10)]
                if s[-1] > 1e-9 * max(1.0, sum(s)) and s[-1] > 0.9 * s[-2]:
                    return True
        return False

    def mass(self, lo, hi):
        return self.integrate(lambda x: 1.0, lo, hi)

    def exp_moment_finite(self, lam):
        for dens in self.densities:
            if dens.exp_domain is not None:
                lmin, lmax = dens.exp_domain
                if not lmin < lam < lmax:
                    return False
        return True


@dataclass(frozen=True)
class LevyTriplet:
    sigma2: float = 0.0
    b: float = 0.0
    jumps: JumpMeasure = field(default_factory=JumpMeasure)
    gamma: float = 1.0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise DomainError("sigma2 must be >= 0")
        if not self.gamma > 0:
            raise DomainError("gamma must be > 0")

    def to_config(self):
        if self.jumps.densities:
            raise ValueError("triplets with densities are not serialisable")
        return {
            "sigma2": self.sigma2,
            "b": self.b,
            "atoms": [list(a) for a in self.jumps.atoms],
            "gamma": self.gamma,
        }


def triplet_from_config(cfg: dict) -> LevyTriplet:
    beta = cfg.get("lambda_beta")
    if beta is not None:
        # a Beta-Lambda fragmentation-coagulation limit written out as a triplet
        return fragcoag_triplet((), tuple(beta), tuple(tuple(e) for e in cfg.get("mu", [[1, 1.0]])))
    return LevyTriplet(
        sigma2=float(cfg.get("sigma2", 0.0)),
        b=float(cfg.get("b", 0.0)),
        jumps=JumpMeasure(atoms=tuple(tuple(a) for a in cfg.get("atoms", ()))),
        gamma=float(cfg.get("gamma", 1.0)),
    )


def laplace_exponent(triplet: LevyTriplet, lam: float) -> float:
    """``Psi(lam) = log E[exp(lam xi_1)]``."""
    lam = float(lam)
    if lam == 0.0:
        return 0.0
    jm = triplet.jumps
    if not jm.exp_moment_finite(lam):
        raise ExponentDiverges(f"exponential moment of order {lam} is infinite")
    with np.errstate(over="raise"):
        try:
            jump_part = jm.integrate(lambda x: math.expm1(lam * x) - (lam * x if abs(x) <= 1.0 else 0.0))
        except (OverflowError, FloatingPointError) as exc:
            raise ExponentDiverges(str(exc)) from exc
    if not math.isfinite(jump_part):
        raise ExponentDiverges(f"exponential moment of order {lam} is infinite")
    return 0.5 * triplet.sigma2 * lam * lam + triplet.b * lam + jump_part


def char_exponent(triplet: LevyTriplet, lam: float) -> complex:
    """``Phi(lam)`` with ``E[exp(i lam xi_t)] = exp(t Phi(lam))``."""
    lam = float(lam)
    if lam == 0.0:
        return 0j
    jm = triplet.jumps
    re = jm.integrate(lambda x: math.cos(lam * x) - 1.0)
    im = jm.integrate(lambda x: math.sin(lam * x) - (lam * x if abs(x) <= 1.0 else 0.0))
    return complex(-0.5 * triplet.sigma2 * lam * lam + re, triplet.b * lam + im)


def mean_at_one(triplet: LevyTriplet) -> float:
    """``E[xi_1] = b + int_{|x|>1} x dPi`` (may be +/-inf)."""
    jm = triplet.jumps
    ident = lambda x: x  # noqa: E731
    up = math.inf if jm.diverges(ident, 1.0, math.inf) else jm.integrate(ident, 1.0, math.inf)
    down = -math.inf if jm.diverges(ident, -math.inf, -1.0) else jm.integrate(ident, -math.inf, -1.0)
    if math.isinf(up) and math.isinf(down):
        raise Indeterminate("both tails of Pi have infinite first moment")
    return triplet.b + up + down


def classify_drift(triplet: LevyTriplet, tol: float = ZERO_TOL) -> str:
    mean = mean_at_one(triplet)
    if mean > tol:
        return "drifts_up"
    if mean < -tol:
        return "drifts_down"
    return "oscillates"


def fragcoag_triplet(lam_atoms, lam_beta, mu) -> LevyTriplet:
    """Limit triplet of the fragmentation-coagulation block-count chain (a_n = n).

    Pi is the image of ``x^{-2} Lambda(dx)`` by ``x -> ln(1-x)`` divided by
    ``mu(N)``, and the finite-variation drift is ``m / mu(N)``.
    """
    mu_total = sum(w for _, w in mu)
    m = sum(j * w for j, w in mu)
    if mu_total <= 0:
        raise DomainError("mu must have positive mass")
    atoms = []
    for x, w in lam_atoms:
        if x >= 1.0:
            raise DomainError("Lambda atom at 1 produces killing; not supported")
        atoms.append((math.log1p(-x), w / (x * x) / mu_total))
    densities = []
    if lam_beta is not None:
        from scipy.special import betaln

        a, bb, mass = lam_beta
        lognorm = math.log(mass) - betaln(a, bb) - math.log(mu_total)

        def dens(y, a=a, bb=bb, lognorm=lognorm):
            x = -math.expm1(y)
            if x <= 0.0 or x >= 1.0:
                return 0.0
            return math.exp(lognorm + (a - 3.0) * math.log(x) + (bb - 1.0) * y + y)

        densities.append(Density(-math.inf, 0.0, dens, exp_domain=(-bb, math.inf)))
    jm = JumpMeasure(atoms=tuple(atoms), densities=tuple(densities))
    compensation = jm.integrate(lambda y: y, -1.0, 0.0)
    return LevyTriplet(sigma2=0.0, b=m / mu_total + compensation, jumps=jm, gamma=1.0)


# ---------------------------------------------------------------------------
# simulation


class _BigJumps:
    """Compound Poisson part: jumps with ``|x| >= eps``."""

    def __init__(self, jm: JumpMeasure, eps: float, grid_points: int = 8192):
        self.locs = np.array([x for x, _ in jm.atoms if abs(x) >= eps], dtype=float)
        self.atom_rates = np.array([w for x, w in jm.atoms if abs(x) >= eps], dtype=float)
        self.pieces = []
        for dens in jm.densities:
            for lo, hi in ((dens.lo, min(dens.hi, -eps)), (max(dens.lo, eps), dens.hi)):
                if lo >= hi:
                    continue
                rate = _quad(dens.f, lo, hi)
                if rate > 0:
                    self.pieces.append((rate, self._inverse_cdf(dens.f, lo, hi, grid_points)))
        self.rates = np.concatenate([self.atom_rates, [r for r, _ in self.pieces]]) if (
            len(self.atom_rates) or self.pieces) else np.zeros(0)
        self.total = float(self.rates.sum())

    @staticmethod
    def _inverse_cdf(f, lo, hi, npts):
        # tabulate on a grid mapped to a finite range; tails beyond carry < 1e-12 mass
        if math.isinf(lo):
            lo_f = hi - 1.0
            while _quad(f, -math.inf, lo_f) > 1e-12 * max(_quad(f, lo_f, hi), 1e-300):
                lo_f = hi - 2.0 * (hi - lo_f)
            lo = lo_f
        if math.isinf(hi):
            hi_f = lo + 1.0
            while _quad(f, hi_f, math.inf) > 1e-12 * max(_quad(f, lo, hi_f), 1e-300):
                hi_f = lo + 2.0 * (hi_f - lo)
            hi = hi_f
        xs = np.linspace(lo, hi, npts)
        fx = np.array([f(x) for x in xs])
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (fx[1:] + fx[:-1]) * np.diff(xs))])
        cdf /= cdf[-1]
        return xs, cdf

    def sample_sizes(self, count, rng):
        if count == 0:
            return np.zeros(0)
        which = rng.choice(len(self.rates), size=count, p=self.rates / self.total)
        out = np.empty(count)
        na = len(self.atom_rates)
        atom_mask = which < na
        out[atom_mask] = self.locs[which[atom_mask]]
        for i, (_, (xs, cdf)) in enumerate(self.pieces):
            sel = which == na + i
            if sel.any():
                out[sel] = np.interp(rng.random(int(sel.sum())), cdf, xs)
        return out


@dataclass(frozen=True)
class StepLaw:
    """Per-cell Gaussian part and big-jump sampler for a given ``(dt, eps)``."""

    drift: float
    variance: float
    jumps: _BigJumps

    @classmethod
    def build(cls, triplet: LevyTriplet, epsilon: float):
        jm = triplet.jumps
        compensated = jm.integrate(lambda x: x, -1.0, -epsilon) + jm.integrate(lambda x: x, epsilon, 1.0)
        small_var = jm.integrate(lambda x: x * x, -epsilon, epsilon)
        return cls(triplet.b - compensated, triplet.sigma2 + small_var, _BigJumps(jm, epsilon))

    def increments(self, shape, dt, rng):
        rows, steps = shape
        inc = np.full(shape, self.drift * dt)
        if self.variance > 0:
            inc += math.sqrt(self.variance * dt) * rng.standard_normal(shape)
        if self.jumps.total > 0:
            counts = rng.poisson(self.jumps.total * steps * dt, size=rows)
            total = int(counts.sum())
            if total:
                row_idx = np.repeat(np.arange(rows), counts)
                cell = rng.integers(0, steps, size=total)
                np.add.at(inc, (row_idx, cell), self.jumps.sample_sizes(total, rng))
        return inc


@dataclass
class LevyPath:
    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    triplet: Optional[LevyTriplet] = None

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def simulate_path(triplet: LevyTriplet, dt: float, T: float, epsilon: float = 1e-3, rng=None) -> LevyPath:
    if not (dt > 0 and T > 0 and epsilon > 0):
        raise DomainError("dt, T and epsilon must be positive")
    rng = _as_rng(rng)
    steps = int(math.ceil(T / dt - 1e-9))
    law = StepLaw.build(triplet, epsilon)
    inc = np.full(steps, law.drift * dt)
    if law.variance > 0:
        inc += math.sqrt(law.variance * dt) * rng.standard_normal(steps)
    jt = np.zeros(0)
    js = np.zeros(0)
    if law.jumps.total > 0:
        count = rng.poisson(law.jumps.total * steps * dt)
        jt = np.sort(rng.uniform(0.0, steps * dt, size=count))
        js = law.jumps.sample_sizes(count, rng)
        cells = np.minimum((jt / dt).astype(np.int64), steps - 1)
        np.add.at(inc, cells, js)
    values = np.concatenate([[0.0], np.cumsum(inc)])
    times = dt * np.arange(steps + 1)
    return LevyPath(times, values, jt, js, triplet)


def deterministic_path(slope: float, dt: float, T: float) -> LevyPath:
    """``xi(t) = slope * t`` on the grid (the pure-drift path)."""
    steps = int(math.ceil(T / dt - 1e-9))
    times = dt * np.arange(steps + 1)
    return LevyPath(times, slope * times, np.zeros(0), np.zeros(0), LevyTriplet(b=slope))


def cumulative_functional(values: np.ndarray, gamma: float, dt: float) -> np.ndarray:
    """``int_0^{t_i} exp(gamma xi)`` on the grid (last axis), exact for the
    piecewise-linear interpolant of ``xi``."""
    e = np.exp(gamma * values)
    h = gamma * np.diff(values, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(h == 0.0, 1.0, np.expm1(h) / h)
    cells = e[..., :-1] * ratio * dt
    zero = np.zeros(e.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(cells, axis=-1)], axis=-1)


def _invert_cell(cum_i, xi_i, xi_next, dt, gamma, t):
    """``(u, xi)`` inside one grid cell where the exact cumulative reaches ``t``."""
    e = math.exp(gamma * xi_i)
    slope = (xi_next - xi_i) / dt
    rem = max(t - cum_i, 0.0)
    if slope == 0.0:
        return rem / e, xi_i
    arg = gamma * slope * rem / e
    du = math.log1p(max(arg, -1.0 + 1e-300)) / (gamma * slope)
    return min(max(du, 0.0), dt), xi_i + slope * min(max(du, 0.0), dt)


def tail_factor(triplet: LevyTriplet, gamma: float, beta0: Optional[float] = None) -> float:
    """``1/|Psi(gamma)|``: ``E[int_T^inf e^{gamma xi} | xi_T] = e^{gamma xi_T} / |Psi(gamma)|``.

    ``beta0`` (optional) must satisfy ``Psi(beta0) < 0``; by convexity that
    forces ``Psi(gamma) < 0`` when ``beta0 >= gamma``.
    """
    try:
        if beta0 is not None and not laplace_exponent(triplet, beta0) < 0:
            raise TailUnbounded(f"Psi({beta0}) >= 0")
        psi = laplace_exponent(triplet, gamma)
    except ExponentDiverges as exc:
        raise TailUnbounded(str(exc)) from exc
    if not psi < 0:
        raise TailUnbounded(f"Psi({gamma}) = {psi} >= 0: the functional does not converge")
    return 1.0 / abs(psi)


def exponential_functional(path: LevyPath, gamma: float, beta0: Optional[float] = None, triplet=None):
    """``(int_0^T exp(gamma xi), tail)`` where ``tail`` bounds the mean remainder past ``T``."""
    triplet = triplet if triplet is not None else path.triplet
    if triplet is None:
        raise TailUnbounded("no triplet attached to the path")
    factor = tail_factor(triplet, gamma, beta0)
    cum = cumulative_functional(path.values, gamma, path.dt)
    return float(cum[-1]), math.exp(gamma * path.values[-1]) * factor


@dataclass
class LampertiPath:
    source: LevyPath
    cumulative: np.ndarray
    i_inf: float
    tail_bound: float
    t_grid: np.ndarray
    tau: np.ndarray
    Y: np.ndarray

    @property
    def absorption_time(self):
        return self.i_inf

    def to_csv(self, path):
        """Rows ``(t, xi, cumulative)`` on the source grid then ``(t, tau, Y)`` on ``t_grid``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "t", "xi_or_tau", "cumulative_or_Y"])
            for t, x, c in zip(self.source.times, self.source.values, self.cumulative):
                w.writerow(["grid", repr(float(t)), repr(float(x)), repr(float(c))])
            for t, tau, y in zip(self.t_grid, self.tau, self.Y):
                w.writerow(["lamperti", repr(float(t)), repr(float(tau)), repr(float(y))])


def invert_cumulative(cum, values, times, t, gamma=1.0):
    """``(tau, xi(tau))`` for ``t < cum[-1]``, inverting the cumulative inside a cell."""
    i = int(np.searchsorted(cum, t, side="right")) - 1
    i = min(max(i, 0), len(cum) - 2)
    dt = times[i + 1] - times[i]
    du, xi = _invert_cell(cum[i], values[i], values[i + 1], dt, gamma, t)
    return times[i] + du, xi


def lamperti_transform(
    path: LevyPath,
    gamma: float,
    t_grid: Sequence[float],
    triplet=None,
    tail_tol: float = 1e-8,
) -> LampertiPath:
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise DomainError("t_grid must be nonnegative and nondecreasing")
    triplet = triplet if triplet is not None else path.triplet
    cum = cumulative_functional(path.values, gamma, path.dt)
    total = float(cum[-1])
    try:
        tail = math.exp(gamma * path.values[-1]) * tail_factor(triplet, gamma)
    except (TailUnbounded, AttributeError):
        tail = math.inf
    tau = np.empty(len(t_grid))
    Y = np.empty(len(t_grid))
    for j, t in enumerate(t_grid):
        if t < total:
            tau[j], xi = invert_cumulative(cum, path.values, path.times, t, gamma)
            Y[j] = math.exp(xi)
        elif tail <= tail_tol:
            tau[j], Y[j] = math.inf, 0.0
        else:
            raise HorizonTooShort(f"t={t} beyond the simulated functional {total} (tail {tail})")
    return LampertiPath(path, cum, total + (tail if math.isfinite(tail) else 0.0), tail, t_grid, tau, Y)


# ---------------------------------------------------------------------------
# batched samplers used by the Monte Carlo layer


def _chunk_rngs(seed, count, chunk):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn((count + chunk - 1) // chunk)]


def sample_lamperti_marginals(
    triplet: LevyTriplet,
    t_list,
    replicas: int,
    seed=0,
    dt: float = 1e-3,
    epsilon: float = 1e-3,
    block_T: float = 2.0,
    max_T: float = 1e4,
    tail_tol: float = 1e-8,
    chunk: int = 250,
):
    """``(replicas, len(t_list))`` independent draws of ``Y(t)`` started from 1.

    Paths are extended block by block (Markov property) until every requested
    ``t`` is either below the accumulated functional or, for paths drifting to
    minus infinity, past it with a negligible remainder.
    """
    t_arr = np.asarray(t_list, dtype=float)
    gamma = triplet.gamma
    law = StepLaw.build(triplet, epsilon)
    try:
        factor = tail_factor(triplet, gamma)
    except TailUnbounded:
        factor = math.inf
    steps = max(int(round(block_T / dt)), 1)
    out = np.full((replicas, len(t_arr)), np.nan)
    for c, rng in enumerate(_chunk_rngs(seed, replicas, chunk)):
        rows = np.arange(c * chunk, min((c + 1) * chunk, replicas))
        res = out[rows]
        xi0 = np.zeros(len(rows))
        c0 = np.zeros(len(rows))
        pending = np.isnan(res).any(axis=1)
        elapsed = 0.0
        while pending.any():
            if elapsed >= max_T:
                raise HorizonTooShort(f"Lamperti time change unresolved after T={max_T}")
            idx = np.nonzero(pending)[0]
            inc = law.increments((len(idx), steps), dt, rng)
            xi = np.concatenate([xi0[idx, None], xi0[idx, None] + np.cumsum(inc, axis=1)], axis=1)
            cum = c0[idx, None] + cumulative_functional(xi, gamma, dt)
            for a, r in enumerate(idx):
                for j, t in enumerate(t_arr):
                    if np.isnan(res[r, j]) and t < cum[a, -1]:
                        i = int(np.searchsorted(cum[a], t, side="right")) - 1
                        i = min(max(i, 0), steps - 1)
                        _, x = _invert_cell(cum[a, i], xi[a, i], xi[a, i + 1], dt, gamma, t)
                        res[r, j] = math.exp(x)
            xi0[idx] = xi[:, -1]
            c0[idx] = cum[:, -1]
            tails = np.exp(gamma * xi0[idx]) * factor
            done = tails <= tail_tol
            for a in np.nonzero(done)[0]:
                r = idx[a]
                res[r, np.isnan(res[r])] = 0.0
            pending = np.isnan(res).any(axis=1)
            elapsed += steps * dt
        out[rows] = res
    return out


def sample_exponential_functional(
    triplet: LevyTriplet,
    replicas: int,
    seed=0,
    gamma: Optional[float] = None,
    dt: float = 1e-3,
    epsilon: float = 1e-3,
    block_T: float = 4.0,
    max_T: float = 1e4,
    tail_tol: float = 1e-10,
    chunk: int = 250,
):
    """Draws of ``I_inf = int_0^inf exp(gamma xi)`` with the geometric-horizon rule.

    Each path is extended until its conditional remainder
    ``exp(gamma xi_T) / |Psi(gamma)|`` falls below ``tail_tol``.
    """
    gamma = triplet.gamma if gamma is None else gamma
    factor = tail_factor(triplet, gamma)
    law = StepLaw.build(triplet, epsilon)
    out = np.empty(replicas)
    for c, rng in enumerate(_chunk_rngs(seed, replicas, chunk)):
        rows = np.arange(c * chunk, min((c + 1) * chunk, replicas))
        xi0 = np.zeros(len(rows))
        c0 = np.zeros(len(rows))
        pending = np.ones(len(rows), dtype=bool)
        T = block_T
        elapsed = 0.0
        while pending.any():
            if elapsed >= max_T:
                raise HorizonTooShort(f"functional unresolved after T={max_T}")
            idx = np.nonzero(pending)[0]
            steps = max(int(round(T / dt)), 1)
            inc = law.increments((len(idx), steps), dt, rng)
            xi = np.concatenate([xi0[idx, None], xi0[idx, None] + np.cumsum(inc, axis=1)], axis=1)
            cum = c0[idx, None] + cumulative_functional(xi, gamma, dt)
            xi0[idx] = xi[:, -1]
            c0[idx] = cum[:, -1]
            pending[idx] = np.exp(gamma * xi0[idx]) * factor > tail_tol
            elapsed += steps * dt
            T *= 2.0
        out[rows] = c0
    return out
