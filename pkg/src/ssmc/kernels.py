"""Transition kernels ``p_{n,k}`` on the positive integers.

A kernel enumerates the row ``k -> p_{n,k}`` of every state ``n >= 1``.  The
concrete families are

* :class:`DownWalk`      -- deterministic ``n -> n-1`` (state 1 absorbing),
* :class:`BesselWalk`    -- +/-1 walk with drift ``-d/(4n)`` reflected at 1,
* :class:`RareJumpDrift` -- ``n -> n-1`` except a rare jump to ``ceil(rho n)``,
* :class:`FragCoag`      -- jump chain of the block counter of a
  fragmentation-coagulation process with simple Lambda-coalescences.

Rows are cached in a :class:`RowTable` (CSR layout with cumulative
probabilities) which is what the compiled Monte Carlo loops consume.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import betaln, gammaln
from scipy.stats import binom

from .errors import DomainError, TruncationFailure
from ._accel import njit
from .rng import key_from, uniform as _uniform

MASS_TOL = 1e-12
binom_pmf = binom.pmf
STATE_CAP = 10**8


@dataclass(frozen=True)
class TransitionKernel:
    """Base class: subclasses implement ``_row(n, k_max)``.

    ``_row`` returns every entry ``(k, p)`` with ``k <= k_max`` as two arrays;
    rows with unbounded support return the truncated part only and
    :meth:`transition_row` decides whether enough mass was covered.
    """

    mass_tol: float = field(default=MASS_TOL, kw_only=True)
    state_cap: int = field(default=STATE_CAP, kw_only=True)

    family = "abstract"

    def _row(self, n: int, k_max: int):
        raise NotImplementedError

    # -- public row interface -------------------------------------------
    def transition_row(self, n: int):
        """Sorted ``(ks, ps)`` covering at least ``1 - mass_tol`` of the row."""
        n = int(n)
        if n < 1:
            raise DomainError(f"state must be >= 1, got {n}")
        ks, ps = self._row(n, self.state_cap)
        ks = np.asarray(ks, dtype=np.int64)
        ps = np.asarray(ps, dtype=np.float64)
        keep = (ps > 0.0) & (ks <= self.state_cap)
        ks, ps = ks[keep], ps[keep]
        total = float(np.sum(ps))
        if total < 1.0 - self.mass_tol:
            raise TruncationFailure(
                f"row {n}: only {total!r} of the mass below state cap {self.state_cap}"
            )
        ks, ps = _trim(ks, ps, 0.5 * self.mass_tol)
        order = np.argsort(ks, kind="stable")
        return ks[order], ps[order]

    def row_upto(self, n: int, k_max: int):
        """Entries with ``k <= k_max`` without any mass requirement."""
        ks, ps = self._row(int(n), int(k_max))
        ks = np.asarray(ks, dtype=np.int64)
        ps = np.asarray(ps, dtype=np.float64)
        keep = ks <= k_max
        order = np.argsort(ks[keep], kind="stable")
        return ks[keep][order], ps[keep][order]

    def _table_block(self, lo: int, hi: int):
        """Rows ``lo..hi`` as (lengths, ks, ps); vectorised in simple families."""
        lengths, kss, pss = [], [], []
        for n in range(lo, hi + 1):
            ks, ps = self.transition_row(n)
            lengths.append(len(ks))
            kss.append(ks)
            pss.append(ps)
        return (np.array(lengths, dtype=np.int64), np.concatenate(kss), np.concatenate(pss))

    # -- optional knowledge of the scaling limit ---------------------------
    def limit_triplet(self):
        """The Levy triplet of the scaling limit, when known in closed form."""
        raise NotImplementedError(f"{self.family}: no closed-form limit triplet")

    def default_gamma(self) -> float:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


def _trim(ks, ps, budget):
    # drop the smallest entries while their combined mass stays within budget
    if budget <= 0.0 or len(ps) <= 1:
        return ks, ps
    order = np.argsort(ps, kind="stable")
    csum = np.cumsum(ps[order])
    ndrop = int(np.searchsorted(csum, budget, side="right"))
    ndrop = min(ndrop, len(ps) - 1)
    if ndrop == 0:
        return ks, ps
    keep = np.sort(order[ndrop:])
    return ks[keep], ps[keep]


@dataclass(frozen=True)
class DownWalk(TransitionKernel):
    """``p_{n,n-1} = 1`` for ``n >= 2`` and ``p_{1,1} = 1``."""

    family = "downwalk"

    def _row(self, n, k_max):
        return np.array([max(n - 1, 1)]), np.array([1.0])

    def _table_block(self, lo, hi):
        n = np.arange(lo, hi + 1, dtype=np.int64)
        return np.ones_like(n), np.maximum(n - 1, 1), np.ones(len(n))

    def limit_triplet(self):
        from .levy import LevyTriplet

        return LevyTriplet(sigma2=0.0, b=-1.0, gamma=1.0)

    def default_gamma(self):
        return 1.0

    def to_config(self):
        return {"family": self.family}


@dataclass(frozen=True)
class BesselWalk(TransitionKernel):
    """Bessel-type walk: ``p_{n,n+1} = (1 - d/(2n) + corr(n)) / 2``, clamped.

    State 1 always moves to 2.  ``correction`` is an optional ``o(1/n)`` term
    added inside the bracket (zero by default).
    """

    d: float = 0.0
    correction: Optional[Callable[[int], float]] = field(default=None, compare=True)

    family = "bessel"

    # derived constants of the zero-drift description E[D_n] ~ c/n, E[D_n^2] ~ s^2
    @property
    def c(self):
        return -self.d / 2.0

    @property
    def s2(self):
        return 1.0

    @property
    def r(self):
        return -2.0 * self.c / self.s2

    @property
    def nu(self):
        return -(1.0 + self.r) / 2.0

    @property
    def delta(self):
        return 1.0 - self.r

    def up_probability(self, n):
        n = np.asarray(n, dtype=np.float64)
        bracket = 1.0 - self.d / (2.0 * n)
        if self.correction is not None:
            bracket = bracket + np.vectorize(self.correction, otypes=[float])(n)
        p = np.clip(0.5 * bracket, 0.0, 1.0)
        return np.where(n <= 1, 1.0, p)

    def _row(self, n, k_max):
        if n == 1:
            return np.array([2]), np.array([1.0])
        p = float(self.up_probability(n))
        return np.array([n - 1, n + 1]), np.array([1.0 - p, p])

    def _table_block(self, lo, hi):
        n = np.arange(lo, hi + 1, dtype=np.int64)
        p = self.up_probability(n)
        q = 1.0 - p
        ks = np.stack([n - 1, n + 1], axis=1)
        ps = np.stack([q, p], axis=1)
        lengths = np.where((p > 0) & (q > 0), 2, 1)
        mask = ps > 0
        return lengths.astype(np.int64), ks[mask], ps[mask]

    def limit_triplet(self):
        from .levy import LevyTriplet

        return LevyTriplet(sigma2=self.s2, b=(2.0 * self.c - self.s2) / 2.0, gamma=2.0)

    def default_gamma(self):
        return 2.0

    def to_config(self):
        if self.correction is not None:
            raise ValueError("kernels with a correction hook are not serialisable")
        return {"family": self.family, "d": self.d}


@dataclass(frozen=True)
class RareJumpDrift(TransitionKernel):
    """``p_{n,n-1} = 1 - theta/n``, ``p_{n,ceil(rho n)} = theta/n``.

    Rows with ``theta/n > 1`` degenerate to ``n -> n-1``; state 1 is absorbing.
    """

    theta: float = 1.0
    rho: float = 0.5

    family = "rarejump"

    def __post_init__(self):
        if not self.theta > 0:
            raise DomainError("theta must be positive")
        if not 0.0 < self.rho < 1.0:
            raise DomainError("rho must lie in (0, 1)")

    def _row(self, n, k_max):
        if n == 1:
            return np.array([1]), np.array([1.0])
        jump = self.theta / n
        if jump > 1.0:
            return np.array([n - 1]), np.array([1.0])
        target = max(int(math.ceil(self.rho * n - 1e-12)), 1)
        if target == n - 1:
            return np.array([n - 1]), np.array([1.0])
        return np.array([target, n - 1]), np.array([jump, 1.0 - jump])

    def limit_triplet(self):
        from .levy import JumpMeasure, LevyTriplet

        x = math.log(self.rho)
        b = -1.0 + (self.theta * x if abs(x) <= 1.0 else 0.0)
        return LevyTriplet(sigma2=0.0, b=b, jumps=JumpMeasure(atoms=[(x, self.theta)]), gamma=1.0)

    def default_gamma(self):
        return 1.0

    def to_config(self):
        return {"family": self.family, "theta": self.theta, "rho": self.rho}


@dataclass(frozen=True)
class FragCoag(TransitionKernel):
    """Block-count jump chain of a fragmentation-coagulation process.

    ``lam_atoms`` lists ``(x, w)`` atoms of Lambda on (0, 1]; alternatively
    ``lam_beta = (a, b, mass)`` gives ``mass * Beta(a, b)`` with ``a > 1``.
    ``mu`` lists ``(j, weight)`` for splits adding ``j`` blocks.
    """

    lam_atoms: tuple = ()
    lam_beta: Optional[tuple] = None
    mu: tuple = ((1, 1.0),)

    family = "fragcoag"

    def __post_init__(self):
        object.__setattr__(self, "lam_atoms", tuple((float(x), float(w)) for x, w in self.lam_atoms))
        object.__setattr__(self, "mu", tuple((int(j), float(w)) for j, w in self.mu))
        if self.lam_beta is not None:
            object.__setattr__(self, "lam_beta", tuple(float(v) for v in self.lam_beta))
            a, b, mass = self.lam_beta
            if not (a > 1.0 and b > 0.0 and mass > 0.0):
                raise DomainError("Beta Lambda needs a > 1, b > 0, mass > 0")
        for x, w in self.lam_atoms:
            if not (0.0 < x <= 1.0 and w > 0.0):
                raise DomainError(f"Lambda atom ({x}, {w}) outside (0,1] x (0,inf)")
        for j, w in self.mu:
            if j < 1 or w < 0.0:
                raise DomainError(f"mu entry ({j}, {w}) invalid")

    @property
    def mu_total(self):
        return sum(w for _, w in self.mu)

    @property
    def m(self):
        return sum(j * w for j, w in self.mu)

    def coalescence_rates(self, n):
        """``g_{n,k}`` for ``k = 1..n-1`` (array indexed by ``k-1``)."""
        if n < 2:
            return np.zeros(0)
        k = np.arange(1, n, dtype=np.float64)
        g = np.zeros(n - 1)
        for x, w in self.lam_atoms:
            if x == 1.0:
                g[0] += w
                continue
            # C(n, k-1) x^(n-k-1) (1-x)^(k-1) is a binomial pmf over x^2; the
            # library pmf keeps full relative accuracy where lgamma sums do not
            g += (w / (x * x)) * binom_pmf(k - 1.0, n, 1.0 - x)
        if self.lam_beta is not None:
            logc = gammaln(n + 1.0) - gammaln(k) - gammaln(n - k + 2.0)
            a, b, mass = self.lam_beta
            g += mass * np.exp(logc + betaln(a + n - k - 1.0, b + k - 1.0) - betaln(a, b))
        return g

    def total_coalescence_rate(self, n):
        return float(np.sum(self.coalescence_rates(n)))

    def _row(self, n, k_max):
        g = self.coalescence_rates(n)
        up = [(n + j, n * w) for j, w in self.mu if w > 0.0]
        total = float(np.sum(g)) + n * self.mu_total
        if total == 0.0:
            return np.array([n]), np.array([1.0])
        ks = np.concatenate([np.arange(1, n, dtype=np.int64), np.array([k for k, _ in up], dtype=np.int64)])
        ps = np.concatenate([g, np.array([r for _, r in up])]) / total
        return ks, ps

    def limit_triplet(self):
        from .levy import fragcoag_triplet

        return fragcoag_triplet(self.lam_atoms, self.lam_beta, self.mu)

    def default_gamma(self):
        return 1.0

    def to_config(self):
        cfg = {"family": self.family, "mu": [list(e) for e in self.mu]}
        if self.lam_atoms:
            cfg["lambda_atoms"] = [list(e) for e in self.lam_atoms]
        if self.lam_beta is not None:
            cfg["lambda_beta"] = list(self.lam_beta)
        return cfg


FAMILIES = {
    "downwalk": DownWalk,
    "bessel": BesselWalk,
    "rarejump": RareJumpDrift,
    "fragcoag": FragCoag,
}


def kernel_from_config(cfg: dict) -> TransitionKernel:
    """Build a kernel from a ``{"family": ..., params..., "truncation": {...}}`` block."""
    cfg = dict(cfg)
    family = cfg.pop("family", None)
    if family not in FAMILIES:
        raise DomainError(f"unknown kernel family {family!r}")
    trunc = cfg.pop("truncation", {}) or {}
    kw = {
        "mass_tol": float(trunc.get("mass_tol", MASS_TOL)),
        "state_cap": int(trunc.get("state_cap", STATE_CAP)),
    }
    if family == "bessel":
        kern = BesselWalk(d=float(cfg.pop("d")), **kw)
    elif family == "rarejump":
        kern = RareJumpDrift(theta=float(cfg.pop("theta", 1.0)), rho=float(cfg.pop("rho", 0.5)), **kw)
    elif family == "fragcoag":
        atoms = tuple(tuple(a) for a in cfg.pop("lambda_atoms", ()))
        beta = cfg.pop("lambda_beta", None)
        mu = tuple(tuple(e) for e in cfg.pop("mu", [[1, 1.0]]))
        kern = FragCoag(lam_atoms=atoms, lam_beta=tuple(beta) if beta else None, mu=mu, **kw)
    else:
        kern = DownWalk(**kw)
    if cfg:
        # a misspelt parameter would otherwise fall back to its default silently
        raise DomainError(f"unknown {family} parameters: {sorted(cfg)}")
    return kern


# ---------------------------------------------------------------------------
# row operations


def transition_row(kernel: TransitionKernel, n: int):
    """List of ``(k, p)`` pairs sorted by ``k``."""
    ks, ps = kernel.transition_row(n)
    return list(zip(ks.tolist(), ps.tolist()))


def sample_step(kernel: TransitionKernel, n: int, rng: np.random.Generator) -> int:
    """One draw from row ``n``; the trimmed residual mass goes to the largest ``k``."""
    ks, ps = kernel.transition_row(n)
    cdf = np.cumsum(ps)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return int(ks[min(idx, len(ks) - 1)])


def log_step_integral(kernel: TransitionKernel, n: int, f) -> float:
    """``sum_k p_{n,k} f(ln(k/n))``, the integral of ``f`` against the log-step law."""
    ks, ps = kernel.transition_row(n)
    x = np.log(ks / float(n))
    try:
        vals = np.asarray(f(x), dtype=np.float64)
        if vals.shape != x.shape:
            raise ValueError
    except (TypeError, ValueError):
        vals = np.array([f(v) for v in x], dtype=np.float64)
    return math.fsum(ps * vals)


# ---------------------------------------------------------------------------
# CSR row tables for the compiled loops


class RowTable:
    """Rows ``1..n_max`` of a kernel: ``ks[off[n]:off[n+1]]`` with cumulative ``cdf``.

    The last cumulative value of every row is forced to exactly 1 so that the
    residual mass left by truncation lands on the largest enumerated state.
    """

    def __init__(self, kernel: TransitionKernel, n_max: int):
        self.kernel = kernel
        self.n_max = 0
        self.offsets = np.zeros(2, dtype=np.int64)
        self.ks = np.zeros(0, dtype=np.int64)
        self.cdf = np.zeros(0, dtype=np.float64)
        self._lock = threading.Lock()
        self.ensure(n_max)

    def ensure(self, n_max: int):
        n_max = int(min(n_max, self.kernel.state_cap))
        with self._lock:
            if n_max <= self.n_max:
                return self
            lengths, ks, ps = self.kernel._table_block(self.n_max + 1, n_max)
            cdf = _segmented_cdf(np.ascontiguousarray(ps, dtype=np.float64), lengths)
            offsets = np.concatenate([self.offsets[:-1], self.offsets[-1] + np.concatenate([[0], np.cumsum(lengths)])])
            self.ks = np.concatenate([self.ks, ks.astype(np.int64)])
            self.cdf = np.concatenate([self.cdf, cdf])
            self.offsets = offsets
            self.n_max = n_max
        return self

    def arrays(self):
        return self.offsets, self.ks, self.cdf


@njit
def _segmented_cdf(ps, lengths):
    out = np.empty_like(ps)
    pos = 0
    for r in range(lengths.shape[0]):
        acc = 0.0
        for j in range(lengths[r]):
            acc += ps[pos + j]
            out[pos + j] = acc
        out[pos + lengths[r] - 1] = 1.0
        pos += lengths[r]
    return out


_TABLES: dict = {}
_TABLES_LOCK = threading.Lock()


def row_table(kernel: TransitionKernel, n_max: int) -> RowTable:
    """Shared, growable table for ``kernel`` covering at least ``n_max`` states."""
    with _TABLES_LOCK:
        tab = _TABLES.get(kernel)
        if tab is None:
            tab = RowTable(kernel, n_max)
            _TABLES[kernel] = tab
            return tab
    return tab.ensure(n_max)


@njit
def table_draw(offsets, ks, cdf, n, u):
    """Inverse-cdf draw from row ``n`` of a :class:`RowTable`."""
    lo = offsets[n]
    hi = offsets[n + 1] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return ks[lo]


def table_draw_array(offsets, ks, cdf, n, u):
    """Vectorised :func:`table_draw` (identical arithmetic, lockstep bisection)."""
    lo = offsets[n].copy()
    hi = offsets[n + 1] - 1
    active = lo < hi
    while active.any():
        mid = (lo + hi) // 2
        go_right = cdf[mid] <= u
        lo = np.where(active & go_right, mid + 1, lo)
        hi = np.where(active & ~go_right, mid, hi)
        active = lo < hi
    return ks[lo]


# ---------------------------------------------------------------------------
# single paths


@dataclass
class DiscreteChainPath:
    states: np.ndarray
    absorption_index: Optional[int]
    censored: bool

    def __len__(self):
        return len(self.states)


@njit
def _path_loop(offsets, ks, cdf, n_max, n0, max_steps, stop, key, out):
    # returns (length, absorption index or -1, status); status 1 = table too small
    x = n0
    out[0] = x
    if stop > 0 and x <= stop:
        return 1, 0, 0
    for i in range(max_steps):
        if x > n_max:
            return i + 1, -1, 1
        x = table_draw(offsets, ks, cdf, x, _uniform(key, i))
        out[i + 1] = x
        if stop > 0 and x <= stop:
            return i + 2, i + 1, 0
    return max_steps + 1, -1, 0


def simulate_chain(kernel: TransitionKernel, n0: int, max_steps: int, stop_bound=None, rng=None) -> DiscreteChainPath:
    """Path ``X(0)=n0, X(1), ...`` frozen at the first index with ``X <= stop_bound``.

    ``rng`` is an int seed or a ``numpy.random.Generator``; the path is a
    deterministic function of the derived key.
    """
    if n0 < 1 or max_steps < 0:
        raise DomainError("need n0 >= 1 and max_steps >= 0")
    key = key_from(rng)
    stop = 0 if stop_bound is None else int(stop_bound)
    out = np.empty(max_steps + 1, dtype=np.int64)
    size = max(4 * n0, 64)
    while True:
        tab = row_table(kernel, size)
        off, ks, cdf = tab.arrays()
        length, a_idx, status = _path_loop(off, ks, cdf, tab.n_max, n0, max_steps, stop, key, out)
        if status == 0:
            break
        if tab.n_max >= kernel.state_cap:
            raise TruncationFailure("chain left the state cap")
        size = 2 * max(size, int(out[:length].max()))
    states = out[:length].copy()
    if stop > 0:
        absorbed = a_idx >= 0
        return DiscreteChainPath(states, int(a_idx) if absorbed else None, not absorbed)
    return DiscreteChainPath(states, None, False)
