"""Continuous-time embedding of a chain and its Lamperti-type time change.

From state ``j`` the auxiliary chain waits an exponential time of rate
``a_j`` and then jumps according to ``p_{j,.}``; ``L_n = ln(j/n)``.  Changing
time by ``tau_n`` (the inverse of ``u -> int_0^u a_{n exp L_n(s)} / a_n ds``)
turns it into the discrete chain read along an independent Poisson clock of
rate ``a_n``.  :func:`coupling_marginals` samples both sides independently.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _loops
from ._accel import HAVE_NUMBA
from .errors import DomainError, EventBudgetExceeded, HorizonTooShort, TruncationFailure
from .kernels import TransitionKernel, row_table
from .rng import key_from, replica_keys

EVENT_BUDGET = 10**8


@dataclass(frozen=True)
class ScalingSequence:
    """``a_n = scale * n**gamma``."""

    gamma: float
    scale: float = 1.0
    form: str = "power"

    def __post_init__(self):
        if not (self.gamma > 0 and self.scale > 0):
            raise DomainError("scaling needs gamma > 0 and scale > 0")

    def __call__(self, n):
        return self.scale * np.asarray(n, dtype=np.float64) ** self.gamma

    def rates(self, n_max: int) -> np.ndarray:
        """``a_j`` for ``j = 0..n_max`` (index 0 unused, set to 0)."""
        r = self(np.arange(n_max + 1))
        r[0] = 0.0
        return r

    def ratio_check(self, x, n=10**6):
        """Relative error of ``a_{floor(xn)}/a_n`` against ``x**gamma``."""
        return abs(float(self(math.floor(x * n)) / self(n)) / x**self.gamma - 1.0)

    def to_config(self):
        return {"gamma": self.gamma, "scale": self.scale, "form": self.form}


def scaling_from_config(cfg: dict) -> ScalingSequence:
    form = cfg.get("form", "power")
    if form != "power":
        raise DomainError(f"unsupported scaling form {form!r}")
    return ScalingSequence(gamma=float(cfg["gamma"]), scale=float(cfg.get("scale", 1.0)))


@dataclass
class EmbeddedChainPath:
    times: np.ndarray  # event times, times[0] = 0
    states: np.ndarray
    rates: np.ndarray  # holding rate in each state (0 once absorbed)
    horizon: float
    n: int

    @property
    def absorbed(self) -> bool:
        return self.rates[-1] == 0.0

    def log_position(self):
        return np.log(self.states / self.n)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "state"])
            for t, j in zip(self.times, self.states):
                w.writerow([repr(float(t)), int(j)])


def simulate_embedded(
    kernel: TransitionKernel,
    scaling: ScalingSequence,
    n: int,
    horizon: float,
    stop_bound: Optional[int] = None,
    rng=None,
    budget: int = EVENT_BUDGET,
) -> EmbeddedChainPath:
    """Event-driven simulation of the embedded chain started at lattice state ``n``.

    With ``stop_bound = M`` the rates ``a_j`` are set to zero for ``j <= M``.
    """
    if n < 1:
        raise DomainError("start state must be >= 1")
    key = key_from(rng)
    stop = 0 if stop_bound is None else int(stop_bound)
    size = max(4 * n, 64)
    buf = min(max(1024, 4 * int(scaling(n) * horizon) + 16), budget + 1)
    while True:
        tab = row_table(kernel, size)
        off, ks, cdf = tab.arrays()
        rates = scaling.rates(tab.n_max)
        times = np.empty(buf)
        states = np.empty(buf, dtype=np.int64)
        count, status = _loops.embedded_one(off, ks, cdf, tab.n_max, rates, n, float(horizon), stop, key, times, states)
        if status == _loops.OVERFLOW:
            if tab.n_max >= kernel.state_cap:
                raise TruncationFailure("embedded chain left the state cap")
            size = 2 * max(size, int(states[:count].max()))
            continue
        if status == _loops.CENSORED:
            if buf > budget:
                raise EventBudgetExceeded(f"more than {budget} events before horizon {horizon}")
            buf = min(4 * buf, budget + 1)
            continue
        break
    st = states[:count].copy()
    hold = np.where(st > stop, scaling(st), 0.0)
    return EmbeddedChainPath(times[:count].copy(), st, hold, float(horizon), int(n))


def accumulated_clock(path: EmbeddedChainPath, scaling: ScalingSequence):
    """Breakpoints ``(u_i, C(u_i))`` of ``C(u) = int_0^u a_{state(s)}/a_n ds``."""
    a_n = float(scaling(path.n))
    speed = path.rates / a_n if path.rates is not None else scaling(path.states) / a_n
    u = np.append(path.times, path.horizon)
    seg = np.diff(u) * speed
    return u, np.concatenate([[0.0], np.cumsum(seg)]), speed


def time_change_tau_n(path: EmbeddedChainPath, scaling: ScalingSequence, t: float) -> float:
    """``inf{u : C(u) > t}``, exact because the integrand is piecewise constant."""
    if t < 0:
        raise DomainError("t must be >= 0")
    u, c, speed = accumulated_clock(path, scaling)
    if t >= c[-1]:
        if path.absorbed:
            return math.inf
        raise HorizonTooShort(f"accumulated clock {c[-1]} <= t = {t}")
    i = int(np.searchsorted(c, t, side="right")) - 1
    return float(u[i] + (t - c[i]) / speed[i])


def state_at(path: EmbeddedChainPath, u: float) -> int:
    if math.isinf(u):
        return int(path.states[-1])
    i = int(np.searchsorted(path.times, u, side="right")) - 1
    return int(path.states[max(i, 0)])


@dataclass
class CouplingSample:
    t_list: np.ndarray
    clock_side: np.ndarray  # (R, len(t)) values of X_n(N_n(t))/n
    embedded_side: np.ndarray  # (R, len(t)) values of exp(L_n(tau_n(t)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "t", "poisson_clock", "time_changed"])
            for r in range(self.clock_side.shape[0]):
                for j, t in enumerate(self.t_list):
                    w.writerow([r, repr(float(t)), repr(float(self.clock_side[r, j])), repr(float(self.embedded_side[r, j]))])


def poisson_clock_marginals(kernel, scaling, n, t_list, replicas, seed, threads=1):
    """``X_n(N_n(t)) / n`` with ``N_n`` a Poisson process of rate ``a_n``."""
    from .montecarlo import run_batched

    times = np.asarray(t_list, dtype=float)
    order = np.argsort(times, kind="stable")
    keys = replica_keys(seed, replicas)
    rate = float(scaling(n))
    out, _ = run_batched("poisson", kernel, n, keys, threads, times=times[order], rate=rate)
    res = np.empty_like(out, dtype=float)
    res[:, order] = out / n
    return res


def time_changed_marginals(kernel, scaling, n, t_list, replicas, seed, stop_bound=None):
    """``exp(L_n(tau_n(t)))`` from independently simulated embedded paths."""
    times = np.asarray(t_list, dtype=float)
    keys = replica_keys(seed, replicas)
    out = np.empty((replicas, len(times)))
    t_max = float(times.max()) if len(times) else 0.0
    for r in range(replicas):
        horizon = max(t_max, 1e-12) * 2.0
        while True:
            path = simulate_embedded(kernel, scaling, n, horizon, stop_bound, rng=_KeyRNG(keys[r]))
            try:
                taus = [time_change_tau_n(path, scaling, t) for t in times]
                break
            except HorizonTooShort:
                horizon *= 4.0
        out[r] = [state_at(path, u) / n for u in taus]
    return out


class _KeyRNG:
    """Adapter passing a fixed replica key through ``key_from``."""

    def __init__(self, key):
        self.key = np.uint64(key)


def coupling_marginals(kernel, scaling, n, t_list, replicas, rng=0, threads=1) -> CouplingSample:
    """Independent samples of both sides of the coupling identity at each ``t``."""
    seed = int(rng) if not isinstance(rng, np.random.Generator) else int(rng.integers(2**63))
    seeds = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    left = poisson_clock_marginals(kernel, scaling, n, t_list, replicas, int(seeds[0]), threads)
    right = time_changed_marginals(kernel, scaling, n, t_list, replicas, int(seeds[1]))
    return CouplingSample(np.asarray(t_list, dtype=float), left, right)
