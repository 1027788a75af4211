"""Replicated simulation of rescaled chains, absorption times and limit marginals."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _loops
from ._accel import HAVE_NUMBA
from .embedding import ScalingSequence, scaling_from_config
from .errors import AllCensored, CensoringBias, DomainError, TruncationFailure
from .kernels import TransitionKernel, kernel_from_config, row_table
from .levy import LevyTriplet, sample_lamperti_marginals
from .rng import replica_keys
from .stats import mean_ci

CAP_MULTIPLE = 50.0
CHUNK = 64


@dataclass
class ExperimentPlan:
    kernel: dict
    scaling: dict
    starts: list
    stop_bound: int = 1
    t_list: list = field(default_factory=list)
    replicas: int = 1000
    cap_multiple: float = CAP_MULTIPLE
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.replicas < 1:
            raise DomainError("replicas must be >= 1")
        if any(t < 0 for t in self.t_list):
            raise DomainError("times must be nonnegative")
        if not self.cap_multiple > 0:
            raise DomainError("cap multiple must be positive")
        self.starts = [int(n) for n in self.starts]

    def build_kernel(self) -> TransitionKernel:
        return kernel_from_config(self.kernel)

    def build_scaling(self) -> ScalingSequence:
        return scaling_from_config(self.scaling)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("threads")
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPlan":
        return cls(**json.loads(text))


@dataclass
class SampleSet:
    """Per-replica records of one experiment at one start state."""

    kind: str  # "absorption", "marginals" or "limit"
    n: int
    a_n: float
    keys: np.ndarray
    absorption: Optional[np.ndarray] = None  # step counts A (cap value when censored)
    censored: Optional[np.ndarray] = None
    cap: Optional[int] = None
    t_list: Optional[np.ndarray] = None
    marginals: Optional[np.ndarray] = None  # (R, len(t_list))

    @property
    def replicas(self):
        return len(self.keys)

    @property
    def censored_fraction(self):
        return float(self.censored.mean()) if self.censored is not None else 0.0

    def scaled_absorption(self):
        return self.absorption / self.a_n

    def summary(self):
        out = {"kind": self.kind, "n": self.n, "a_n": self.a_n, "replicas": self.replicas}
        if self.absorption is not None:
            x = self.scaled_absorption()
            out.update(
                mean_ratio=float(x.mean()),
                censored_fraction=self.censored_fraction,
                cap=self.cap,
            )
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "quantity", "value", "censored", "seed"])
            if self.absorption is not None:
                for r in range(self.replicas):
                    w.writerow([r, "A", int(self.absorption[r]), int(bool(self.censored[r])), int(self.keys[r])])
            if self.marginals is not None:
                for r in range(self.replicas):
                    for j, t in enumerate(self.t_list):
                        w.writerow([r, repr(float(t)), repr(float(self.marginals[r, j])), 0, int(self.keys[r])])


# ---------------------------------------------------------------------------
# replica driver


def _threads(threads):
    return int(threads) if threads else (os.cpu_count() or 1)


def run_batched(kind, kernel, n0, keys, threads=1, **kw):
    """Run replicas ``keys`` of a hot loop; returns the loop-specific arrays.

    ``kind`` is ``"absorb"`` (kw: stop, cap), ``"marginals"`` (kw: steps, stop)
    or ``"poisson"`` (kw: rate, times).  Replicas whose state leaves the row
    table are rerun after the table grows, which leaves results unchanged.
    """
    R = len(keys)
    table = row_table(kernel, max(4 * n0, 64))
    if kind == "absorb":
        outs = [np.empty(R, dtype=np.int64), np.empty(R, dtype=np.int64)]
    elif kind == "marginals":
        outs = [np.empty((R, len(kw["steps"])), dtype=np.int64), np.empty(R, dtype=np.int64), np.empty(R, dtype=np.int64)]
    elif kind == "poisson":
        outs = [np.empty((R, len(kw["times"])), dtype=np.int64), np.empty(R, dtype=np.int64)]
    else:
        raise ValueError(kind)
    status = outs[-1]

    if not HAVE_NUMBA:
        if kind == "absorb":
            _loops.absorb_batch_numpy(table, n0, kw["stop"], kw["cap"], keys, *outs)
        elif kind == "marginals":
            _loops.marginals_batch_numpy(table, n0, kw["steps"], kw["stop"], keys, *outs)
        else:
            _loops.poisson_clock_batch_numpy(table, n0, kw["rate"], kw["times"], keys, *outs)
        return outs

    def work(sel):
        off, ks, cdf = table.arrays()
        n_max = table.n_max
        sub = [o[sel] for o in outs]
        if kind == "absorb":
            _loops.absorb_batch_jit(off, ks, cdf, n_max, n0, kw["stop"], kw["cap"], keys[sel], *sub)
        elif kind == "marginals":
            _loops.marginals_batch_jit(off, ks, cdf, n_max, n0, kw["steps"], kw["stop"], keys[sel], *sub)
        else:
            _loops.poisson_clock_batch_jit(off, ks, cdf, n_max, n0, kw["rate"], kw["times"], keys[sel], *sub)
        for o, s in zip(outs, sub):
            o[sel] = s

    todo = np.arange(R)
    while todo.size:
        chunks = [todo[i : i + CHUNK] for i in range(0, len(todo), CHUNK)]
        nt = _threads(threads)
        if nt > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(nt) as ex:
                list(ex.map(work, chunks))
        else:
            for c in chunks:
                work(c)
        todo = todo[status[todo] == _loops.OVERFLOW]
        if todo.size:
            if table.n_max >= kernel.state_cap:
                raise TruncationFailure("chain left the state cap")
            table.ensure(2 * table.n_max)
    return outs


# ---------------------------------------------------------------------------
# experiments


def _start(plan, n):
    return int(plan.starts[0] if n is None else n)


def run_absorption(plan: ExperimentPlan, n: Optional[int] = None) -> SampleSet:
    """``R`` replicas of the first entrance time into ``{1..K}``, censored at ``cap * a_n``."""
    n = _start(plan, n)
    kernel = plan.build_kernel()
    scaling = plan.build_scaling()
    a_n = float(scaling(n))
    cap = int(math.ceil(plan.cap_multiple * a_n))
    keys = replica_keys(plan.seed, plan.replicas)
    A, status = run_batched("absorb", kernel, n, keys, plan.threads, stop=int(plan.stop_bound), cap=cap)
    censored = status == _loops.CENSORED
    if censored.all():
        raise AllCensored(f"all {plan.replicas} replicas censored at {cap} steps")
    return SampleSet("absorption", n, a_n, keys, absorption=A, censored=censored, cap=cap)


def run_marginals(plan: ExperimentPlan, stopped: bool = True, n: Optional[int] = None) -> SampleSet:
    """Samples of ``X_n(floor(a_n t)) / n`` for every ``t`` in the plan."""
    n = _start(plan, n)
    kernel = plan.build_kernel()
    scaling = plan.build_scaling()
    a_n = float(scaling(n))
    t = np.asarray(plan.t_list, dtype=float)
    steps = np.floor(a_n * t + 1e-9).astype(np.int64)
    order = np.argsort(steps, kind="stable")
    keys = replica_keys(plan.seed, plan.replicas)
    stop = int(plan.stop_bound) if stopped else 0
    states, A, _ = run_batched("marginals", kernel, n, keys, plan.threads, steps=steps[order], stop=stop)
    marg = np.empty(states.shape, dtype=float)
    marg[:, order] = states / n
    absorbed = A >= 0
    return SampleSet(
        "marginals", n, a_n, keys,
        absorption=np.where(absorbed, A, steps.max(initial=0)) if stopped else None,
        censored=~absorbed if stopped else None,
        t_list=t, marginals=marg,
    )


def run_limit_marginals(triplet: LevyTriplet, gamma: Optional[float], t_list, replicas: int, rng=0, **kw) -> SampleSet:
    """Draws of ``Y(t)`` through path simulation and the Lamperti transform."""
    if gamma is not None and gamma != triplet.gamma:
        triplet = LevyTriplet(triplet.sigma2, triplet.b, triplet.jumps, gamma)
    seed = int(rng) if not isinstance(rng, np.random.Generator) else int(rng.integers(2**63))
    y = sample_lamperti_marginals(triplet, t_list, replicas, seed=seed, **kw)
    keys = np.full(replicas, seed, dtype=np.uint64)
    return SampleSet("limit", 1, 1.0, keys, t_list=np.asarray(t_list, dtype=float), marginals=y)


@dataclass
class MomentEstimate:
    estimate: float
    half_width: float
    censored_fraction: float
    lower_bound: bool  # True when censored replicas entered at their cap

    @property
    def interval(self):
        return self.estimate - self.half_width, self.estimate + self.half_width


def moment_summary(samples: SampleSet, p: float, level: float = 0.95, max_censored: float = 0.01) -> MomentEstimate:
    """Empirical ``E[(A/a_n)^p]`` with a normal-approximation interval."""
    if p < 0:
        raise DomainError("moment order must be >= 0")
    frac = samples.censored_fraction
    if frac > max_censored:
        raise CensoringBias(f"censored fraction {frac:.3%} exceeds {max_censored:.3%}")
    x = samples.scaled_absorption() ** p
    if len(x) >= 30:
        mean, hw = mean_ci(x, level)
    else:
        mean, hw = float(np.mean(x)), math.inf if np.ptp(x) > 0 else 0.0
    return MomentEstimate(mean, hw, frac, bool(frac > 0))
