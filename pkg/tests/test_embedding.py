import math

import numpy as np
import pytest

from ssmc.embedding import (
    EmbeddedChainPath,
    ScalingSequence,
    accumulated_clock,
    coupling_marginals,
    scaling_from_config,
    simulate_embedded,
    state_at,
    time_change_tau_n,
)
from ssmc.errors import DomainError, EventBudgetExceeded, HorizonTooShort
from ssmc.kernels import BesselWalk, DownWalk
from ssmc.rng import replica_keys
from ssmc.stats import ks_critical, ks_one_sample, ks_two_sample


class _Key:
    def __init__(self, key):
        self.key = key


def test_scaling_sequence():
    a = ScalingSequence(2.0)
    assert a(10) == 100.0
    for x in (0.1, 0.5, 2.0, 7.3):
        assert a.ratio_check(x) < 0.01
    assert scaling_from_config(a.to_config()) == a
    with pytest.raises(DomainError):
        ScalingSequence(0.0)


def test_down_walk_total_time():
    keys = replica_keys(3, 10_000)
    total = np.array([simulate_embedded(DownWalk(), ScalingSequence(1.0), 3, 50.0, stop_bound=1, rng=_Key(k)).times[-1]
                      for k in keys])
    assert total.mean() == pytest.approx(1 / 3 + 1 / 2, rel=0.03)


def test_stopped_start_is_constant():
    path = simulate_embedded(BesselWalk(3), ScalingSequence(2.0), 5, 10.0, stop_bound=5, rng=1)
    assert list(path.states) == [5] and path.absorbed


def test_first_event_time_bessel():
    keys = replica_keys(5, 20_000)
    first = []
    for k in keys:
        p = simulate_embedded(BesselWalk(3), ScalingSequence(2.0), 50, 0.01, rng=_Key(k))
        first.append(p.times[1] if len(p.times) > 1 else math.inf)
    first = np.array(first)
    assert np.isfinite(first).all()
    assert first.mean() == pytest.approx(1 / 2500, rel=0.05)


def test_event_budget():
    with pytest.raises(EventBudgetExceeded):
        simulate_embedded(BesselWalk(3), ScalingSequence(2.0), 100, 10.0, rng=0, budget=500)


def _path(times, states, rates, horizon=10.0, n=4):
    return EmbeddedChainPath(np.array(times, float), np.array(states), np.array(rates, float), horizon, n)


def test_tau_constant_path():
    p = _path([0.0], [4], [16.0], horizon=math.inf)
    sc = ScalingSequence(2.0)
    for t in (0.0, 0.3, 5.0):
        assert time_change_tau_n(p, sc, t) == pytest.approx(t)


def test_tau_two_segments():
    # rate ratio 1/2 on [0, 1], 1 afterwards
    sc = ScalingSequence(1.0)
    p = _path([0.0, 1.0], [2, 4], [2.0, 4.0], horizon=10.0, n=4)
    for t in (0.1, 0.25, 0.5):
        assert time_change_tau_n(p, sc, t) == pytest.approx(2 * t)
    assert time_change_tau_n(p, sc, 1.0) == pytest.approx(1.5)


def test_tau_errors_and_absorption():
    sc = ScalingSequence(1.0)
    p = _path([0.0, 1.0], [4, 1], [4.0, 0.0], horizon=2.0)
    assert math.isinf(time_change_tau_n(p, sc, 3.0))
    live = _path([0.0], [4], [4.0], horizon=2.0)
    with pytest.raises(HorizonTooShort):
        time_change_tau_n(live, sc, 2.5)
    with pytest.raises(DomainError):
        time_change_tau_n(live, sc, -1.0)


def test_tau_exactness_on_simulated_path():
    sc = ScalingSequence(2.0)
    path = simulate_embedded(BesselWalk(3), sc, 40, 0.5, rng=8)
    u, c, speed = accumulated_clock(path, sc)
    for t in np.linspace(0, 0.99 * c[-1], 25):
        tau = time_change_tau_n(path, sc, t)
        i = int(np.searchsorted(u, tau, side="right")) - 1
        back = c[i] + (tau - u[i]) * speed[i]
        assert back == pytest.approx(t, abs=1e-12)


def test_jump_chain_and_holding_times():
    from scipy.stats import chi2

    sc = ScalingSequence(2.0)
    kern = BesselWalk(3)
    from_j, down, holds = [], [], []
    seed = 0
    while sum(len(f) for f in from_j) < 100_000:
        path = simulate_embedded(kern, sc, 30, 200.0, rng=seed)
        s = path.states
        from_j.append(s[:-1])
        down.append(np.diff(s) == -1)
        holds.append(np.diff(path.times) * sc(s[:-1]))
        seed += 1
    from_j, down, holds = map(np.concatenate, (from_j, down, holds))
    # chi-square of down/up counts per visited state against p_{j, j-1}
    stat, dof = 0.0, 0
    for j in np.unique(from_j):
        sel = from_j == j
        m = int(sel.sum())
        q = 1 - kern.up_probability(int(j))
        if m * min(q, 1 - q) < 5:
            continue
        obs = int(down[sel].sum())
        stat += (obs - m * q) ** 2 / (m * q * (1 - q))
        dof += 1
    assert dof >= 20 and chi2.sf(stat, dof) > 1e-3
    d, p = ks_one_sample(holds, lambda x: 1 - math.exp(-x))
    assert d < ks_critical(len(holds), 1e-3)


def test_state_at():
    p = _path([0.0, 1.0, 2.0], [4, 5, 3], [4.0, 5.0, 3.0])
    assert state_at(p, 0.5) == 4 and state_at(p, 1.0) == 5 and state_at(p, math.inf) == 3


def test_coupling_t0_and_bessel():
    cs = coupling_marginals(BesselWalk(3), ScalingSequence(2.0), 100, [0.0, 0.1], 2000, rng=4)
    assert np.all(cs.clock_side[:, 0] == 1.0) and np.all(cs.embedded_side[:, 0] == 1.0)
    d, _ = ks_two_sample(cs.clock_side[:, 1], cs.embedded_side[:, 1])
    assert d < ks_critical(1000.0, 0.01)


def test_coupling_down_walk_closed_form(tmp_path):
    # both sides are (n - N)/n with N ~ Poisson(n t) capped at n - 1
    from scipy.stats import poisson

    n, t = 20, 0.3
    cs = coupling_marginals(DownWalk(), ScalingSequence(1.0), n, [t, 5.0], 3000, rng=6)
    for side in (cs.clock_side[:, 0], cs.embedded_side[:, 0]):
        steps = np.round(n - side * n).astype(int)
        emp = np.bincount(steps, minlength=n)[: n - 1] / side.size
        exact = poisson.pmf(np.arange(n - 1), n * t)
        assert np.max(np.abs(emp - exact)) < 0.03
    assert np.all(cs.clock_side[:, 1] == 1 / n) and np.all(cs.embedded_side[:, 1] == 1 / n)
    f = tmp_path / "c.csv"
    cs.to_csv(f)
    assert f.read_text().splitlines()[0] == "replica,t,poisson_clock,time_changed"
