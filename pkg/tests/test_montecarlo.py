import csv

import numpy as np
import pytest

from ssmc.errors import AllCensored, CensoringBias, DomainError
from ssmc.montecarlo import ExperimentPlan, moment_summary, run_absorption, run_limit_marginals, run_marginals
from ssmc.levy import LevyTriplet


def _plan(**kw):
    base = dict(kernel={"family": "bessel", "d": 3}, scaling={"gamma": 2}, starts=[40], replicas=400, seed=3)
    base.update(kw)
    return ExperimentPlan(**base)


def test_down_walk_absorption_is_deterministic():
    plan = ExperimentPlan(kernel={"family": "downwalk"}, scaling={"gamma": 1}, starts=[100], replicas=50)
    s = run_absorption(plan)
    assert np.all(s.absorption == 99) and not s.censored.any()
    m = moment_summary(s, 1.0)
    assert m.estimate == pytest.approx(0.99) and m.half_width == 0.0


def test_reproducible_across_thread_counts():
    a = run_absorption(_plan(threads=1))
    b = run_absorption(_plan(threads=4))
    assert np.array_equal(a.absorption, b.absorption)
    assert np.array_equal(a.keys, b.keys)


def test_replica_prefix_is_stable():
    # replica r depends only on (seed, r), not on how many replicas run
    small = run_absorption(_plan(replicas=50))
    big = run_absorption(_plan(replicas=400))
    assert np.array_equal(small.absorption, big.absorption[:50])


def test_censoring_grows_as_cap_shrinks():
    fracs = [run_absorption(_plan(cap_multiple=c)).censored_fraction for c in (5.0, 0.5, 0.1)]
    assert fracs[0] <= fracs[1] <= fracs[2]
    assert fracs[2] > 0.5


def test_censored_mean_grows_with_cap():
    means = [run_absorption(_plan(cap_multiple=c)).scaled_absorption().mean() for c in (0.1, 0.5, 2.0, 50.0)]
    assert np.all(np.diff(means) >= 0)


def test_censored_replicas_sit_at_cap():
    s = run_absorption(_plan(cap_multiple=0.2))
    assert np.all(s.absorption[s.censored] == s.cap)
    assert np.all(s.absorption[~s.censored] <= s.cap)


def test_moment_summary_flags_censoring():
    s = run_absorption(_plan(cap_multiple=0.2))
    with pytest.raises(CensoringBias):
        moment_summary(s, 1.0)
    m = moment_summary(s, 1.0, max_censored=1.0)
    assert m.lower_bound and m.censored_fraction == s.censored_fraction
    with pytest.raises(DomainError):
        moment_summary(s, -1.0, max_censored=1.0)


def test_all_censored():
    with pytest.raises(AllCensored):
        run_absorption(_plan(starts=[200], cap_multiple=1e-3))


def test_bessel_mean_ratio_rough():
    s = run_absorption(_plan(starts=[60], replicas=2000))
    m = moment_summary(s, 1.0)
    lo, hi = m.interval
    assert lo - 0.03 < 0.5 < hi + 0.03


def test_marginals_shape_order_and_t0():
    plan = _plan(t_list=[0.3, 0.0, 0.1])
    s = run_marginals(plan)
    assert s.marginals.shape == (400, 3)
    assert np.all(s.marginals[:, 1] == 1.0)
    # unsorted t_list keeps its column order
    again = run_marginals(_plan(t_list=[0.0, 0.1, 0.3]))
    assert np.array_equal(s.marginals[:, [1, 2, 0]], again.marginals)


def test_stopped_and_unstopped_agree_before_absorption():
    plan = _plan(t_list=[0.02, 0.05])
    a = run_marginals(plan, stopped=True)
    b = run_marginals(plan, stopped=False)
    steps = np.floor(a.a_n * np.array(plan.t_list) + 1e-9)
    alive = ~a.censored[:, None] & (a.absorption[:, None] > steps) | a.censored[:, None]
    assert np.array_equal(a.marginals[alive], b.marginals[alive])


def test_plan_json_round_trip():
    plan = _plan(t_list=[0.1])
    again = ExperimentPlan.from_json(plan.to_json())
    assert again == plan
    with pytest.raises(DomainError):
        _plan(replicas=0)
    with pytest.raises(DomainError):
        _plan(t_list=[-0.1])


def test_csv_layout(tmp_path):
    s = run_absorption(_plan(replicas=5))
    f = tmp_path / "a.csv"
    s.to_csv(f)
    rows = list(csv.reader(f.open()))
    assert rows[0] == ["replica", "quantity", "value", "censored", "seed"]
    assert len(rows) == 6 and rows[1][1] == "A"


def test_limit_marginals_wrapper():
    trip = LevyTriplet(b=-1.0)
    s = run_limit_marginals(trip, 1.0, [0.0, 0.5], 20, rng=2)
    # deterministic drift -1 gives Y(t) = 1 - t
    assert np.allclose(s.marginals[:, 0], 1.0) and np.allclose(s.marginals[:, 1], 0.5, atol=1e-6)
