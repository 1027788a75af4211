"""Hot loops over replicas: compiled per-replica versions and numpy lockstep versions.

Both flavours consume the counter-based uniforms of :mod:`ssmc.rng` with the
same counter layout, so they return identical arrays:

* discrete chains use counter ``i`` for step ``i``;
* clocked chains (Poisson clock, embedded chain) use ``2i`` for the ``i``-th
  holding time and ``2i + 1`` for the ``i``-th jump.

Status codes: 0 done, 1 censored / budget exhausted, 2 the row table is too
small (the caller grows it and reruns the replica).
"""
import math

import numpy as np

from ._accel import njit
from .kernels import table_draw, table_draw_array
from .rng import uniform, uniform_array

OK, CENSORED, OVERFLOW = 0, 1, 2


# ---------------------------------------------------------------------------
# absorption times


@njit
def absorb_one(off, ks, cdf, n_max, n0, stop, cap, key):
    x = n0
    if x <= stop:
        return 0, OK
    for i in range(cap):
        if x > n_max:
            return i, OVERFLOW
        x = table_draw(off, ks, cdf, x, uniform(key, i))
        if x <= stop:
            return i + 1, OK
    return cap, CENSORED


@njit
def absorb_batch_jit(off, ks, cdf, n_max, n0, stop, cap, keys, out_a, out_s):
    for r in range(keys.shape[0]):
        a, s = absorb_one(off, ks, cdf, n_max, n0, stop, cap, keys[r])
        out_a[r] = a
        out_s[r] = s


def absorb_batch_numpy(table, n0, stop, cap, keys, out_a, out_s):
    R = len(keys)
    x = np.full(R, n0, dtype=np.int64)
    out_a[:] = cap
    out_s[:] = CENSORED
    active = x > stop
    out_a[~active] = 0
    out_s[~active] = OK
    idx = np.nonzero(active)[0]
    i = 0
    while idx.size and i < cap:
        cur = x[idx]
        if cur.max() > table.n_max:
            table.ensure(2 * int(cur.max()))
        off, ks, cdf = table.arrays()
        new = table_draw_array(off, ks, cdf, cur, uniform_array(keys[idx], i))
        x[idx] = new
        hit = new <= stop
        out_a[idx[hit]] = i + 1
        out_s[idx[hit]] = OK
        idx = idx[~hit]
        i += 1


# ---------------------------------------------------------------------------
# fixed-step marginals


@njit
def marginals_one(off, ks, cdf, n_max, n0, steps, stop, key, out):
    # out[j] = state after steps[j] steps (steps sorted); returns (A or -1, status)
    x = n0
    j = 0
    m = steps.shape[0]
    absorbed = -1
    if stop > 0 and x <= stop:
        absorbed = 0
    i = 0
    while j < m:
        while j < m and steps[j] == i:
            out[j] = x
            j += 1
        if j >= m:
            break
        if absorbed >= 0:
            # stopped chain stays frozen
            while j < m:
                out[j] = x
                j += 1
            break
        if x > n_max:
            return absorbed, OVERFLOW
        x = table_draw(off, ks, cdf, x, uniform(key, i))
        i += 1
        if stop > 0 and x <= stop:
            absorbed = i
    return absorbed, OK


@njit
def marginals_batch_jit(off, ks, cdf, n_max, n0, steps, stop, keys, out, out_a, out_s):
    for r in range(keys.shape[0]):
        a, s = marginals_one(off, ks, cdf, n_max, n0, steps, stop, keys[r], out[r])
        out_a[r] = a
        out_s[r] = s


def marginals_batch_numpy(table, n0, steps, stop, keys, out, out_a, out_s):
    R = len(keys)
    x = np.full(R, n0, dtype=np.int64)
    out_a[:] = -1
    out_s[:] = OK
    if stop > 0 and n0 <= stop:
        out_a[:] = 0
    last = int(steps[-1]) if len(steps) else 0
    j = 0
    for i in range(last + 1):
        while j < len(steps) and steps[j] == i:
            out[:, j] = x
            j += 1
        if i == last:
            break
        moving = np.nonzero(out_a < 0)[0] if stop > 0 else np.arange(R)
        if moving.size == 0:
            out[:, j:] = x[:, None]
            break
        cur = x[moving]
        if cur.max() > table.n_max:
            table.ensure(2 * int(cur.max()))
        off, ks, cdf = table.arrays()
        new = table_draw_array(off, ks, cdf, cur, uniform_array(keys[moving], i))
        x[moving] = new
        if stop > 0:
            hit = moving[new <= stop]
            out_a[hit] = i + 1


# ---------------------------------------------------------------------------
# chain driven by an independent Poisson clock of constant rate


@njit
def poisson_clock_one(off, ks, cdf, n_max, n0, rate, times, key, out):
    x = n0
    clock = 0.0
    i = 0
    j = 0
    m = times.shape[0]
    while j < m:
        clock += -math.log(uniform(key, 2 * i)) / rate
        while j < m and times[j] < clock:
            out[j] = x
            j += 1
        if j >= m:
            break
        if x > n_max:
            return OVERFLOW
        x = table_draw(off, ks, cdf, x, uniform(key, 2 * i + 1))
        i += 1
    return OK


@njit
def poisson_clock_batch_jit(off, ks, cdf, n_max, n0, rate, times, keys, out, out_s):
    for r in range(keys.shape[0]):
        out_s[r] = poisson_clock_one(off, ks, cdf, n_max, n0, rate, times, keys[r], out[r])


def poisson_clock_batch_numpy(table, n0, rate, times, keys, out, out_s):
    R = len(keys)
    x = np.full(R, n0, dtype=np.int64)
    clock = np.zeros(R)
    nxt = np.zeros(R, dtype=np.int64)  # next time index still to fill
    out_s[:] = OK
    m = len(times)
    idx = np.arange(R)
    i = 0
    while idx.size:
        clock[idx] += -np.log(uniform_array(keys[idx], 2 * i)) / rate
        for _ in range(m):
            sel = idx[(nxt[idx] < m)]
            fill = sel[times[np.minimum(nxt[sel], m - 1)] < clock[sel]]
            if fill.size == 0:
                break
            out[fill, nxt[fill]] = x[fill]
            nxt[fill] += 1
        idx = idx[nxt[idx] < m]
        if idx.size == 0:
            break
        cur = x[idx]
        if cur.max() > table.n_max:
            table.ensure(2 * int(cur.max()))
        off, ks, cdf = table.arrays()
        x[idx] = table_draw_array(off, ks, cdf, cur, uniform_array(keys[idx], 2 * i + 1))
        i += 1


# ---------------------------------------------------------------------------
# embedded continuous-time chain with state-dependent rates


@njit
def embedded_one(off, ks, cdf, n_max, rates, n0, horizon, stop, key, times_out, states_out):
    """Event times and states up to ``horizon``; rate 0 at states <= stop.

    Returns ``(count, status)`` where ``count`` entries of the buffers are
    filled; status 1 means the buffers (event budget) ran out first.
    """
    x = n0
    t = 0.0
    times_out[0] = 0.0
    states_out[0] = x
    cap = times_out.shape[0]
    count = 1
    i = 0
    while True:
        if x > n_max:
            return count, OVERFLOW
        rate = rates[x] if x > stop else 0.0
        if rate <= 0.0:
            return count, OK
        t += -math.log(uniform(key, 2 * i)) / rate
        if t > horizon:
            return count, OK
        if count >= cap:
            return count, CENSORED
        x = table_draw(off, ks, cdf, x, uniform(key, 2 * i + 1))
        times_out[count] = t
        states_out[count] = x
        count += 1
        i += 1
