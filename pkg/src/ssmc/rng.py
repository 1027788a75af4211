"""Counter-based uniforms shared by the numba and numpy code paths.

Every draw is a pure function of ``(key, counter)``: replica ``r`` of a run
seeded with ``master`` owns the key ``replica_keys(master, R)[r]`` and its
``i``-th uniform is ``uniform(key, i)``.  Results therefore do not depend on
the backend, on the number of workers, or on the order replicas are run in.
"""
import numpy as np

from ._accel import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def uniform(key, counter):
    """Uniform on the open interval (0, 1)."""
    z = mix64(key + (np.uint64(counter) + _ONE) * _GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _INV53


def uniform_array(keys, counter):
    """Vectorised ``uniform`` over an array of keys at a common counter."""
    with np.errstate(over="ignore"):
        z = keys + (np.uint64(counter) + _ONE) * _GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        z = z ^ (z >> _S31)
    return ((z >> _S11).astype(np.float64) + 0.5) * _INV53


def replica_keys(master_seed, count, start=0):
    """Keys for replicas ``start .. start+count-1`` of a run."""
    with np.errstate(over="ignore"):
        base = np.uint64(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
        idx = np.arange(start, start + count, dtype=np.uint64)
        z = mix64_array(base ^ np.uint64(0x5851F42D4C957F2D))
        return mix64_array(z + (idx + _ONE) * _GOLDEN)


def mix64_array(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def key_from(rng):
    """Draw a 64-bit key from an int seed or a ``numpy.random.Generator``."""
    if hasattr(rng, "key"):
        return np.uint64(rng.key)
    if isinstance(rng, np.random.Generator):
        return np.uint64(rng.integers(0, 2**63, dtype=np.int64))
    if rng is None:
        return np.uint64(np.random.default_rng().integers(0, 2**63, dtype=np.int64))
    return replica_keys(int(rng), 1)[0]
