"""Counter-based random streams.

Every draw is a pure function of ``(device_key, stream, counter)``, so a
device's random numbers do not depend on how many devices exist, on thread
scheduling, or on which other draws were made before it.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_MULT = np.uint64(0xD6E8FEB86659FD93)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_UNIT = 1.0 / 9007199254740992.0  # 2**-53

# stream identifiers
PERTURB_PHYSICAL = 1
PERTURB_CONTROL = 2
INIT_STATE = 3
SWITCH = 4
SKIP = 5
DOOR = 6


@njit(cache=True)
def mix64(x):
    """splitmix64 finaliser (wrapping uint64 arithmetic)."""
    x = np.uint64(x)
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


@njit(cache=True)
def device_key(seed, index):
    return mix64(mix64(np.uint64(seed) + _GOLDEN) + np.uint64(index) * _GOLDEN)


@njit(cache=True)
def uniform(key, stream, counter):
    """Uniform draw on the half-open interval (0, 1]."""
    h = mix64(key ^ mix64(np.uint64(stream) * _STREAM_MULT + np.uint64(counter) * _GOLDEN))
    return (float(h >> _S11) + 1.0) * _UNIT


@njit(cache=True)
def device_keys(seed, n):
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = device_key(seed, i)
    return out


@njit(cache=True)
def uniforms(keys, stream, counter):
    out = np.empty(keys.shape[0])
    for i in range(keys.shape[0]):
        out[i] = uniform(keys[i], stream, counter)
    return out
