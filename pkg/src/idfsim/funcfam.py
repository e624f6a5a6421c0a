"""Identity-indexed random function families F_{k,i}: {1..L} -> {1..M_k}.

Families are never stored. Each function is a keyed pseudorandom function
of (master seed, sender, 128-bit identity, l), so any identity can be
evaluated on demand and identities can be sampled uniformly from the full
index space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SALT = np.uint64(0xD6E8FEB86659FD93)
_S30, _S27, _S31, _S32 = (np.uint64(v) for v in (30, 27, 31, 32))


def _mix64(z):
    # SplitMix64 finalizer; bijective on 64-bit words.
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@dataclass(frozen=True)
class FamilyConfig:
    L: int
    M: tuple

    def __post_init__(self):
        M = tuple(int(v) for v in np.atleast_1d(self.M))
        if int(self.L) != self.L or self.L < 1:
            raise InvalidArgument("L must be a positive integer")
        if not M:
            raise InvalidArgument("M must list one message count per sender")
        if any(v < 2 for v in M):
            raise InvalidArgument("every M_k must be >= 2")
        if any(v > 1 << 32 for v in M):
            raise InvalidArgument("M_k above 2**32 is not supported")
        object.__setattr__(self, "M", M)

    @property
    def K(self):
        return len(self.M)


@dataclass(frozen=True)
class FamilyKey:
    master_seed: int
    sender: int
    identity: int

    def __post_init__(self):
        if not 0 <= self.identity < 1 << 128:
            raise InvalidArgument("identity must be a 128-bit index")
        if self.sender < 1:
            raise InvalidArgument("sender is 1-based")


def split_identities(identities):
    """Low and high 64-bit halves of 128-bit identity integers."""
    ids = [int(i) for i in np.atleast_1d(np.asarray(identities, dtype=object))]
    lo = np.array([i & _MASK64 for i in ids], dtype=np.uint64)
    hi = np.array([i >> 64 for i in ids], dtype=np.uint64)
    return lo, hi


def join_identities(lo, hi):
    return [int(h) << 64 | int(l) for l, h in zip(lo, hi)]


def sample_identities(rng, n):
    """n identities drawn uniformly from [0, 2**128), as Python ints."""
    lo = rng.gen.integers(0, 1 << 64, size=n, dtype=np.uint64, endpoint=False)
    hi = rng.gen.integers(0, 1 << 64, size=n, dtype=np.uint64, endpoint=False)
    return join_identities(lo, hi)


def family_keys(master_seed, sender, lo, hi):
    """64-bit PRF keys for arrays of identity halves."""
    with np.errstate(over="ignore"):
        base = _mix64(np.uint64(master_seed & _MASK64) + _GOLDEN * np.uint64(sender))
        k = _mix64((np.asarray(lo, dtype=np.uint64) + _SALT) ^ base)
        return _mix64(k ^ (np.asarray(hi, dtype=np.uint64) * _GOLDEN + base))


def family_values(keys, l, M):
    """F(l) in 1..M for PRF keys broadcast against cell indices l."""
    keys = np.asarray(keys, dtype=np.uint64)
    l = np.asarray(l, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64(keys ^ _mix64(l * _GOLDEN + _SALT))
        h = _mix64(h + keys)
        top = h >> _S32
        return ((top * np.uint64(M)) >> _S32).astype(np.int64) + 1


def _key_of(key):
    lo, hi = split_identities([key.identity])
    return family_keys(key.master_seed, key.sender, lo, hi)[0]


def _check_sender(key, config):
    if not 1 <= key.sender <= config.K:
        raise InvalidArgument("sender outside 1..K")


def eval_family(key, l, config):
    """F_{sender, identity}(l); ``l`` may be a scalar or an array."""
    _check_sender(key, config)
    arr = np.asarray(l)
    if np.any(arr < 1) or np.any(arr > config.L):
        raise InvalidArgument("l must lie in 1..L")
    out = family_values(_key_of(key), arr, config.M[key.sender - 1])
    return int(out) if arr.ndim == 0 else out


def _chunks(L, chunk):
    for start in range(1, L + 1, chunk):
        yield np.arange(start, min(start + chunk, L + 1), dtype=np.uint64)


def collision_count(key_a, key_b, config, chunk=1 << 20):
    """|{l : F_a(l) = F_b(l)}| over the whole domain, scanned in chunks."""
    if key_a.sender != key_b.sender:
        raise InvalidArgument("collision_count compares functions of one sender")
    if key_a.master_seed != key_b.master_seed:
        raise InvalidArgument("keys belong to different families")
    if key_a.identity == key_b.identity:
        raise InvalidArgument("identical identities collide everywhere")
    _check_sender(key_a, config)
    M = config.M[key_a.sender - 1]
    ka, kb = _key_of(key_a), _key_of(key_b)
    total = 0
    for ls in _chunks(config.L, chunk):
        total += int(np.count_nonzero(family_values(ka, ls, M) == family_values(kb, ls, M)))
    return total


def collision_counts(master_seed, sender, ids_a, ids_b, config, block=1 << 22):
    """Vectorized :func:`collision_count` over many identity pairs."""
    lo_a, hi_a = split_identities(ids_a)
    lo_b, hi_b = split_identities(ids_b)
    if np.any((lo_a == lo_b) & (hi_a == hi_b)):
        raise InvalidArgument("identical identities collide everywhere")
    ka = family_keys(master_seed, sender, lo_a, hi_a)
    kb = family_keys(master_seed, sender, lo_b, hi_b)
    M = config.M[sender - 1]
    out = np.zeros(len(ka), dtype=np.int64)
    rows = max(1, block // config.L) if config.L <= block else 1
    chunk = min(config.L, block)
    for r0 in range(0, len(ka), rows):
        a = ka[r0:r0 + rows, None]
        b = kb[r0:r0 + rows, None]
        for ls in _chunks(config.L, chunk):
            out[r0:r0 + rows] += np.count_nonzero(
                family_values(a, ls[None, :], M) == family_values(b, ls[None, :], M), axis=1)
    return out


class FourSets(NamedTuple):
    same_distinguished: int
    same_others: int
    differ_distinguished: int
    differ_others: int


def partition_four_sets(keys_i, keys_j, config, distinguished_sender):
    """Sizes of the four cell sets splitting agreement of sender k from the rest.

    ``same_others`` counts cells where every non-distinguished sender's
    function agrees pointwise (all cells when K = 1).
    """
    if len(keys_i) != config.K or len(keys_j) != config.K:
        raise InvalidArgument("identity tuples must cover all K senders")
    k = distinguished_sender
    if not 1 <= k <= config.K:
        raise InvalidArgument("distinguished sender outside 1..K")
    ls = np.arange(1, config.L + 1, dtype=np.uint64)
    same_k = None
    same_rest = np.ones(config.L, dtype=bool)
    for s, (a, b) in enumerate(zip(keys_i, keys_j), start=1):
        if a.sender != s or b.sender != s:
            raise InvalidArgument("tuple position and key sender disagree")
        eq = family_values(_key_of(a), ls, config.M[s - 1]) == family_values(_key_of(b), ls, config.M[s - 1])
        if s == k:
            same_k = eq
        else:
            same_rest &= eq
    n_k = int(np.count_nonzero(same_k))
    n_rest = int(np.count_nonzero(same_rest))
    return FourSets(n_k, n_rest, config.L - n_k, config.L - n_rest)
