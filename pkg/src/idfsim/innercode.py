"""Explicit inner transmission code for the Gaussian MAC.

Senders transmit in disjoint time slots (TDMA). A message w in 1..M_k is
written as one or more PAM symbols, each repeated ``reps_k`` times; the
decoder averages repetitions and picks the nearest level.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationFailure, InvalidArgument
from .stats import ErrorEstimate, wilson_interval

BLOCK_TRIALS = 4096


@dataclass(frozen=True)
class InnerCodeConfig:
    """Inner code parameters.

    ``bits_per_symbol=None`` sends each message as a single M_k-level
    symbol; an integer b splits it into base-2**b digits. ``offset`` is
    subtracted from every received sample before decoding (the known state
    mean, when compensating). ``sigma2`` is the channel noise variance.
    """

    K: int
    M: tuple
    reps: tuple
    p_use: float
    sigma2: float
    bits_per_symbol: int | None = None
    offset: float = 0.0

    def __post_init__(self):
        M = tuple(int(v) for v in np.atleast_1d(self.M))
        reps = tuple(int(v) for v in np.atleast_1d(self.reps))
        if len(M) != self.K or len(reps) != self.K:
            raise InvalidArgument("M and reps need one entry per sender")
        if any(v < 2 for v in M):
            raise InvalidArgument("every M_k must be >= 2")
        if any(r < 1 for r in reps):
            raise InvalidArgument("reps must be positive")
        if self.bits_per_symbol is not None and self.bits_per_symbol < 1:
            raise InvalidArgument("bits_per_symbol must be positive")
        if self.sigma2 < 0:
            raise InvalidArgument("sigma2 must be nonnegative")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "reps", reps)

    def levels(self, k):
        """Constellation size for sender index k (0-based)."""
        if self.bits_per_symbol is None:
            return self.M[k]
        return min(1 << self.bits_per_symbol, self.M[k])

    def symbols(self, k):
        q = self.levels(k)
        n, cap = 1, q
        while cap < self.M[k]:
            n += 1
            cap *= q
        return n

    def slot_lengths(self):
        return tuple(self.reps[k] * self.symbols(k) for k in range(self.K))

    @property
    def n_inner(self):
        return sum(self.slot_lengths())

    @property
    def m(self):
        """Block length including the leading common-randomness use."""
        return self.n_inner + 1


def peak_to_mean(levels):
    """Peak over mean power of a uniform symmetric PAM constellation."""
    return 3.0 * (levels - 1) / (levels + 1)


def max_compliant_p_use(config, power):
    """Largest per-use constellation power keeping every codeword legal.

    The worst codeword of sender k puts the outer level in all of its
    slot uses; the leading zero and the silent slots count toward the
    m-use average, so this exceeds p_total.
    """
    m = config.m
    best = math.inf
    for k, slot in enumerate(config.slot_lengths()):
        q = config.levels(k)
        best = min(best, m * power.p_total / (slot * peak_to_mean(q)))
        if power.p_peak is not None:
            best = min(best, power.p_peak ** 2 * (q * q - 1) / (3.0 * (q - 1) ** 2))
    return best


@dataclass(frozen=True)
class InnerCodebook:
    config: InnerCodeConfig
    slot_start: tuple
    slot_end: tuple
    amplitudes: tuple = field(repr=False)

    @property
    def n_inner(self):
        return self.config.n_inner

    @property
    def K(self):
        return self.config.K

    def spacing(self, k):
        a = self.amplitudes[k]
        return a[1] - a[0]

    def encode_many(self, ws, sender):
        """Codewords (len(ws), n_inner) for messages ``ws`` of a 1-based sender."""
        k = sender - 1
        cfg = self.config
        if not 0 <= k < cfg.K:
            raise InvalidArgument("sender outside 1..K")
        ws = np.asarray(ws, dtype=np.int64).reshape(-1)
        if np.any(ws < 1) or np.any(ws > cfg.M[k]):
            raise InvalidArgument("message outside 1..M_k")
        q, nsym, r = cfg.levels(k), cfg.symbols(k), cfg.reps[k]
        amp = np.asarray(self.amplitudes[k])
        digits = np.empty((ws.shape[0], nsym), dtype=np.int64)
        rest = ws - 1
        for j in range(nsym - 1, -1, -1):
            digits[:, j] = rest % q
            rest //= q
        out = np.zeros((ws.shape[0], cfg.n_inner))
        out[:, self.slot_start[k]:self.slot_end[k]] = np.repeat(amp[digits], r, axis=1)
        return out

    def decode_many(self, y):
        """Nearest-level decoding of received blocks (n, n_inner) -> (n, K)."""
        cfg = self.config
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[None, :]
        if y.shape[1] != cfg.n_inner:
            raise InvalidArgument("received block length differs from n_inner")
        y = y - cfg.offset
        out = np.empty((y.shape[0], cfg.K), dtype=np.int64)
        for k in range(cfg.K):
            q, nsym, r = cfg.levels(k), cfg.symbols(k), cfg.reps[k]
            seg = y[:, self.slot_start[k]:self.slot_end[k]].reshape(y.shape[0], nsym, r)
            avg = seg.mean(axis=2)
            a0 = self.amplitudes[k][0]
            t = (avg - a0) / self.spacing(k)
            # Nearest level; an exact midpoint rounds down to the smaller index.
            idx = np.clip(np.ceil(t - 0.5), 0, q - 1).astype(np.int64)
            w = np.zeros(y.shape[0], dtype=np.int64)
            for j in range(nsym):
                w = w * q + idx[:, j]
            out[:, k] = np.minimum(w + 1, cfg.M[k])
        return out


def build_codebook(config):
    if not config.p_use > 0:
        raise InvalidArgument("p_use must be positive")
    starts, ends, amps = [], [], []
    pos = 0
    for k, slot in enumerate(config.slot_lengths()):
        starts.append(pos)
        pos += slot
        ends.append(pos)
        q = config.levels(k)
        a = math.sqrt(3.0 * config.p_use / (q * q - 1))
        amps.append(tuple(a * (2 * j - (q - 1)) for j in range(q)))
    return InnerCodebook(config, tuple(starts), tuple(ends), tuple(amps))


def encode_inner(w, sender, codebook):
    return codebook.encode_many([w], sender)[0]


def decode_inner(y, codebook):
    """Decoded message tuple (1-based messages) for one received block."""
    return tuple(int(v) for v in codebook.decode_many(np.asarray(y, dtype=float))[0])


def codebook_to_csv(codebook, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sender", "slot_start", "slot_end", "level_index", "amplitude"])
        for k in range(codebook.K):
            for j, a in enumerate(codebook.amplitudes[k]):
                w.writerow([k + 1, codebook.slot_start[k] + 1, codebook.slot_end[k], j + 1, repr(a)])


class _Noise:
    def __init__(self, K, sigma2):
        self.K = K
        self.sigma2 = sigma2


def _blocks(trials, size=BLOCK_TRIALS):
    for b, start in enumerate(range(0, trials, size)):
        yield b, min(size, trials - start)


def inner_error_counts(codebook, trials, rng, state=None, messages=None):
    """Per-sender decoding error counts and the messages used.

    Trials run in blocks of BLOCK_TRIALS, block b drawing from
    ``rng.substream(b)`` with the same layout as a full feedback session
    (noise, then states, over m = n_inner + 1 uses), so a session and this
    estimate on one stream see identical disturbances.
    """
    from .channel import draw_disturbance, summed_state

    cfg = codebook.config
    params = _Noise(cfg.K, cfg.sigma2)
    m = cfg.m
    errors = np.zeros(cfg.K, dtype=np.int64)
    used = []
    start = 0
    for b, n in _blocks(trials):
        sub = rng.substream(b)
        z, s = draw_disturbance(sub, n, m, params, state)
        if messages is None:
            ws = np.stack([sub.gen.integers(1, cfg.M[k] + 1, size=n) for k in range(cfg.K)], axis=1)
        else:
            ws = np.asarray(messages[start:start + n], dtype=np.int64).reshape(n, cfg.K)
        x = sum(codebook.encode_many(ws[:, k], k + 1) for k in range(cfg.K))
        # Same summation order as the session engine: inputs, states, noise.
        if s is not None:
            x = x + summed_state(s)[:, 1:]
        y = x + z[:, 1:]
        errors += np.count_nonzero(codebook.decode_many(y) != ws, axis=0)
        used.append(ws)
        start += n
    return errors, np.concatenate(used, axis=0)


def estimate_inner_error(codebook, trials, rng, state=None, messages=None):
    """Monte Carlo symbol-error rate per sender with Wilson 95% intervals.

    Messages are uniform unless given. With a state law the states are
    drawn per use and the decoder sees them as extra noise.
    """
    if trials < 1:
        raise InvalidArgument("trials must be positive")
    errors, _ = inner_error_counts(codebook, trials, rng, state, messages)
    return [ErrorEstimate.from_counts(e, trials) for e in errors]


@dataclass
class CalibrationResult:
    config: InnerCodeConfig
    estimates: list
    history: list

    @property
    def epsilon_upper(self):
        return tuple(e.ci_high for e in self.estimates)


def predicted_symbol_error(config, k, extra_variance=0.0):
    """Closed-form message error of sender index k under Gaussian disturbance.

    Averaging reps samples leaves Gaussian noise of variance
    (sigma2 + extra_variance) / reps on each PAM symbol; digits err
    independently.
    """
    from .gaussmath import std_normal_cdf

    q, nsym, r = config.levels(k), config.symbols(k), config.reps[k]
    var = (config.sigma2 + extra_variance) / r
    if var == 0.0:
        return 0.0
    half = math.sqrt(3.0 * config.p_use / (q * q - 1))
    p_sym = 2.0 * (1.0 - 1.0 / q) * (1.0 - std_normal_cdf(half / math.sqrt(var)))
    return 1.0 - (1.0 - p_sym) ** nsym


def _first_true(pred, lo, cap):
    """Smallest r in (lo, cap] with pred(r), assuming pred is monotone and
    pred(lo) is false. Gallops up from lo, then bisects. None if none."""
    step = 1
    hi = lo + 1
    while not pred(hi):
        lo = hi
        if hi >= cap:
            return None
        hi = min(cap, lo + step)
        step *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def calibrate(targets, skeleton, trials, rng, power=None, state=None, max_reps=4096,
              analytic_seed=True):
    """Smallest reps per sender whose upper 95% error limit meets its target.

    If ``skeleton.p_use`` is None the per-use power is recomputed for every
    candidate as :func:`max_compliant_p_use` under ``power``. The search
    starts from the closed-form estimate (or ``skeleton.reps``), raises
    failing senders until every sender passes, then lowers each sender while
    all still pass; growing one slot lengthens the block and so relaxes the
    others' power. Every verdict comes from the Monte Carlo upper limit,
    each candidate scored on a fresh copy of ``rng``.
    """
    K = skeleton.K
    targets = tuple(float(t) for t in np.broadcast_to(np.asarray(targets, dtype=float), (K,)))
    if any(not 0 < t < 0.5 for t in targets):
        raise InvalidArgument("epsilon targets must lie in (0, 0.5)")
    auto_power = skeleton.p_use is None
    if auto_power and power is None:
        raise InvalidArgument("a power constraint is needed when p_use is not fixed")
    floor = wilson_interval(0, trials)[1]
    if min(targets) < floor:
        raise CalibrationFailure(
            f"target below the Monte Carlo resolution of {trials} trials", (floor,) * K, None)
    extra = 0.0 if state is None else state.total_variance()
    history = []
    cache = {}

    def make(reps):
        cfg = replace(skeleton, reps=tuple(reps), p_use=skeleton.p_use or 1.0)
        if auto_power:
            cfg = replace(cfg, p_use=max_compliant_p_use(cfg, power))
        return cfg

    def score(reps):
        key = tuple(reps)
        if key not in cache:
            cfg = make(reps)
            est = estimate_inner_error(build_codebook(cfg), trials, rng.fresh(), state)
            cache[key] = (cfg, est)
            history.append({"reps": list(key), "p_use": cfg.p_use,
                            "p_hat": [e.p_hat for e in est], "ci_high": [e.ci_high for e in est]})
        return cache[key]

    def with_rep(reps, k, r):
        out = list(reps)
        out[k] = r
        return out

    def ok(reps, k):
        return score(reps)[1][k].ci_high <= targets[k]

    def all_ok(reps):
        return all(ok(reps, k) for k in range(K))

    def fail(msg):
        best = min(cache.values(), key=lambda cv: max(e.ci_high for e in cv[1]))
        raise CalibrationFailure(msg, tuple(e.ci_high for e in best[1]), best[0].reps)

    reps = [max(1, min(int(r), max_reps)) for r in skeleton.reps]
    if analytic_seed:
        changed = True
        while changed:
            changed = False
            for k in range(K):
                pred = lambda r, k=k: predicted_symbol_error(
                    make(with_rep(reps, k, r)), k, extra) <= targets[k]
                r = 1 if pred(1) else _first_true(pred, 1, max_reps)
                if r is not None and r != reps[k]:
                    reps[k] = r
                    changed = True

    while not all_ok(reps):
        for k in range(K):
            if not ok(reps, k):
                r = _first_true(lambda r, k=k: ok(with_rep(reps, k, r), k), reps[k], max_reps)
                if r is None:
                    fail("reps budget exhausted before reaching the target")
                reps[k] = r

    changed = True
    while changed:
        changed = False
        for k in range(K):
            if reps[k] > 1 and all_ok(with_rep(reps, k, reps[k] - 1)):
                reps[k] = _first_true(lambda r, k=k: all_ok(with_rep(reps, k, r)), 0, reps[k] - 1)
                changed = True
    cfg, est = score(reps)
    return CalibrationResult(cfg, est, history)
