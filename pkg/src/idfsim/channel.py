"""Gaussian multiple-access channel, with and without additive Gaussian
states, driven by a strictly causal noiseless feedback session engine."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, SessionAbort
from .gaussmath import cholesky, validate_covariance

POWER_SLACK = 1e-9


@dataclass(frozen=True)
class ChannelParams:
    K: int
    sigma2: float

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise InvalidArgument("K must be a positive integer")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise InvalidArgument("sigma2 must be positive")


@dataclass(frozen=True)
class StateParams:
    mu: tuple
    sigma: tuple

    def __post_init__(self):
        mu = tuple(float(v) for v in np.asarray(self.mu, dtype=float).reshape(-1))
        sig = validate_covariance(self.sigma)
        if sig.shape[0] != len(mu):
            raise InvalidArgument("state mean and covariance dimensions differ")
        cholesky(sig)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", tuple(tuple(float(v) for v in row) for row in sig))

    @property
    def K(self):
        return len(self.mu)

    @property
    def mu_array(self):
        return np.array(self.mu)

    @property
    def sigma_array(self):
        return np.array(self.sigma)

    def total_mean(self):
        return float(sum(self.mu))

    def total_variance(self):
        """Variance of the summed state, 1^T Sigma 1."""
        return float(np.sum(self.sigma_array))


@dataclass(frozen=True)
class PowerConstraint:
    p_total: float
    p_peak: float | None = None

    def __post_init__(self):
        if not self.p_total > 0:
            raise InvalidArgument("p_total must be positive")
        if self.p_peak is not None and not self.p_peak > 0:
            raise InvalidArgument("p_peak must be positive when set")


@dataclass(frozen=True)
class PowerReport:
    passed: bool
    energy: float
    budget: float
    peak: float
    violating_index: int | None = None
    violation: str | None = None


def check_power(codeword, constraint):
    """Average (and optional peak) power check of one length-m codeword.

    On failure the report names the first offending index: the use at
    which cumulative energy passes the budget, or the first over-peak use.
    """
    x = np.asarray(codeword, dtype=float).reshape(-1)
    m = x.shape[0]
    energy = float(np.sum(x * x))
    budget = m * constraint.p_total
    peak = float(np.max(np.abs(x))) if m else 0.0
    if energy > budget + POWER_SLACK:
        idx = int(np.argmax(np.cumsum(x * x) > budget + POWER_SLACK))
        return PowerReport(False, energy, budget, peak, idx, "average")
    if constraint.p_peak is not None and peak > constraint.p_peak:
        idx = int(np.argmax(np.abs(x) > constraint.p_peak))
        return PowerReport(False, energy, budget, peak, idx, "peak")
    return PowerReport(True, energy, budget, peak)


def count_power_violations(codewords, constraint):
    """Number of rows (last axis = time) failing :func:`check_power`."""
    x = np.asarray(codewords, dtype=float)
    m = x.shape[-1]
    bad = np.sum(x * x, axis=-1) > m * constraint.p_total + POWER_SLACK
    if constraint.p_peak is not None:
        bad |= np.max(np.abs(x), axis=-1) > constraint.p_peak
    return int(np.count_nonzero(bad))


def gmac_step(inputs, noise):
    x = np.asarray(inputs, dtype=float)
    if not (np.all(np.isfinite(x)) and math.isfinite(noise)):
        raise InvalidArgument("gmac_step requires finite inputs")
    return float(np.sum(x) + noise)


def sd_gmac_step(inputs, state, noise):
    x = np.asarray(inputs, dtype=float).reshape(-1)
    s = np.asarray(state, dtype=float).reshape(-1)
    if x.shape != s.shape:
        raise InvalidArgument("inputs and state must both have length K")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s)) and math.isfinite(noise)):
        raise InvalidArgument("sd_gmac_step requires finite inputs")
    return float(np.sum(x) + np.sum(s) + noise)


def draw_disturbance(rng, trials, m, params, state=None):
    """Noise (trials, m) and, if a state law is given, states (trials, m, K).

    Noise is drawn before states so that a stateless and a state-dependent
    run on the same stream see identical noise.
    """
    z = rng.gen.standard_normal((trials, m)) * math.sqrt(params.sigma2)
    if state is None:
        return z, None
    if state.K != params.K:
        raise InvalidArgument("state dimension differs from the number of senders")
    a = cholesky(state.sigma_array)
    g = rng.gen.standard_normal((trials, params.K, m))
    s = np.empty_like(g)
    for i in range(params.K):
        s[:, i, :] = state.mu[i]
        for j in range(i + 1):
            if a[i, j] != 0.0:
                s[:, i, :] += a[i, j] * g[:, j, :]
    # Stored sender-major; exposed as (trials, m, K).
    return z, s.transpose(0, 2, 1)


def summed_state(s):
    """Per-use total state, (trials, m), from a (trials, m, K) state array."""
    base = s.transpose(0, 2, 1)
    total = base[:, 0, :].copy()
    for i in range(1, base.shape[1]):
        total += base[:, i, :]
    return total


@dataclass
class BatchTranscript:
    """``trials`` independent sessions; x is (trials, K, m), y is (trials, m)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray | None = None

    @property
    def trials(self):
        return self.y.shape[0]

    @property
    def m(self):
        return self.y.shape[1]

    def session(self, i):
        s = None if self.s is None else self.s[i].T.copy()
        return Transcript(self.x[i].copy(), self.y[i].copy(), self.z[i].copy(), s)


@dataclass
class Transcript:
    x: np.ndarray  # (K, m)
    y: np.ndarray  # (m,)
    z: np.ndarray  # (m,)
    s: np.ndarray | None = None  # (K, m)

    @property
    def K(self):
        return self.x.shape[0]

    @property
    def m(self):
        return self.y.shape[0]

    def to_csv(self, path_or_file):
        header = ["t", "y"] + [f"x_{k + 1}" for k in range(self.K)]
        if self.s is not None:
            header += [f"s_{k + 1}" for k in range(self.K)]
        rows = []
        for t in range(self.m):
            row = [t + 1, repr(float(self.y[t]))]
            row += [repr(float(v)) for v in self.x[:, t]]
            if self.s is not None:
                row += [repr(float(v)) for v in self.s[:, t]]
            rows.append(row)
        _write_rows(path_or_file, header, rows)


def _write_rows(path_or_file, header, rows):
    if hasattr(path_or_file, "write"):
        w = csv.writer(path_or_file, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_rows(fh, header, rows)


def run_feedback_batch(encoders, m, params, rng, trials, state=None, disturbance=None):
    """Run ``trials`` sessions of length m in lockstep.

    Each encoder is called as ``enc(t, y_past)`` for t = 1..m, where
    ``y_past`` is a read-only (trials, t-1) view of the outputs so far, and
    must return one symbol per trial (a scalar broadcasts). All senders see
    the identical prefix.
    """
    if len(encoders) != params.K:
        raise InvalidArgument("need exactly one encoder per sender")
    if m < 1:
        raise InvalidArgument("m must be positive")
    if disturbance is None:
        disturbance = draw_disturbance(rng, trials, m, params, state)
    z, s = disturbance
    x = np.zeros((trials, params.K, m))
    y = np.zeros((trials, m))
    s_sum = None if s is None else summed_state(s)
    for t in range(1, m + 1):
        past = y[:, : t - 1]
        past.flags.writeable = False
        for k, enc in enumerate(encoders):
            sym = np.broadcast_to(np.asarray(enc(t, past), dtype=float), (trials,))
            if not np.all(np.isfinite(sym)):
                raise SessionAbort(k + 1, t)
            x[:, k, t - 1] = sym
        col = x[:, :, t - 1].sum(axis=1)
        if s_sum is not None:
            col = col + s_sum[:, t - 1]
        y[:, t - 1] = col + z[:, t - 1]
    y.flags.writeable = False
    return BatchTranscript(x, y, z, s)


def run_feedback_session(encoders, m, params, rng, state=None):
    """Single session with scalar callbacks ``enc(t, y_past) -> float``."""

    def lift(enc):
        return lambda t, past: enc(t, past[0])

    batch = run_feedback_batch([lift(e) for e in encoders], m, params, rng, 1, state)
    return batch.session(0)
